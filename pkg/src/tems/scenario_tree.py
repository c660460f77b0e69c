"""Scenario-tree topology and node weights.

The tree branches over the n_d = n_p * n_w_bar extreme uncertainty
realizations up to the robust horizon N_r; beyond it every leaf continues as
a single tube lane. Causality is structural: one input per node, shared by
all of its children.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import InvalidHorizon, WeightRuleViolation


@dataclass(frozen=True)
class TreeNode:
    """Node (j, k); j is 1-based within its stage. branch = (i, l) is the
    uncertainty realization that produced the node (None at the root and on
    tube-lane continuations)."""

    stage: int
    index: int
    parent: int | None          # index within the previous stage
    branch: tuple | None        # (i, l), both 1-based


@dataclass(frozen=True)
class TreeTopology:
    N_p: int
    N_r: int
    n_p: int
    n_w_bar: int
    n_d: int
    stages: tuple  # stages[k] = tuple of TreeNode, k = 0..N_p

    def nodes_at(self, k: int) -> tuple:
        return self.stages[k]

    def num_nodes_at(self, k: int) -> int:
        return len(self.stages[k])

    @property
    def num_lanes(self) -> int:
        return self.n_d ** self.N_r

    def children(self, k: int, j: int) -> list:
        """Children of node (j, k) in stage k+1 (1-based indices)."""
        if k >= self.N_p:
            return []
        if k < self.N_r:
            return [(j - 1) * self.n_d + m for m in range(1, self.n_d + 1)]
        return [j]

    def to_adjacency_json(self) -> str:
        doc = {
            "N_p": self.N_p, "N_r": self.N_r, "n_p": self.n_p,
            "n_w_bar": self.n_w_bar, "n_d": self.n_d,
            "nodes": [
                {"k": n.stage, "j": n.index, "parent": n.parent,
                 "branch": list(n.branch) if n.branch else None}
                for stage in self.stages for n in stage
            ],
        }
        return json.dumps(doc)


def topology_from_json(text: str) -> TreeTopology:
    doc = json.loads(text)
    return build_tree(doc["n_p"], doc["n_w_bar"], doc["N_p"], doc["N_r"])


def build_tree(n_p: int, n_w_bar: int, N_p: int, N_r: int) -> TreeTopology:
    """Topology with n_d^min(k, N_r) nodes at stage k.

    Children of (j, k) for k < N_r are ordered by realization: child m
    (1-based) carries branch (i, l) with i = (m-1) // n_w_bar + 1 and
    l = (m-1) % n_w_bar + 1.
    """
    if N_p < 1 or not 0 <= N_r <= N_p:
        raise InvalidHorizon(f"need N_p >= 1 and 0 <= N_r <= N_p, got N_p={N_p}, N_r={N_r}")
    if n_p < 1 or n_w_bar < 1:
        raise InvalidHorizon("need at least one vertex realization per family")
    n_d = n_p * n_w_bar
    stages = [(TreeNode(0, 1, None, None),)]
    for k in range(1, N_p + 1):
        nodes = []
        if k <= N_r:
            for parent in stages[k - 1]:
                for m in range(1, n_d + 1):
                    i = (m - 1) // n_w_bar + 1
                    l = (m - 1) % n_w_bar + 1
                    nodes.append(TreeNode(k, (parent.index - 1) * n_d + m, parent.index, (i, l)))
        else:
            for parent in stages[k - 1]:
                nodes.append(TreeNode(k, parent.index, parent.index, None))
        stages.append(tuple(nodes))
    return TreeTopology(N_p=N_p, N_r=N_r, n_p=n_p, n_w_bar=n_w_bar, n_d=n_d,
                        stages=tuple(stages))


@dataclass(frozen=True)
class WeightTable:
    """Stage-cost weights per node, following the root/branch/tube rules:
    the root weight is at most every branch weight, nodes up to N_r - 1 carry
    the weight of the realization that produced them, and tube stages carry
    n_d^(k - N_r) * omega_tube."""

    omega_root: float
    omega_branch: tuple
    omega_tube: float
    table: dict  # (j, k) -> weight, for stages 0..N_p-1

    def weight(self, k: int, j: int) -> float:
        return self.table[(j, k)]


def default_weights(topology: TreeTopology, branch_weights="uniform",
                    omega_root: float | None = None,
                    omega_tube: float | None = None) -> WeightTable:
    """Weight table for the topology; the uniform default sets every knob to 1."""
    n_d = topology.n_d
    if isinstance(branch_weights, str):
        if branch_weights != "uniform":
            raise WeightRuleViolation(f"unknown branch weight preset {branch_weights!r}")
        branch = [1.0] * n_d
    else:
        branch = [float(w) for w in branch_weights]
        if len(branch) != n_d:
            raise WeightRuleViolation(f"need {n_d} branch weights, got {len(branch)}")
    if any(w <= 0 for w in branch):
        raise WeightRuleViolation("branch weights must be positive")
    root = min(branch) if omega_root is None else float(omega_root)
    if root <= 0 or root > min(branch):
        raise WeightRuleViolation(
            f"root weight must satisfy 0 < omega_root <= min(branch) = {min(branch)}")
    tube = max(branch) if omega_tube is None else float(omega_tube)
    if tube < max(branch):
        raise WeightRuleViolation(
            f"tube weight must satisfy omega_tube >= max(branch) = {max(branch)}")

    table: dict = {}
    for k in range(0, topology.N_p):
        for node in topology.nodes_at(k):
            if k == 0 and topology.N_r > 0:
                table[(node.index, k)] = root
            elif k < topology.N_r:
                i, l = node.branch
                table[(node.index, k)] = branch[(i - 1) * topology.n_w_bar + (l - 1)]
            else:
                table[(node.index, k)] = (n_d ** (k - topology.N_r)) * tube
    return WeightTable(omega_root=root, omega_branch=tuple(branch),
                       omega_tube=tube, table=table)


def weights_to_json(w: WeightTable) -> str:
    return json.dumps({
        "omega_root": w.omega_root,
        "omega_branch": list(w.omega_branch),
        "omega_tube": w.omega_tube,
        "table": [[j, k, v] for (j, k), v in sorted(w.table.items(), key=lambda t: (t[0][1], t[0][0]))],
    })


def weights_from_json(text: str) -> WeightTable:
    doc = json.loads(text)
    return WeightTable(
        omega_root=doc["omega_root"],
        omega_branch=tuple(doc["omega_branch"]),
        omega_tube=doc["omega_tube"],
        table={(j, k): v for j, k, v in doc["table"]},
    )
