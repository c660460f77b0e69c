"""Online controller: assemble and solve the per-step LP in the chosen tube
variant, and turn the optimizer output into an applied input.

All variants share the scenario-tree part up to the robust horizon and the
initial condition x in {z_0} (+) S. Beyond the robust horizon:

  GeneralComplexity   tube rhs vectors tau_k^j are decision variables
  Homothetic          tubes are centers plus a scaling of the fixed shape
  LowComplexity       homothetic machinery on a square-matrix box shape
  PureMultistage      N_r = N_p, no tube lanes at all

The terminal stage carries the tube-invariance rows on the decision
variables, plus admissibility rows (inside Z, input image inside V) and a cap
at the offline terminal vector; at N_r = N_p the leaves land in the fixed
terminal set directly.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import lp_core as lp
from .errors import DimensionMismatch, NumericalFailure
from .offline_synth import OfflineData
from .scenario_tree import TreeTopology, WeightTable, default_weights

TUBE_GENERAL = "GeneralComplexity"
TUBE_HOMOTHETIC = "Homothetic"
TUBE_LOW = "LowComplexity"
TUBE_PURE = "PureMultistage"
TUBE_KINDS = (TUBE_GENERAL, TUBE_HOMOTHETIC, TUBE_LOW, TUBE_PURE)


@dataclass(frozen=True)
class ControllerSpec:
    tube_kind: str
    N_p: int
    N_r: int
    Q: np.ndarray
    R: np.ndarray
    weights: object = "uniform"          # WeightTable or "uniform"
    low_complexity_T: np.ndarray | None = None
    homothetic_free_center: bool = False # alternative stitching at N_r

    def __post_init__(self):
        if self.tube_kind not in TUBE_KINDS:
            raise ValueError(f"unknown tube kind {self.tube_kind!r}")
        if not 0 <= self.N_r <= self.N_p or self.N_p < 1:
            raise ValueError("need N_p >= 1 and 0 <= N_r <= N_p")
        if self.tube_kind == TUBE_PURE and self.N_r != self.N_p:
            raise ValueError("PureMultistage requires N_r = N_p")
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))
        if self.low_complexity_T is not None:
            object.__setattr__(self, "low_complexity_T",
                               np.atleast_2d(np.asarray(self.low_complexity_T, dtype=float)))


@dataclass
class OnlineSolution:
    status: str
    x: np.ndarray
    z0: np.ndarray | None
    u_applied: np.ndarray | None
    input_tree: dict
    tube_params: dict
    value: float
    stage_cost_root: float
    solve_time: float

    @property
    def is_optimal(self) -> bool:
        return self.status == lp.OPTIMAL


class StageCostHandle:
    """Epigraph of the stage cost  min_{y in Z_f} |Q(z-y)|_1 + |R(v-K_f z)|_1."""

    def __init__(self, mu_idx, eta_idx):
        self.mu_idx = mu_idx
        self.eta_idx = eta_idx

    def add_to_objective(self, model: lp.LpModel, weight: float) -> None:
        model.add_objective(self.mu_idx, weight * np.ones(self.mu_idx.size))
        model.add_objective(self.eta_idx, weight * np.ones(self.eta_idx.size))


def stage_cost_epigraph(model: lp.LpModel, z_idx, v_idx, T_f, tau_f, Q, R, K_f,
                        tag: str) -> StageCostHandle:
    """Add y in Z_f, mu >= |Q(z-y)|, eta >= |R(v - K_f z)| for one tree node."""
    n_x, n_u = Q.shape[0], R.shape[0]
    y = model.add_vars(f"y[{tag}]", n_x)
    mu = model.add_vars(f"mu[{tag}]", n_x, lb=0.0)
    eta = model.add_vars(f"eta[{tag}]", n_u, lb=0.0)
    model.add_rows(T_f, y, lp.LEQ, tau_f)
    model.add_block_rows([(Q, z_idx), (-Q, y), (-np.eye(n_x), mu)], lp.LEQ, np.zeros(n_x))
    model.add_block_rows([(-Q, z_idx), (Q, y), (-np.eye(n_x), mu)], lp.LEQ, np.zeros(n_x))
    RK = R @ K_f
    model.add_block_rows([(R, v_idx), (-RK, z_idx), (-np.eye(n_u), eta)], lp.LEQ, np.zeros(n_u))
    model.add_block_rows([(-R, v_idx), (RK, z_idx), (-np.eye(n_u), eta)], lp.LEQ, np.zeros(n_u))
    return StageCostHandle(mu, eta)


class _Assembler:
    """Shared LP assembly for every tube variant."""

    def __init__(self, spec: ControllerSpec, offline: OfflineData, tree: TreeTopology,
                 feasibility_only: bool = False):
        if tree.N_p != spec.N_p or tree.N_r != spec.N_r:
            raise DimensionMismatch("tree horizons do not match the controller spec")
        if tree.n_p != offline.model.n_p or tree.n_w_bar != offline.model.n_w_bar:
            raise DimensionMismatch("tree branching does not match the model")
        if spec.tube_kind == TUBE_LOW and offline.tube_matrix is None:
            raise ValueError("LowComplexity needs offline data synthesized with a square tube matrix")
        self.spec = spec
        self.offline = offline
        self.tree = tree
        self.feasibility_only = feasibility_only
        self.model = offline.model
        self.weights = (spec.weights if isinstance(spec.weights, WeightTable)
                        else default_weights(tree))
        self.n_x = self.model.n_x
        self.n_u = self.model.n_u
        self.T = offline.Lambda.A
        self.n_r_rows = self.T.shape[0]
        self.tau_f = offline.terminal_tau
        self.tau_cap = offline.terminal_cap
        self.K_f = offline.gains.K_f
        self.W_bar = self.model.W_large.vertices
        self.lp = lp.LpModel(f"{spec.tube_kind}[N_p={spec.N_p},N_r={spec.N_r}]")
        self.meta: dict = {"tube_recursion_rows_per_step": 0}

    # -- shared pieces ------------------------------------------------------
    # Tree states other than the root are condensed away: each z_k^j is an
    # affine expression z = Phi z0 + sum_anc Psi_anc v_anc + const. Rows that
    # would reference z_k^j reference the expression blocks instead, which
    # removes every dynamics equality and most state columns from the LP.
    def _tree_part(self):
        m, spec, tree = self.lp, self.spec, self.tree
        F, bF = self.offline.Z.A, self.offline.Z.b
        G, bG = self.offline.V.A, self.offline.V.b
        z0 = m.add_vars("z[k=0,j=1]", self.n_x)
        v_idx = {}
        for k in range(0, tree.N_r):
            for node in tree.nodes_at(k):
                v_idx[(k, node.index)] = m.add_vars(f"v[k={k},j={node.index}]", self.n_u)
        # expr: (Phi, {anc: Psi}, const)
        exprs = {(0, 1): (np.eye(self.n_x), {}, np.zeros(self.n_x))}
        for k in range(0, tree.N_r):
            for child in tree.nodes_at(k + 1):
                i, l = child.branch
                A_i = self.model.A_vertices[i - 1]
                B_i = self.model.B_vertices[i - 1]
                Phi, Psi, c = exprs[(k, child.parent)]
                Psi_child = {anc: A_i @ M for anc, M in Psi.items()}
                Psi_child[(k, child.parent)] = B_i.copy()
                exprs[(k + 1, child.index)] = (A_i @ Phi, Psi_child,
                                               A_i @ c + self.W_bar[l - 1])
        self.z0_idx = z0
        self.v_idx = v_idx
        self.z_exprs = exprs
        for k in range(0, tree.N_r):
            for node in tree.nodes_at(k):
                blocks, c = self._z_blocks(k, node.index, F)
                m.add_block_rows(blocks, lp.LEQ, bF - F @ c)
                m.add_rows(G, v_idx[(k, node.index)], lp.LEQ, bG)
                if not self.feasibility_only:
                    h = self._node_stage_cost(k, node.index)
                    h.add_to_objective(m, self.weights.weight(k, node.index))

    def _z_blocks(self, k, j, M):
        """Blocks encoding M z_k^j as M Phi z0 + sum M Psi v + (M c returned)."""
        Phi, Psi, c = self.z_exprs[(k, j)]
        blocks = [(M @ Phi, self.z0_idx)]
        for anc, Psi_m in Psi.items():
            blocks.append((M @ Psi_m, self.v_idx[anc]))
        return blocks, c

    def _node_stage_cost(self, k, j) -> StageCostHandle:
        """Epigraph of min_{y in Z_f} |Q(z-y)|_1 + |R(v - K_f z)|_1 on the
        condensed node state."""
        m, spec = self.lp, self.spec
        n_x, n_u = spec.Q.shape[0], spec.R.shape[0]
        vi = self.v_idx[(k, j)]
        y = m.add_vars(f"y[k={k},j={j}]", n_x)
        mu = m.add_vars(f"mu[k={k},j={j}]", n_x, lb=0.0)
        eta = m.add_vars(f"eta[k={k},j={j}]", n_u, lb=0.0)
        m.add_rows(self.T, y, lp.LEQ, self.tau_f)
        qz, qc = self._z_blocks(k, j, spec.Q)
        m.add_block_rows(qz + [(-spec.Q, y), (-np.eye(n_x), mu)], lp.LEQ, -spec.Q @ qc)
        neg = [(-M, idx) for M, idx in qz]
        m.add_block_rows(neg + [(spec.Q, y), (-np.eye(n_x), mu)], lp.LEQ, spec.Q @ qc)
        RK = spec.R @ self.K_f
        kz, kc = self._z_blocks(k, j, RK)
        m.add_block_rows([(spec.R, vi)] + [(-M, idx) for M, idx in kz]
                         + [(-np.eye(n_u), eta)], lp.LEQ, RK @ kc)
        m.add_block_rows([(-spec.R, vi)] + kz + [(-np.eye(n_u), eta)], lp.LEQ, -RK @ kc)
        return StageCostHandle(mu, eta)

    def _init_condition(self, x0=None):
        T_hat, tau_S = self.offline.S.A, self.offline.S.b
        x = np.zeros(self.n_x) if x0 is None else np.asarray(x0, dtype=float)
        self.init_row = self.lp.add_rows(-T_hat, self.z0_idx, lp.LEQ,
                                         tau_S - T_hat @ x)

    def set_state(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n_x:
            raise DimensionMismatch(f"state has dim {x.size}, model has {self.n_x}")
        T_hat, tau_S = self.offline.S.A, self.offline.S.b
        self.lp.set_rhs(self.init_row, tau_S - T_hat @ x)

    def _lane_inputs(self):
        # Lane feed-forwards are admissible tightened inputs on their own
        # (G v <= 1), not only through the tube rows. The shifted-solution
        # argument reuses them directly, so recursive feasibility is kept.
        G, bG = self.offline.V.A, self.offline.V.b
        for k in range(self.tree.N_r, self.spec.N_p):
            for j in range(1, self.tree.num_lanes + 1):
                vi = self.lp.add_vars(f"v[k={k},j={j}]", self.n_u)
                self.v_idx[(k, j)] = vi
                self.lp.add_rows(G, vi, lp.LEQ, bG)

    def _fixed_terminal(self):
        # leaves inside the fixed terminal set (N_r = N_p only)
        for node in self.tree.nodes_at(self.spec.N_p):
            blocks, c = self._z_blocks(self.spec.N_p, node.index, self.T)
            self.lp.add_block_rows(blocks, lp.LEQ, self.tau_cap - self.T @ c)

    # -- general-complexity lanes -------------------------------------------
    # Tube rhs vectors are nonnegative decision variables, so every cross
    # section contains the origin of the error coordinates. Feasibility-only
    # builds eliminate the terminal tube exactly: any solution whose last
    # recursion lands below the certified invariant cap extends to one
    # satisfying the terminal rows with tau_{N_p} = cap, so the projected
    # feasible set in x is unchanged.
    def _general_lanes(self):
        m, spec = self.lp, self.spec
        P_i, P_x, P_u = self.offline.P_i, self.offline.P_x, self.offline.P_u
        G = self.offline.V.A
        T, n = self.T, self.n_r_rows
        eye = np.eye(n)
        elim = self.feasibility_only
        tau_idx = {}
        for k in range(spec.N_r, spec.N_p + 1):
            if elim and k == spec.N_p:
                continue
            for j in range(1, self.tree.num_lanes + 1):
                tau_idx[(k, j)] = m.add_vars(f"tau[k={k},j={j}]", n, lb=0.0)
        self.meta["tube_recursion_rows_per_step"] = n * self.model.n_p * self.model.n_w_bar

        for j in range(1, self.tree.num_lanes + 1):
            blocks, c = self._z_blocks(spec.N_r, j, T)
            m.add_block_rows(blocks + [(-eye, tau_idx[(spec.N_r, j)])],
                             lp.LEQ, -T @ c)
            for k in range(spec.N_r, spec.N_p):
                vi = self.v_idx[(k, j)]
                tk = tau_idx[(k, j)]
                dst_terminal = elim and (k + 1 == spec.N_p)
                for i in range(self.model.n_p):
                    TB = T @ self.model.B_vertices[i]
                    for w in self.W_bar:
                        if dst_terminal:
                            m.add_block_rows([(P_i[i], tk), (TB, vi)], lp.LEQ,
                                             self.tau_cap - T @ w)
                        else:
                            m.add_block_rows(
                                [(P_i[i], tk), (TB, vi), (-eye, tau_idx[(k + 1, j)])],
                                lp.LEQ, -T @ w)
                m.add_rows(P_x, tk, lp.LEQ, np.ones(P_x.shape[0]))
                m.add_block_rows([(G, vi), (P_u, tk)], lp.LEQ, np.ones(P_u.shape[0]))
            if not elim:
                # terminal: invariance rows on the decision variables plus the
                # cap at the offline terminal vector (admissibility is implied
                # by the cap)
                tN = tau_idx[(spec.N_p, j)]
                for i in range(self.model.n_p):
                    for w in self.W_bar:
                        m.add_rows(P_i[i] - eye, tN, lp.LEQ, -T @ w)
                m.add_rows(eye, tN, lp.LEQ, self.tau_cap)
                for k in range(spec.N_r, spec.N_p):
                    self._general_lane_cost(k, j, tau_idx[(k, j)])
        self.tau_idx = tau_idx

    def _general_lane_cost(self, k, j, tau):
        m, spec = self.lp, self.spec
        P_Q = self.offline.P_Q
        n_q = P_Q.shape[0]
        y = m.add_vars(f"y[k={k},j={j}]", self.n_x)
        mu = m.add_vars(f"mu[k={k},j={j}]", n_q, lb=0.0)
        eta = m.add_vars(f"eta[k={k},j={j}]", self.n_u, lb=0.0)
        gam = m.add_vars(f"gamma[k={k},j={j}]", 1, lb=0.0)
        m.add_rows(self.T, y, lp.LEQ, self.tau_f)
        m.add_block_rows([(P_Q, tau), (-spec.Q, y), (-np.eye(n_q), mu)], lp.LEQ, np.zeros(n_q))
        m.add_block_rows([(-P_Q, tau), (spec.Q, y), (-np.eye(n_q), mu)], lp.LEQ, np.zeros(n_q))
        vi = self.v_idx[(k, j)]
        m.add_block_rows([(spec.R, vi), (-np.eye(self.n_u), eta)], lp.LEQ, np.zeros(self.n_u))
        m.add_block_rows([(-spec.R, vi), (-np.eye(self.n_u), eta)], lp.LEQ, np.zeros(self.n_u))
        m.add_block_rows([(np.ones((1, n_q)), mu), (np.ones((1, self.n_u)), eta),
                          (-np.ones((1, 1)), gam)], lp.LEQ, np.zeros(1))
        m.add_objective(gam, [self.weights.weight(k, j)])

    # -- homothetic lanes ----------------------------------------------------
    # The homothetic terminal cap is the largest uniform vector below the
    # general cap, so the terminal tube family stays closed under the
    # shifted-solution construction. Feasibility-only builds with the default
    # centered stitching substitute the stitch tube (center = node state,
    # scale 0) and the terminal tube (the cap copy) away, as in the general
    # case; the projected domain is unchanged.
    def _homothetic_lanes(self):
        m, spec = self.lp, self.spec
        P_i, P_x, P_u = self.offline.P_i, self.offline.P_x, self.offline.P_u
        G = self.offline.V.A
        T, n = self.T, self.n_r_rows
        ones = np.ones((n, 1))
        cap_scale = float(np.min(self.tau_cap))
        elim = self.feasibility_only and not spec.homothetic_free_center
        zhat_idx, alpha_idx = {}, {}
        for k in range(spec.N_r, spec.N_p + 1):
            if elim and k in (spec.N_r, spec.N_p):
                continue
            for j in range(1, self.tree.num_lanes + 1):
                zhat_idx[(k, j)] = m.add_vars(f"zhat[k={k},j={j}]", self.n_x)
                alpha_idx[(k, j)] = m.add_vars(f"alpha[k={k},j={j}]", 1, lb=0.0)
        self.meta["tube_recursion_rows_per_step"] = n * self.model.n_p * self.model.n_w_bar

        def tube_blocks(k, j, M):
            """Blocks + constant for M (alpha 1 + T zhat) at lane stage k."""
            if (k, j) in zhat_idx:
                return ([(M @ T, zhat_idx[(k, j)]),
                         ((M @ ones.ravel())[:, None], alpha_idx[(k, j)])],
                        np.zeros(M.shape[0]))
            blocks, c = self._z_blocks(spec.N_r, j, M @ T)
            return blocks, M @ T @ c

        for j in range(1, self.tree.num_lanes + 1):
            if not elim:
                zN, aN = zhat_idx[(spec.N_r, j)], alpha_idx[(spec.N_r, j)]
                if spec.homothetic_free_center:
                    blocks, c = self._z_blocks(spec.N_r, j, T)
                    m.add_block_rows(blocks + [(-T, zN), (-ones, aN)], lp.LEQ, -T @ c)
                else:
                    blocks, c = self._z_blocks(spec.N_r, j, np.eye(self.n_x))
                    m.add_block_rows(blocks + [(-np.eye(self.n_x), zN)], lp.EQ, -c)
            for k in range(spec.N_r, spec.N_p):
                vi = self.v_idx[(k, j)]
                dst_terminal = elim and (k + 1 == spec.N_p)
                for i in range(self.model.n_p):
                    TB = T @ self.model.B_vertices[i]
                    lhs, base = tube_blocks(k, j, P_i[i])
                    lhs = lhs + [(TB, vi)]
                    for w in self.W_bar:
                        if dst_terminal:
                            m.add_block_rows(lhs, lp.LEQ,
                                             -base - T @ w + cap_scale * np.ones(n))
                        else:
                            zh1 = zhat_idx[(k + 1, j)]
                            al1 = alpha_idx[(k + 1, j)]
                            m.add_block_rows(lhs + [(-T, zh1), (-ones, al1)],
                                             lp.LEQ, -base - T @ w)
                bx, cx = tube_blocks(k, j, P_x)
                m.add_block_rows(bx, lp.LEQ, np.ones(P_x.shape[0]) - cx)
                bu, cu = tube_blocks(k, j, P_u)
                m.add_block_rows([(G, vi)] + bu, lp.LEQ, np.ones(P_u.shape[0]) - cu)
            if not elim:
                zNp, aNp = zhat_idx[(spec.N_p, j)], alpha_idx[(spec.N_p, j)]
                for i in range(self.model.n_p):
                    PT = P_i[i] @ T
                    P1 = (P_i[i] @ ones.ravel())[:, None]
                    for w in self.W_bar:
                        m.add_block_rows([(PT - T, zNp), (P1 - ones, aNp)],
                                         lp.LEQ, -T @ w)
                m.add_block_rows([(T, zNp), (ones, aNp)], lp.LEQ,
                                 cap_scale * np.ones(n))
                for k in range(spec.N_r, spec.N_p):
                    self._homothetic_lane_cost(k, j, zhat_idx[(k, j)], alpha_idx[(k, j)])
        if self.feasibility_only:
            # a zero objective makes these LPs extremely degenerate and the
            # dual simplex occasionally stalls; minimizing the (bounded) tube
            # scalings breaks the ties without changing feasibility
            for (k, j), al in alpha_idx.items():
                m.add_objective(al, [1.0])
        self.zhat_idx, self.alpha_idx = zhat_idx, alpha_idx

    def _homothetic_lane_cost(self, k, j, zh, al):
        m, spec = self.lp, self.spec
        verts = self.offline.Lambda_vertices.vertices
        n_q = spec.Q.shape[0]
        mu = m.add_vars(f"mu[k={k},j={j}]", n_q, lb=0.0)
        eta = m.add_vars(f"eta[k={k},j={j}]", self.n_u, lb=0.0)
        gam = m.add_vars(f"gamma[k={k},j={j}]", 1, lb=0.0)
        eye = np.eye(n_q)
        for r, vert in enumerate(verts, start=1):
            y = m.add_vars(f"y[k={k},j={j},r={r}]", self.n_x)
            m.add_rows(self.T, y, lp.LEQ, self.tau_f)
            Qv = (spec.Q @ vert)[:, None]
            m.add_block_rows([(spec.Q, zh), (Qv, al), (-spec.Q, y), (-eye, mu)],
                             lp.LEQ, np.zeros(n_q))
            m.add_block_rows([(-spec.Q, zh), (-Qv, al), (spec.Q, y), (-eye, mu)],
                             lp.LEQ, np.zeros(n_q))
        vi = self.v_idx[(k, j)]
        m.add_block_rows([(spec.R, vi), (-np.eye(self.n_u), eta)], lp.LEQ, np.zeros(self.n_u))
        m.add_block_rows([(-spec.R, vi), (-np.eye(self.n_u), eta)], lp.LEQ, np.zeros(self.n_u))
        m.add_block_rows([(np.ones((1, n_q)), mu), (np.ones((1, self.n_u)), eta),
                          (-np.ones((1, 1)), gam)], lp.LEQ, np.zeros(1))
        m.add_objective(gam, [self.weights.weight(k, j)])


def _build(spec: ControllerSpec, offline: OfflineData, tree: TreeTopology,
           feasibility_only: bool = False) -> _Assembler:
    asm = _Assembler(spec, offline, tree, feasibility_only)
    asm._tree_part()
    asm._init_condition()
    if spec.N_r == spec.N_p:
        asm._fixed_terminal()
    else:
        asm._lane_inputs()
        if spec.tube_kind == TUBE_GENERAL:
            asm._general_lanes()
        else:
            asm._homothetic_lanes()
    asm.meta["num_rows"] = asm.lp.num_rows
    asm.meta["num_vars"] = asm.lp.num_vars
    return asm


def build_general(spec: ControllerSpec, offline: OfflineData, tree: TreeTopology,
                  x) -> lp.LpModel:
    """General-complexity tube LP for the measured state x."""
    if spec.tube_kind not in (TUBE_GENERAL, TUBE_PURE):
        raise ValueError("build_general needs a GeneralComplexity or PureMultistage spec")
    asm = _build(spec, offline, tree)
    asm.set_state(x)
    return asm.lp


def build_homothetic(spec: ControllerSpec, offline: OfflineData, tree: TreeTopology,
                     x) -> lp.LpModel:
    """Homothetic / low-complexity tube LP for the measured state x."""
    if spec.tube_kind not in (TUBE_HOMOTHETIC, TUBE_LOW):
        raise ValueError("build_homothetic needs a Homothetic or LowComplexity spec")
    asm = _build(spec, offline, tree)
    asm.set_state(x)
    return asm.lp


def build_pure_multistage(spec: ControllerSpec, offline: OfflineData,
                          tree: TreeTopology, x) -> lp.LpModel:
    """Independent assembly of the N_r = N_p degenerate case: full scenario
    tree, stage costs everywhere, leaves in the fixed terminal set."""
    if spec.N_r != spec.N_p:
        raise ValueError("pure multi-stage build needs N_r = N_p")
    m = lp.LpModel(f"pure[N_p={spec.N_p}]")
    model = offline.model
    n_x, n_u = model.n_x, model.n_u
    F, bF = offline.Z.A, offline.Z.b
    G, bG = offline.V.A, offline.V.b
    weights = (spec.weights if isinstance(spec.weights, WeightTable)
               else default_weights(tree))
    z_idx, v_idx = {}, {}
    for k in range(0, spec.N_p + 1):
        for node in tree.nodes_at(k):
            z_idx[(k, node.index)] = m.add_vars(f"z[k={k},j={node.index}]", n_x)
    for k in range(0, spec.N_p):
        for node in tree.nodes_at(k):
            v_idx[(k, node.index)] = m.add_vars(f"v[k={k},j={node.index}]", n_u)
    for k in range(0, spec.N_p):
        for child in tree.nodes_at(k + 1):
            i, l = child.branch
            m.add_block_rows(
                [(model.A_vertices[i - 1], z_idx[(k, child.parent)]),
                 (model.B_vertices[i - 1], v_idx[(k, child.parent)]),
                 (-np.eye(n_x), z_idx[(k + 1, child.index)])],
                lp.EQ, -model.W_large.vertices[l - 1])
    for k in range(0, spec.N_p):
        for node in tree.nodes_at(k):
            zi, vi = z_idx[(k, node.index)], v_idx[(k, node.index)]
            m.add_rows(F, zi, lp.LEQ, bF)
            m.add_rows(G, vi, lp.LEQ, bG)
            h = stage_cost_epigraph(m, zi, vi, offline.Lambda.A, offline.terminal_tau,
                                    spec.Q, spec.R, offline.gains.K_f,
                                    f"k={k},j={node.index}")
            h.add_to_objective(m, weights.weight(k, node.index))
    for node in tree.nodes_at(spec.N_p):
        m.add_rows(offline.Lambda.A, z_idx[(spec.N_p, node.index)], lp.LEQ,
                   offline.terminal_cap)
    T_hat, tau_S = offline.S.A, offline.S.b
    x = np.asarray(x, dtype=float)
    m.add_rows(-T_hat, z_idx[(0, 1)], lp.LEQ, tau_S - T_hat @ x)
    return m


class PreparedStep:
    """A controller LP assembled once; only the measured-state rows change
    between solves."""

    def __init__(self, spec: ControllerSpec, offline: OfflineData, tree: TreeTopology,
                 feasibility_only: bool = False):
        self.spec = spec
        self.offline = offline
        self.tree = tree
        self.asm = _build(spec, offline, tree, feasibility_only)
        self.feasibility_only = feasibility_only

    @property
    def meta(self) -> dict:
        return self.asm.meta

    def solve(self, x, settings: lp.SolverSettings = lp.SolverSettings()) -> OnlineSolution:
        self.asm.set_state(x)
        sol = lp.solve(self.asm.lp, settings)
        return _to_online_solution(self, np.asarray(x, dtype=float).ravel(), sol)


def prepare(spec: ControllerSpec, offline: OfflineData, tree: TreeTopology,
            feasibility_only: bool = False) -> PreparedStep:
    return PreparedStep(spec, offline, tree, feasibility_only)


def _to_online_solution(prepared: PreparedStep, x, sol: lp.LpSolution) -> OnlineSolution:
    spec, offline, tree = prepared.spec, prepared.offline, prepared.tree
    model = prepared.asm.lp
    if sol.status == lp.FAILURE:
        path = tempfile.mktemp(prefix="tems_lp_failure_", suffix=".lp")
        try:
            lp.dump_lp(model, path)
        except Exception:
            path = "<dump failed>"
        raise NumericalFailure(f"online LP broke down; model dumped to {path}")
    if sol.status != lp.OPTIMAL:
        return OnlineSolution(sol.status, x, None, None, {}, {}, np.nan, np.nan,
                              sol.solve_time)
    z0 = lp.extract(model, sol, "z[k=0,j=1]")
    v0 = lp.extract(model, sol, "v[k=0,j=1]")
    K_inv = offline.gains.K_inv
    if spec.N_r == 0:
        # the root sits on a tube lane, so its effective feed-forward
        # includes the tube feedback evaluated at the root state
        v_eff = v0 + offline.gains.K_pred @ z0
    else:
        v_eff = v0
    u = v_eff + K_inv @ (x - z0)
    input_tree, tube_params = {}, {}
    for k in range(0, spec.N_p):
        count = tree.num_nodes_at(k) if k < spec.N_r else tree.num_lanes
        for j in range(1, count + 1):
            input_tree[(k, j)] = lp.extract(model, sol, f"v[k={k},j={j}]")
    if spec.N_r < spec.N_p and not prepared.feasibility_only:
        for k in range(spec.N_r, spec.N_p + 1):
            for j in range(1, tree.num_lanes + 1):
                if spec.tube_kind == TUBE_GENERAL:
                    tube_params[(k, j)] = lp.extract(model, sol, f"tau[k={k},j={j}]")
                else:
                    tube_params[(k, j)] = (
                        lp.extract(model, sol, f"zhat[k={k},j={j}]"),
                        float(lp.extract(model, sol, f"alpha[k={k},j={j}]")[0]),
                    )
    if prepared.feasibility_only:
        stage_cost_root = np.nan
        value = np.nan
    else:
        weights = prepared.asm.weights
        if spec.N_r == 0:
            stage_cost_root = weights.weight(0, 1) * float(
                lp.extract(model, sol, "gamma[k=0,j=1]")[0])
        else:
            mu = lp.extract(model, sol, "mu[k=0,j=1]")
            eta = lp.extract(model, sol, "eta[k=0,j=1]")
            stage_cost_root = weights.weight(0, 1) * float(mu.sum() + eta.sum())
        value = sol.objective_value
    return OnlineSolution(lp.OPTIMAL, x, z0, u, input_tree, tube_params,
                          value, stage_cost_root, sol.solve_time)


def solve_step(spec: ControllerSpec, offline: OfflineData, tree: TreeTopology, x,
               settings: lp.SolverSettings = lp.SolverSettings(),
               prepared: PreparedStep | None = None) -> OnlineSolution:
    """One controller step: build (or reuse) the LP for the tube kind, solve,
    and return the applied input u = v_0 + K_inv (x - z_0)."""
    if spec.tube_kind == TUBE_PURE and spec.N_r != spec.N_p:
        raise ValueError("PureMultistage requires N_r = N_p")
    if prepared is None:
        prepared = prepare(spec, offline, tree)
    return prepared.solve(x, settings)


def dual_mode_input(x, X_max, K_f, fallback):
    """K_f x inside the RPI set X_max, the MPC input elsewhere."""
    x = np.asarray(x, dtype=float).ravel()
    if X_max.contains_point(x):
        return np.atleast_2d(K_f) @ x
    return fallback(x)
