"""Closed-loop simulation under sampled uncertainties, Monte-Carlo estimation
of the feasible-domain volume, and solve-time benchmarking.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import lp_core as lp
from .controller import ControllerSpec, PreparedStep, prepare
from .errors import DimensionMismatch, NumericalFailure
from .geometry import HPolytope
from .offline_synth import OfflineData
from .scenario_tree import TreeTopology

MODE_VERTICES = "Vertices"
MODE_UNIFORM = "UniformConvex"
MODE_CYCLE = "WorstCaseCycle"


def worker_count(requested: int | None = None) -> int:
    """Worker cap: explicit argument, else TEMS_THREADS, else 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("TEMS_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return 1


def _box_bounds(vertices: np.ndarray):
    """(lower, upper) if the vertex list is exactly an axis-aligned box."""
    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    n = vertices.shape[1]
    if vertices.shape[0] != 2 ** n:
        return None
    corners = np.array(np.meshgrid(*[[lo[i], hi[i]] for i in range(n)],
                                   indexing="ij")).reshape(n, -1).T
    rounded = {tuple(np.round(v, 12)) for v in vertices}
    expected = {tuple(np.round(v, 12)) for v in corners}
    return (lo, hi) if rounded == expected else None


@dataclass(frozen=True)
class UncertaintySampler:
    """Draws (A, B, w) realizations; deterministic for a fixed seed.

    Vertices        random vertex pair and disturbance vertex
    UniformConvex   flat-simplex convex weights over the (A_i, B_i) family,
                    uniform w over W when W is a box (convex weights else)
    WorstCaseCycle  cycles deterministically through the extreme pairs
    """

    seed: int
    mode: str = MODE_UNIFORM

    def __post_init__(self):
        if self.mode not in (MODE_VERTICES, MODE_UNIFORM, MODE_CYCLE):
            raise ValueError(f"unknown sampling mode {self.mode!r}")

    def realizations(self, model, steps: int):
        """List of (A, B, w) draws for one closed-loop run."""
        rng = np.random.default_rng(self.seed)
        A_vs, B_vs = model.A_vertices, model.B_vertices
        W = model.W.vertices
        n_p, n_w = len(A_vs), W.shape[0]
        box = _box_bounds(W)
        out = []
        for t in range(steps):
            if self.mode == MODE_VERTICES:
                i = int(rng.integers(n_p))
                l = int(rng.integers(n_w))
                out.append((A_vs[i], B_vs[i], W[l]))
            elif self.mode == MODE_CYCLE:
                i = (t // n_w) % n_p
                l = t % n_w
                out.append((A_vs[i], B_vs[i], W[l]))
            else:
                e = rng.exponential(size=n_p)
                theta = e / e.sum()
                A = sum(t_ * M for t_, M in zip(theta, A_vs))
                B = sum(t_ * M for t_, M in zip(theta, B_vs))
                if box is not None:
                    w = rng.uniform(box[0], box[1])
                else:
                    ew = rng.exponential(size=n_w)
                    w = (ew / ew.sum()) @ W
                out.append((A, B, w))
        return out


@dataclass
class TrajectoryLog:
    states: list
    inputs: list
    values: list
    stage_costs: list
    statuses: list
    per_step_times: list

    def __post_init__(self):
        if len(self.states) != len(self.inputs) + 1:
            raise ValueError("need exactly one more state than inputs")

    @property
    def completed(self) -> bool:
        return all(s == lp.OPTIMAL for s in self.statuses)


def run_closed_loop(spec: ControllerSpec, offline: OfflineData, tree: TreeTopology,
                    x0, steps: int, sampler: UncertaintySampler,
                    settings: lp.SolverSettings = lp.SolverSettings(),
                    prepared: PreparedStep | None = None) -> TrajectoryLog:
    """Iterate x+ = A x + B u + w with the controller in the loop; an
    Infeasible step is logged and ends the trajectory early."""
    x = np.asarray(x0, dtype=float).ravel()
    if x.size != offline.model.n_x:
        raise DimensionMismatch("x0 does not match the model dimension")
    if prepared is None:
        prepared = prepare(spec, offline, tree)
    draws = sampler.realizations(offline.model, steps)
    states, inputs, values, costs, statuses, times = [x.copy()], [], [], [], [], []
    for A, B, w in draws:
        sol = prepared.solve(x, settings)
        statuses.append(sol.status)
        times.append(sol.solve_time)
        if not sol.is_optimal:
            break
        values.append(sol.value)
        costs.append(sol.stage_cost_root)
        inputs.append(sol.u_applied.copy())
        x = A @ x + B @ sol.u_applied + w
        states.append(x.copy())
    return TrajectoryLog(states, inputs, values, costs, statuses, times)


def estimate_feasible_volume(spec: ControllerSpec, offline: OfflineData,
                             tree: TreeTopology, region: HPolytope,
                             samples: int, seed: int = 0,
                             settings: lp.SolverSettings = lp.SolverSettings(),
                             workers: int | None = None) -> tuple:
    """(volume, standard_error) of {x in region | controller LP feasible} by
    uniform sampling of the bounding box of the region.

    Feasibility-only models are used: the cost machinery never affects
    feasibility, so the measured set equals the solve_step domain.
    """
    lower, upper = region.bounding_box()
    box_vol = float(np.prod(upper - lower))
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lower, upper, size=(samples, region.dim))
    in_region = region.contains_points(pts)

    n_workers = worker_count(workers)
    hits = np.zeros(samples, dtype=bool)

    def work(worker_id):
        prep = prepare(spec, offline, tree, feasibility_only=True)
        for idx in range(worker_id, samples, n_workers):
            if not in_region[idx]:
                continue
            try:
                hits[idx] = prep.solve(pts[idx], settings).is_optimal
            except NumericalFailure:
                hits[idx] = False  # a sample the solver cannot certify is a miss

    if n_workers == 1:
        work(0)
    else:
        with ThreadPoolExecutor(n_workers) as ex:
            list(ex.map(work, range(n_workers)))
    p = float(np.mean(hits))
    vol = p * box_vol
    stderr = box_vol * float(np.sqrt(max(p * (1 - p), 0.0) / samples))
    return vol, stderr


def benchmark_timing(spec_list, offline_list, tree_list, x_pool, repeats: int = 3,
                     settings: lp.SolverSettings = lp.SolverSettings(),
                     labels=None) -> list:
    """Per-spec solve-time table over a pool of states. Wall-clock numbers are
    machine-relative; orderings and growth trends are the deliverable.

    Returns one dict per spec: label, rows, vars, recursion rows/step, mean,
    median, and 90th percentile of the per-solve median over repeats.
    """
    out = []
    for idx, (spec, offline, tree) in enumerate(zip(spec_list, offline_list, tree_list)):
        prep = prepare(spec, offline, tree)
        per_state = []
        statuses = []
        for x in x_pool:
            runs = []
            for _ in range(repeats):
                sol = prep.solve(x, settings)
                runs.append(sol.solve_time)
            statuses.append(sol.status)
            per_state.append(float(np.median(runs)))
        label = labels[idx] if labels else f"{spec.tube_kind}[N_r={spec.N_r},N_p={spec.N_p}]"
        out.append({
            "label": label,
            "tube_kind": spec.tube_kind,
            "N_p": spec.N_p,
            "N_r": spec.N_r,
            "num_rows": prep.meta["num_rows"],
            "num_vars": prep.meta["num_vars"],
            "tube_recursion_rows_per_step": prep.meta["tube_recursion_rows_per_step"],
            "solves": len(per_state),
            "mean_s": float(np.mean(per_state)),
            "median_s": float(np.median(per_state)),
            "p90_s": float(np.percentile(per_state, 90)),
            "all_optimal": all(s == lp.OPTIMAL for s in statuses),
        })
    return out
