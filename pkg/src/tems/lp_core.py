"""Structured LP builder and a thin HiGHS solving layer.

One abstraction serves both the offline synthesis LPs and the per-step
controller LP. Variable blocks are registered under semantic names (e.g.
``"v[k=2,j=3]"``) so solutions can be picked apart after the solve.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import NumericalFailure, UnknownName

LEQ = "<="
EQ = "=="

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
FAILURE = "NumericalFailure"

_STATUS_FROM_HIGHS = {0: OPTIMAL, 1: FAILURE, 2: INFEASIBLE, 3: UNBOUNDED, 4: FAILURE}


@dataclass(frozen=True)
class SolverSettings:
    primal_tol: float = 1e-7
    dual_tol: float = 1e-7
    time_limit: float = 60.0

    def __post_init__(self):
        if min(self.primal_tol, self.dual_tol, self.time_limit) <= 0:
            raise ValueError("solver settings must be positive")


@dataclass
class LpSolution:
    status: str
    x: np.ndarray
    objective_value: float
    solve_time: float
    max_violation: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


class LpModel:
    """Incrementally built LP: min c'x s.t. rows (<= or ==), bounds on x."""

    def __init__(self, name: str = ""):
        self.name = name
        self.num_vars = 0
        self.name_index: dict[str, slice] = {}
        self._obj: dict[int, float] = {}
        self._lb: list[float] = []
        self._ub: list[float] = []
        # COO triplets plus per-row sense/rhs
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self._sense: list[str] = []
        self._rhs: list[float] = []
        self._cache = None

    # -- variables ----------------------------------------------------------
    def add_vars(self, name: str, n: int, lb: float = -np.inf, ub: float = np.inf) -> np.ndarray:
        """Register a named block of n variables; returns their column indices."""
        if name in self.name_index:
            raise ValueError(f"variable block {name!r} already registered")
        if n <= 0:
            raise ValueError("block size must be positive")
        start = self.num_vars
        self.name_index[name] = slice(start, start + n)
        self.num_vars += n
        self._lb.extend([lb] * n)
        self._ub.extend([ub] * n)
        self._cache = None
        return np.arange(start, start + n)

    # -- constraints --------------------------------------------------------
    @property
    def num_rows(self) -> int:
        return len(self._rhs)

    def add_block_rows(self, blocks, sense: str, rhs) -> int:
        """Add rows  sum_j M_j x[idx_j]  (sense)  rhs.

        ``blocks`` is a list of (matrix, indices); every matrix must have the
        same row count as ``rhs``. Returns the index of the first added row.
        """
        if sense not in (LEQ, EQ):
            raise ValueError(f"unknown sense {sense!r}")
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        m = rhs.shape[0]
        first = self.num_rows
        for M, idx in blocks:
            M = np.atleast_2d(np.asarray(M, dtype=float))
            idx = np.asarray(idx, dtype=int)
            if M.shape != (m, idx.size):
                raise ValueError(f"block shape {M.shape} does not match ({m}, {idx.size})")
            r, c = np.nonzero(M)
            self._rows.extend((first + r).tolist())
            self._cols.extend(idx[c].tolist())
            self._vals.extend(M[r, c].tolist())
        self._sense.extend([sense] * m)
        self._rhs.extend(rhs.tolist())
        self._cache = None
        return first

    def add_rows(self, M, idx, sense: str, rhs) -> int:
        return self.add_block_rows([(M, idx)], sense, rhs)

    def set_rhs(self, first_row: int, rhs) -> None:
        """Overwrite the right-hand side of rows starting at ``first_row``.

        Only the rhs cache is refreshed, so a prepared model can be re-solved
        for a new measured state without reassembly.
        """
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        self._rhs[first_row:first_row + rhs.size] = rhs.tolist()
        if self._cache is not None:
            self._cache.refresh_rhs(np.asarray(self._rhs), np.asarray([s == LEQ for s in self._sense]))

    # -- objective ----------------------------------------------------------
    def add_objective(self, idx, coefs) -> None:
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        coefs = np.atleast_1d(np.asarray(coefs, dtype=float))
        for i, c in zip(idx, coefs):
            self._obj[int(i)] = self._obj.get(int(i), 0.0) + float(c)

    @property
    def objective(self) -> np.ndarray:
        c = np.zeros(self.num_vars)
        for i, v in self._obj.items():
            c[i] = v
        return c

    # -- assembly -----------------------------------------------------------
    def assembled(self) -> "_Assembled":
        if self._cache is None:
            is_leq = np.asarray([s == LEQ for s in self._sense])
            coo = sp.coo_matrix(
                (self._vals, (self._rows, self._cols)),
                shape=(self.num_rows, self.num_vars),
            ).tocsr()
            self._cache = _Assembled(
                c=self.objective,
                A=coo,
                is_leq=is_leq,
                rhs=np.asarray(self._rhs, dtype=float),
                bounds=list(zip(self._lb, self._ub)),
            )
        return self._cache


class _Assembled:
    def __init__(self, c, A, is_leq, rhs, bounds):
        self.c = c
        self.A_ub = A[is_leq]
        self.A_eq = A[~is_leq]
        self.is_leq = is_leq
        self.b_ub = rhs[is_leq]
        self.b_eq = rhs[~is_leq]
        self.bounds = [
            (None if np.isneginf(lo) else lo, None if np.isposinf(hi) else hi)
            for lo, hi in bounds
        ]

    def refresh_rhs(self, rhs, is_leq):
        self.b_ub = rhs[is_leq]
        self.b_eq = rhs[~is_leq]


def solve(model: LpModel, settings: SolverSettings = SolverSettings()) -> LpSolution:
    """Solve the model with HiGHS; never raises on infeasible/unbounded.
    Falls back from dual simplex to the interior-point code when the simplex
    stalls (model status Unknown), which happens on very degenerate
    feasibility problems."""
    asm = model.assembled()
    options = {
        "presolve": True,
        "time_limit": settings.time_limit,
        "primal_feasibility_tolerance": settings.primal_tol,
        "dual_feasibility_tolerance": settings.dual_tol,
    }
    t0 = time.perf_counter()
    res = None
    for method in ("highs", "highs-ipm"):
        try:
            res = linprog(
                asm.c,
                A_ub=asm.A_ub if asm.A_ub.shape[0] else None,
                b_ub=asm.b_ub if asm.b_ub.size else None,
                A_eq=asm.A_eq if asm.A_eq.shape[0] else None,
                b_eq=asm.b_eq if asm.b_eq.size else None,
                bounds=asm.bounds,
                method=method,
                options=options,
            )
        except Exception:  # solver breakdown must not crash callers
            return LpSolution(FAILURE, np.full(model.num_vars, np.nan), np.nan,
                              time.perf_counter() - t0)
        if res.status != 4:
            break
    elapsed = time.perf_counter() - t0
    status = _STATUS_FROM_HIGHS.get(res.status, FAILURE)
    if status != OPTIMAL:
        return LpSolution(status, np.full(model.num_vars, np.nan), np.nan, elapsed)
    x = np.asarray(res.x, dtype=float)
    viol = 0.0
    if asm.A_ub.shape[0]:
        viol = max(viol, float(np.max(asm.A_ub @ x - asm.b_ub, initial=0.0)))
    if asm.A_eq.shape[0]:
        viol = max(viol, float(np.max(np.abs(asm.A_eq @ x - asm.b_eq), initial=0.0)))
    if viol > 100 * settings.primal_tol:
        return LpSolution(FAILURE, x, float(res.fun), elapsed, viol)
    return LpSolution(OPTIMAL, x, float(res.fun), elapsed, viol)


def extract(model: LpModel, solution: LpSolution, name: str) -> np.ndarray:
    """Sub-vector of the solution for a registered block name."""
    if name not in model.name_index:
        raise UnknownName(name)
    return solution.x[model.name_index[name]]


def dump_lp(model: LpModel, path: str) -> None:
    """Write the model in CPLEX LP text format (debugging aid)."""
    asm = model.assembled()
    names = [f"x{i}" for i in range(model.num_vars)]

    def expr(row) -> str:
        terms = []
        for j, v in zip(row.indices, row.data):
            terms.append(f"{'+' if v >= 0 else '-'} {abs(v):.17g} {names[j]}")
        return " ".join(terms) if terms else "0 x0"

    A = sp.vstack([asm.A_ub, asm.A_eq]).tocsr() if asm.A_eq.shape[0] else asm.A_ub
    with open(path, "w") as fh:
        fh.write(f"\\ {model.name}\nMinimize\n obj: ")
        obj_terms = [f"{'+' if c >= 0 else '-'} {abs(c):.17g} {names[i]}"
                     for i, c in enumerate(asm.c) if c != 0.0]
        fh.write(" ".join(obj_terms) if obj_terms else "0 x0")
        fh.write("\nSubject To\n")
        k = 0
        for i in range(asm.A_ub.shape[0]):
            fh.write(f" c{k}: {expr(asm.A_ub.getrow(i))} <= {asm.b_ub[i]:.17g}\n")
            k += 1
        for i in range(asm.A_eq.shape[0]):
            fh.write(f" c{k}: {expr(asm.A_eq.getrow(i))} = {asm.b_eq[i]:.17g}\n")
            k += 1
        fh.write("Bounds\n")
        for i, (lo, hi) in enumerate(asm.bounds):
            lo_s = "-inf" if lo is None else f"{lo:.17g}"
            hi_s = "+inf" if hi is None else f"{hi:.17g}"
            fh.write(f" {lo_s} <= {names[i]} <= {hi_s}\n")
        fh.write("End\n")
