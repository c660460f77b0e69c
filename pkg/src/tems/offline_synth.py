"""Offline synthesis stage: feedback gains, multiplier matrices certifying
set inclusions, the small-disturbance invariant tube S, tightened constraint
sets, and terminal-set data. Everything here is computed once per model and
reused by every online solve.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_are

from . import geometry as geo
from . import lp_core as lp
from .errors import (
    DimensionMismatch,
    EmptyTightenedSet,
    InfeasibleCertificate,
    InfeasibleProblem,
    NoTerminalSet,
    NotStabilizable,
)
from .geometry import DEFAULT_TOL, HPolytope, SetTolerance, VPolytope

FARKAS_SETTINGS = lp.SolverSettings(primal_tol=1e-10, dual_tol=1e-10, time_limit=60.0)


@dataclass(frozen=True)
class UncertainModel:
    """Vertex description of x+ = A x + B u + w with the disturbance split
    W subseteq W_large (+) W_small."""

    A_vertices: tuple
    B_vertices: tuple
    W: VPolytope
    W_large: VPolytope
    W_small: VPolytope
    X: HPolytope
    U: HPolytope

    def __post_init__(self):
        A_vs = tuple(np.asarray(A, dtype=float) for A in self.A_vertices)
        B_vs = tuple(np.asarray(B, dtype=float) for B in self.B_vertices)
        object.__setattr__(self, "A_vertices", A_vs)
        object.__setattr__(self, "B_vertices", B_vs)
        n_x = A_vs[0].shape[0]
        if len(A_vs) != len(B_vs):
            raise DimensionMismatch("need one B vertex per A vertex")
        for A in A_vs:
            if A.shape != (n_x, n_x):
                raise DimensionMismatch("all A vertices must be n_x by n_x")
        n_u = B_vs[0].shape[1]
        for B in B_vs:
            if B.shape != (n_x, n_u):
                raise DimensionMismatch("all B vertices must be n_x by n_u")
        if not (self.W.dim == self.W_large.dim == self.W_small.dim == n_x):
            raise DimensionMismatch("disturbance sets must live in the state space")
        if self.X.dim != n_x or self.U.dim != n_u:
            raise DimensionMismatch("constraint sets do not match the state/input dims")
        # W inside W_large (+) W_small
        big = geo.minkowski_sum(self.W_large, self.W_small)
        hull_h = geo.to_hrep(big) if big.num_vertices > n_x else None
        for w in self.W.vertices:
            if hull_h is not None:
                ok = hull_h.contains_point(w, 1e-7)
            else:
                ok = float(np.max(np.abs(w - big.vertices[0]))) <= 1e-9
            if not ok:
                raise ValueError("W is not contained in W_large (+) W_small")

    @property
    def n_x(self) -> int:
        return self.A_vertices[0].shape[0]

    @property
    def n_u(self) -> int:
        return self.B_vertices[0].shape[1]

    @property
    def n_p(self) -> int:
        return len(self.A_vertices)

    @property
    def n_w_bar(self) -> int:
        return self.W_large.num_vertices

    def closed_loop(self, K: np.ndarray) -> list:
        return [A + B @ K for A, B in zip(self.A_vertices, self.B_vertices)]


@dataclass(frozen=True)
class Gains:
    """Feedback gains: K_inv for the invariant tube, K_pred for predicted
    tubes, K_f for the terminal law (equal to K_pred whenever N_r < N_p)."""

    K_inv: np.ndarray
    K_pred: np.ndarray
    K_f: np.ndarray

    def __post_init__(self):
        for name in ("K_inv", "K_pred", "K_f"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))

    @staticmethod
    def uniform(K) -> "Gains":
        K = np.atleast_2d(np.asarray(K, dtype=float))
        return Gains(K, K, K)


@dataclass
class OfflineData:
    """Everything the online LP needs, computed ahead of time."""

    model: UncertainModel
    gains: Gains
    lam: float
    Lambda: HPolytope              # tube shape {z | T z <= 1}
    Lambda_vertices: VPolytope
    S: HPolytope                   # invariant tube {z | T_hat z <= tau_S}
    P_i: list                      # P_i T = T (A_i + B_i K_pred)
    P_x: np.ndarray                # P_x T = F
    P_u: np.ndarray                # P_u T = G K_pred
    P_Q: np.ndarray                # P_Q T = Q
    Z: HPolytope                   # X (-) S, unit rhs
    V: HPolytope                   # U (-) K_inv S, unit rhs
    Q: np.ndarray
    terminal_tau: np.ndarray       # rhs of the target set Z_f (uniform: alpha* 1)
    terminal_cap: np.ndarray = None  # rhs cap for online terminal tubes (>= terminal_tau)
    tube_matrix: np.ndarray | None = None  # low-complexity T-bar if used
    content_hash: str = ""

    def __post_init__(self):
        if not self.content_hash:
            self.content_hash = offline_content_hash(self.model, self.gains, self.lam,
                                                     self.Q, self.tube_matrix)

    @property
    def n_r(self) -> int:
        return self.Lambda.num_rows

    @property
    def n_v(self) -> int:
        return self.Lambda_vertices.num_vertices


# ---------------------------------------------------------------------------
# Gains

def synth_gain_lqr(model: UncertainModel, Q_lqr, R_lqr) -> np.ndarray:
    """LQR gain for the vertex-average (nominal) system; the caller still has
    to certify robustness via a contractive set for the closed-loop family."""
    A = sum(model.A_vertices) / model.n_p
    B = sum(model.B_vertices) / model.n_p
    Q_lqr = np.atleast_2d(np.asarray(Q_lqr, dtype=float))
    R_lqr = np.atleast_2d(np.asarray(R_lqr, dtype=float))
    try:
        P = solve_discrete_are(A, B, Q_lqr, R_lqr)
    except Exception as exc:
        raise NotStabilizable(f"discrete Riccati equation failed: {exc}") from exc
    K = -np.linalg.solve(R_lqr + B.T @ P @ B, B.T @ P @ A)
    if np.max(np.abs(np.linalg.eigvals(A + B @ K))) >= 1.0:
        raise NotStabilizable("nominal closed loop is not asymptotically stable")
    return K


# ---------------------------------------------------------------------------
# Farkas multipliers

def farkas_rows(T: np.ndarray, target: np.ndarray,
                settings: lp.SolverSettings = FARKAS_SETTINGS) -> np.ndarray:
    """Nonnegative P with P T = target, one min-1-norm LP per row (rows
    decouple). Raises InfeasibleCertificate when a row is outside the cone
    spanned by the rows of T."""
    T = np.asarray(T, dtype=float)
    target = np.atleast_2d(np.asarray(target, dtype=float))
    n = T.shape[0]
    P = np.zeros((target.shape[0], n))
    for r in range(target.shape[0]):
        model = lp.LpModel(f"farkas_row_{r}")
        p = model.add_vars("p", n, lb=0.0)
        model.add_rows(T.T, p, lp.EQ, target[r])
        model.add_objective(p, np.ones(n))
        sol = lp.solve(model, settings)
        if sol.status != lp.OPTIMAL:
            raise InfeasibleCertificate(
                f"no nonnegative multiplier for row {r} (status {sol.status})")
        P[r] = sol.x
    P[(P < 0) & (P > -1e-12)] = 0.0  # solver noise
    P[P < 0] = 0.0
    return P


def farkas_matrix(T: np.ndarray, M: np.ndarray,
                  settings: lp.SolverSettings = FARKAS_SETTINGS) -> np.ndarray:
    """Nonnegative P with P T = T M (tube-recursion certificate for the map M)."""
    T = np.asarray(T, dtype=float)
    M = np.asarray(M, dtype=float)
    P = farkas_rows(T, T @ M, settings)
    resid = float(np.max(np.abs(P @ T - T @ M)))
    if resid > 1e-8:
        raise InfeasibleCertificate(f"multiplier residual {resid:.2e} exceeds 1e-8")
    return P


# ---------------------------------------------------------------------------
# Invariant tube and tightening

def invariant_tube(model: UncertainModel, K_inv, T_hat, norm: str = "one",
                   settings: lp.SolverSettings = lp.SolverSettings()) -> HPolytope:
    """Smallest-rhs tube S = {z | T_hat z <= tau} that is invariant for
    x+ = (A_i + B_i K_inv) x + w over all vertex matrices and w in W_small.

    Solves  min ||tau||_p  s.t.  P_hat_i tau + T_hat w_l <= tau  for every
    vertex pair, then certifies invariance by support functions.
    """
    if norm not in ("one", "inf"):
        raise ValueError("norm must be 'one' or 'inf'")
    T_hat = np.asarray(T_hat, dtype=float)
    K_inv = np.atleast_2d(np.asarray(K_inv, dtype=float))
    n = T_hat.shape[0]
    A_cl = model.closed_loop(K_inv)
    P_hats = [farkas_matrix(T_hat, M) for M in A_cl]

    m = lp.LpModel("invariant_tube")
    tau = m.add_vars("tau", n, lb=0.0)
    for P_hat in P_hats:
        for w in model.W_small.vertices:
            m.add_rows(P_hat - np.eye(n), tau, lp.LEQ, -T_hat @ w)
    if norm == "one":
        m.add_objective(tau, np.ones(n))
    else:
        t = m.add_vars("t", 1, lb=0.0)
        m.add_block_rows([(np.eye(n), tau), (-np.ones((n, 1)), t)], lp.LEQ, np.zeros(n))
        m.add_objective(t, np.ones(1))
    sol = lp.solve(m, settings)
    if sol.status != lp.OPTIMAL:
        raise InfeasibleProblem(
            f"invariant tube LP is {sol.status}: contractive set cannot absorb W_small")
    tau_S = lp.extract(m, sol, "tau")
    tau_S[tau_S < 0] = 0.0
    S = HPolytope(T_hat, tau_S)
    # Definition-1 certificate, by support function so a degenerate S({0}) works
    for M in A_cl:
        h_w = np.max(model.W_small.vertices @ T_hat.T, axis=0)
        for r in range(n):
            lhs = geo.support(S, M.T @ T_hat[r]) + h_w[r]
            if lhs > tau_S[r] + 1e-7:
                raise InfeasibleProblem(f"invariance certificate failed on row {r}")
    return S


def tighten_constraints(model: UncertainModel, S: HPolytope, K_inv) -> tuple:
    """(Z, V) = (X (-) S, U (-) K_inv S), rows rescaled to unit rhs."""
    K_inv = np.atleast_2d(np.asarray(K_inv, dtype=float))
    Z_raw = geo.pontryagin_diff(model.X, S)
    h_u = np.array([geo.support(S, K_inv.T @ g) for g in model.U.A])
    V_raw = HPolytope(model.U.A, model.U.b - h_u)
    if np.any(Z_raw.b <= 0) or np.any(V_raw.b <= 0):
        raise EmptyTightenedSet("invariant tube leaves no room inside the constraints")
    return Z_raw.normalized(), V_raw.normalized()


# ---------------------------------------------------------------------------
# Terminal set

def terminal_feasibility_check(data: "OfflineData", model: UncertainModel,
                               settings: lp.SolverSettings = lp.SolverSettings()) -> np.ndarray:
    """A strictly positive tau_f with  P_i tau_f + T w_l <= tau_f  (W_large
    vertices), {T z <= tau_f} inside Z, and the K_f image inside V. The online
    problem constrains its own terminal tube variables; this vector certifies
    that Assumptions on the terminal ingredients hold and doubles as the
    target set of the stage cost.

    The returned tau_f is uniform (alpha* times ones) whenever a scaled copy
    of the tube shape itself is invariant and admissible; a homothetic target
    keeps the zero-cost certificate exact, because every vertex of the scaled
    shape is available as a stage-cost reference point. When no uniform scale
    exists (a poorly conditioned shape against a large W_large), the smallest
    strictly positive invariant admissible vector is returned instead.
    """
    T = data.Lambda.A
    n = T.shape[0]
    P_blocks = [data.P_x, data.P_u]
    if not np.allclose(data.gains.K_f, data.gains.K_pred):
        P_blocks.append(farkas_rows(T, data.V.A @ data.gains.K_f))
    alpha_hi = min(1.0 / max(float(np.max(P @ np.ones(n))), 1e-30) for P in P_blocks)
    # invariance margin: alpha (1 - P_i 1) >= T w_l rowwise
    alpha_lo = 0.0
    for P_i in data.P_i:
        slack = 1.0 - P_i @ np.ones(n)
        for w in model.W_large.vertices:
            lift = T @ w
            for r in range(n):
                if lift[r] <= 0:
                    continue
                if slack[r] <= 1e-12:
                    alpha_lo = np.inf
                    break
                alpha_lo = max(alpha_lo, lift[r] / slack[r])
    if alpha_lo <= alpha_hi and alpha_hi > 1e-12:
        return alpha_hi * np.ones(n)

    # non-uniform fallback: minimal invariant admissible vector
    m = lp.LpModel("terminal_tau_fallback")
    tau = m.add_vars("tau", n, lb=1e-9)
    for P_i in data.P_i:
        for w in model.W_large.vertices:
            m.add_rows(P_i - np.eye(n), tau, lp.LEQ, -T @ w)
    for P in P_blocks:
        m.add_rows(P, tau, lp.LEQ, np.ones(P.shape[0]))
    m.add_objective(tau, np.ones(n))
    sol = lp.solve(m, settings)
    if sol.status != lp.OPTIMAL:
        raise NoTerminalSet(
            f"no invariant admissible terminal vector exists (LP {sol.status}; "
            f"uniform bounds were [{alpha_lo:.3g}, {alpha_hi:.3g}])")
    tau_f = lp.extract(m, sol, "tau")
    if np.min(tau_f) <= 0:
        raise NoTerminalSet("terminal set has empty interior")
    return tau_f


def terminal_cap_vector(data: "OfflineData", model: UncertainModel,
                        settings: lp.SolverSettings = lp.SolverSettings()) -> np.ndarray:
    """Largest-sum invariant and admissible rhs vector, bounded per row by the
    support of Z and below by terminal_tau. Online terminal tubes are capped
    at this vector so the feasible domain is as large as the certificates
    allow while the N_r = N_p terminal set stays fixed."""
    T = data.Lambda.A
    n = T.shape[0]
    caps = np.array([geo.support(data.Z, row) for row in T])
    m = lp.LpModel("terminal_cap")
    tau = m.add_vars("tau", n, lb=0.0)
    for P_i in data.P_i:
        for w in model.W_large.vertices:
            m.add_rows(P_i - np.eye(n), tau, lp.LEQ, -T @ w)
    m.add_rows(data.P_x, tau, lp.LEQ, np.ones(data.P_x.shape[0]))
    m.add_rows(data.P_u, tau, lp.LEQ, np.ones(data.P_u.shape[0]))
    if not np.allclose(data.gains.K_f, data.gains.K_pred):
        P_f = farkas_rows(T, data.V.A @ data.gains.K_f)
        m.add_rows(P_f, tau, lp.LEQ, np.ones(P_f.shape[0]))
    m.add_rows(np.eye(n), tau, lp.LEQ, caps)
    m.add_rows(-np.eye(n), tau, lp.LEQ, -data.terminal_tau)
    m.add_objective(tau, -np.ones(n))
    sol = lp.solve(m, settings)
    if sol.status != lp.OPTIMAL:
        raise NoTerminalSet(f"terminal-cap LP is {sol.status}")
    return lp.extract(m, sol, "tau")


# ---------------------------------------------------------------------------
# Low-complexity tube shape

def low_complexity_tube_matrix(model: UncertainModel, K_pred) -> np.ndarray:
    """Square T-bar whose box {-1 <= T-bar z <= 1} is contractive for every
    closed-loop vertex matrix.

    Aligns coordinates with the nominal closed-loop eigenbasis (real/imaginary
    parts for complex pairs), then rescales rows by the Perron vector of the
    entrywise-max |map| so the worst-case infinity norm is minimized.
    """
    K_pred = np.atleast_2d(np.asarray(K_pred, dtype=float))
    A_cl = model.closed_loop(K_pred)
    A_nom = sum(A_cl) / len(A_cl)
    evals, evecs = np.linalg.eig(A_nom)
    cols = []
    i = 0
    while i < model.n_x:
        if abs(evals[i].imag) < 1e-12:
            cols.append(evecs[:, i].real)
            i += 1
        else:
            cols.append(evecs[:, i].real)
            cols.append(evecs[:, i].imag)
            i += 2
    V = np.array(cols).T
    T0 = np.linalg.inv(V)
    maps = [T0 @ M @ V for M in A_cl]
    M_max = np.max([np.abs(M) for M in maps], axis=0)
    w, vecs = np.linalg.eig(M_max)
    perron = np.abs(vecs[:, int(np.argmax(w.real))].real)
    if np.min(perron) < 1e-12:
        perron = np.maximum(perron, 1e-12)
    T_bar = np.diag(1.0 / perron) @ T0
    contraction = tube_matrix_contraction(T_bar, A_cl)
    if contraction >= 1.0:
        raise NotStabilizable(
            f"low-complexity box is not contractive (factor {contraction:.3f}); "
            "supply low_complexity_T explicitly")
    return T_bar


def tube_matrix_contraction(T_bar: np.ndarray, A_cl) -> float:
    """Worst-case infinity norm of T_bar A T_bar^-1 over the vertex maps."""
    T_inv = np.linalg.inv(T_bar)
    return max(float(np.max(np.sum(np.abs(T_bar @ M @ T_inv), axis=1))) for M in A_cl)


# ---------------------------------------------------------------------------
# Orchestration

def _input_mapped_rows(region: HPolytope, input_set: HPolytope, K) -> HPolytope:
    """region intersected with {z | G K z <= 1} (closed-loop input admissibility)."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    rows = input_set.A @ K / input_set.b[:, None]
    rows = rows[np.linalg.norm(rows, axis=1) > 1e-12]  # K may have a null space
    reg = region.normalized()
    if rows.shape[0] == 0:
        return reg
    return HPolytope(np.vstack([reg.A, rows]), np.ones(reg.num_rows + rows.shape[0]))


def synthesize(model: UncertainModel, gains: Gains, lam: float = 0.68,
               Q=None, tube_matrix=None, norm: str = "one",
               max_iter: int = 200, tol: SetTolerance = DEFAULT_TOL) -> OfflineData:
    """Full offline pass.

    1. contractive set for K_inv on X intersected with the K_inv-mapped input
       set, shaped to leave margin for W_small
    2. invariant tube S from the rhs LP, then Z = X (-) S, V = U (-) K_inv S
    3. tube shape Lambda for K_pred on the tightened sets, shaped for W_large
       (or the supplied square low-complexity matrix)
    4. multiplier matrices and the terminal certificate
    """
    Q = np.eye(model.n_x) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    A_cl_inv = model.closed_loop(gains.K_inv)

    seed_inv = _input_mapped_rows(model.X, model.U, gains.K_inv)
    T_hat_set = geo.lambda_contractive_set(A_cl_inv, lam, seed_inv, max_iter, tol,
                                           shape_disturbance=model.W_small)
    S = invariant_tube(model, gains.K_inv, T_hat_set.A, norm)
    Z, V = tighten_constraints(model, S, gains.K_inv)

    return _tube_stage(model, gains, lam, Q, S, Z, V, tube_matrix, max_iter, tol)


def retube(data: OfflineData, tube_matrix) -> OfflineData:
    """Re-synthesize only the tube-shape-dependent pieces (S, Z, V are kept)."""
    return _tube_stage(data.model, data.gains, data.lam, data.Q,
                       data.S, data.Z, data.V, tube_matrix, 200, DEFAULT_TOL)


def _tube_stage(model, gains, lam, Q, S, Z, V, tube_matrix, max_iter, tol) -> OfflineData:
    A_cl_pred = model.closed_loop(gains.K_pred)
    if tube_matrix is None:
        seed = _input_mapped_rows(Z, V, gains.K_pred)
        Lambda = geo.lambda_contractive_set(A_cl_pred, lam, seed, max_iter, tol,
                                            shape_disturbance=model.W_large)
        tube_matrix_stored = None
    else:
        T_bar = np.atleast_2d(np.asarray(tube_matrix, dtype=float))
        if T_bar.shape != (model.n_x, model.n_x):
            raise DimensionMismatch("low-complexity tube matrix must be square n_x by n_x")
        contraction = tube_matrix_contraction(T_bar, A_cl_pred)
        if contraction >= 1.0:
            raise NotStabilizable(f"supplied tube matrix is not contractive ({contraction:.3f})")
        Lambda = HPolytope(np.vstack([T_bar, -T_bar]), np.ones(2 * model.n_x))
        tube_matrix_stored = T_bar
    Lambda_vertices = geo.to_vrep(Lambda, tol)

    T = Lambda.A
    P_i = [farkas_matrix(T, M) for M in A_cl_pred]
    P_x = farkas_rows(T, Z.A)
    P_u = farkas_rows(T, V.A @ gains.K_pred)
    P_Q = farkas_rows(T, Q)
    for P, target in [(P_x, Z.A), (P_u, V.A @ gains.K_pred), (P_Q, Q)]:
        resid = float(np.max(np.abs(P @ T - target)))
        if resid > 1e-8:
            raise InfeasibleCertificate(f"multiplier residual {resid:.2e} exceeds 1e-8")

    data = OfflineData(model=model, gains=gains, lam=lam, Lambda=Lambda,
                       Lambda_vertices=Lambda_vertices, S=S, P_i=P_i,
                       P_x=P_x, P_u=P_u, P_Q=P_Q, Z=Z, V=V, Q=Q,
                       terminal_tau=np.zeros(T.shape[0]),
                       terminal_cap=np.zeros(T.shape[0]),
                       tube_matrix=tube_matrix_stored)
    data.terminal_tau = terminal_feasibility_check(data, model)
    data.terminal_cap = terminal_cap_vector(data, model)
    return data


# ---------------------------------------------------------------------------
# Serialization

def _mat(M) -> list:
    return np.asarray(M, dtype=float).tolist()


def model_to_dict(model: UncertainModel) -> dict:
    return {
        "A_vertices": [_mat(A) for A in model.A_vertices],
        "B_vertices": [_mat(B) for B in model.B_vertices],
        "W": _mat(model.W.vertices),
        "W_large": _mat(model.W_large.vertices),
        "W_small": _mat(model.W_small.vertices),
        "X": {"A": _mat(model.X.A), "b": _mat(model.X.b)},
        "U": {"A": _mat(model.U.A), "b": _mat(model.U.b)},
    }


def model_from_dict(doc: dict) -> UncertainModel:
    return UncertainModel(
        A_vertices=tuple(np.asarray(A) for A in doc["A_vertices"]),
        B_vertices=tuple(np.asarray(B) for B in doc["B_vertices"]),
        W=VPolytope(doc["W"]),
        W_large=VPolytope(doc["W_large"]),
        W_small=VPolytope(doc["W_small"]),
        X=HPolytope(doc["X"]["A"], doc["X"]["b"]),
        U=HPolytope(doc["U"]["A"], doc["U"]["b"]),
    )


def gains_to_dict(gains: Gains) -> dict:
    return {"K_inv": _mat(gains.K_inv), "K_pred": _mat(gains.K_pred), "K_f": _mat(gains.K_f)}


def gains_from_dict(doc: dict) -> Gains:
    return Gains(np.asarray(doc["K_inv"]), np.asarray(doc["K_pred"]), np.asarray(doc["K_f"]))


def offline_content_hash(model, gains, lam, Q, tube_matrix=None) -> str:
    payload = {
        "model": model_to_dict(model),
        "gains": gains_to_dict(gains),
        "lambda": lam,
        "Q": _mat(Q),
        "tube_matrix": None if tube_matrix is None else _mat(tube_matrix),
    }
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def offline_to_json(data: OfflineData) -> str:
    doc = {
        "content_hash": data.content_hash,
        "lambda": data.lam,
        "model": model_to_dict(data.model),
        "gains": gains_to_dict(data.gains),
        "Q": _mat(data.Q),
        "Lambda": {"A": _mat(data.Lambda.A), "b": _mat(data.Lambda.b)},
        "Lambda_vertices": _mat(data.Lambda_vertices.vertices),
        "S": {"A": _mat(data.S.A), "b": _mat(data.S.b)},
        "P_i": [_mat(P) for P in data.P_i],
        "P_x": _mat(data.P_x),
        "P_u": _mat(data.P_u),
        "P_Q": _mat(data.P_Q),
        "Z": {"A": _mat(data.Z.A), "b": _mat(data.Z.b)},
        "V": {"A": _mat(data.V.A), "b": _mat(data.V.b)},
        "terminal_tau": _mat(data.terminal_tau),
        "terminal_cap": _mat(data.terminal_cap),
        "tube_matrix": None if data.tube_matrix is None else _mat(data.tube_matrix),
    }
    return json.dumps(doc)


def offline_from_json(text: str) -> OfflineData:
    doc = json.loads(text)
    model = model_from_dict(doc["model"])
    gains = gains_from_dict(doc["gains"])
    tube_matrix = None if doc["tube_matrix"] is None else np.asarray(doc["tube_matrix"])
    data = OfflineData(
        model=model, gains=gains, lam=doc["lambda"],
        Lambda=HPolytope(doc["Lambda"]["A"], doc["Lambda"]["b"]),
        Lambda_vertices=VPolytope(doc["Lambda_vertices"]),
        S=HPolytope(doc["S"]["A"], doc["S"]["b"]),
        P_i=[np.asarray(P) for P in doc["P_i"]],
        P_x=np.asarray(doc["P_x"]), P_u=np.asarray(doc["P_u"]), P_Q=np.asarray(doc["P_Q"]),
        Z=HPolytope(doc["Z"]["A"], doc["Z"]["b"]),
        V=HPolytope(doc["V"]["A"], doc["V"]["b"]),
        Q=np.asarray(doc["Q"]),
        terminal_tau=np.asarray(doc["terminal_tau"]),
        terminal_cap=np.asarray(doc["terminal_cap"]),
        tube_matrix=tube_matrix,
    )
    expected = offline_content_hash(model, gains, data.lam, data.Q, tube_matrix)
    if doc["content_hash"] != expected:
        raise ValueError("offline data is stale: content hash does not match its inputs")
    return data
