"""Polytopic set algebra: H/V representations, support functions, Minkowski
arithmetic, and the invariant/contractive set iterations used by the offline
synthesis.

All sets live in R^dim with dim <= 6 for the exact operations. Values are
immutable after construction; every operation is a pure function.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from .errors import (
    DegenerateSet,
    DimensionMismatch,
    EmptyInterior,
    EmptyResult,
    EmptySet,
    NotConverged,
    UnboundedSet,
)

_BIG = 1e9  # box used to detect unboundedness in per-row LPs


@dataclass(frozen=True)
class SetTolerance:
    """Numeric tolerances for feasibility and facet-redundancy tests."""

    feas_tol: float = 1e-8
    redundancy_tol: float = 1e-9

    def __post_init__(self):
        if self.feas_tol <= 0 or self.redundancy_tol <= 0:
            raise ValueError("tolerances must be strictly positive")


DEFAULT_TOL = SetTolerance()


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array")
    return M


class HPolytope:
    """Halfspace representation {x | A x <= b}."""

    __slots__ = ("A", "b", "dim")

    def __init__(self, A, b):
        A = _as_matrix(A, "A")
        b = np.asarray(b, dtype=float).ravel()
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
        if A.shape[0] == 0:
            raise ValueError("at least one inequality is required")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms < 1e-14):
            raise ValueError("rows of A must be nonzero")
        A.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "dim", A.shape[1])

    def __setattr__(self, name, value):
        raise AttributeError("HPolytope is immutable")

    def __repr__(self):
        return f"HPolytope(rows={self.A.shape[0]}, dim={self.dim})"

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @staticmethod
    def box(lower, upper) -> "HPolytope":
        """Axis-aligned box {x | lower <= x <= upper}."""
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise DimensionMismatch("box bounds differ in length")
        if np.any(lower >= upper):
            raise ValueError("box needs lower < upper in every coordinate")
        n = lower.size
        eye = np.eye(n)
        return HPolytope(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    def contains_point(self, x, tol: float = DEFAULT_TOL.feas_tol) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise DimensionMismatch(f"point has dim {x.size}, polytope {self.dim}")
        return bool(np.all(self.A @ x <= self.b + tol))

    def contains_points(self, X, tol: float = DEFAULT_TOL.feas_tol) -> np.ndarray:
        """Vectorized membership for an (n, dim) array of points."""
        X = _as_matrix(X, "X")
        return np.all(X @ self.A.T <= self.b + tol, axis=1)

    def is_empty(self, tol: float = DEFAULT_TOL.feas_tol) -> bool:
        res = _lp(np.zeros(self.dim), self.A, self.b)
        return res.status == 2

    def chebyshev_center(self) -> tuple[np.ndarray, float]:
        """Center and radius of the largest inscribed ball; radius < 0 if empty."""
        norms = np.linalg.norm(self.A, axis=1)
        c = np.zeros(self.dim + 1)
        c[-1] = -1.0
        A_ub = np.hstack([self.A, norms[:, None]])
        res = linprog(c, A_ub=A_ub, b_ub=self.b,
                      bounds=[(-_BIG, _BIG)] * self.dim + [(None, _BIG)],
                      method="highs")
        if res.status == 2:
            return np.full(self.dim, np.nan), -np.inf
        return res.x[:-1], res.x[-1]

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) coordinate bounds; raises UnboundedSet."""
        lower = np.empty(self.dim)
        upper = np.empty(self.dim)
        for i in range(self.dim):
            d = np.zeros(self.dim)
            d[i] = 1.0
            upper[i] = support(self, d)
            lower[i] = -support(self, -d)
        return lower, upper

    def normalized(self) -> "HPolytope":
        """Rows rescaled so the right-hand side is all ones (requires b > 0,
        i.e. the origin strictly inside)."""
        if np.any(self.b <= 0):
            raise EmptyInterior("normalization to unit rhs needs b > 0 in every row")
        return HPolytope(self.A / self.b[:, None], np.ones(self.num_rows))

    def to_json(self) -> str:
        return json.dumps({"A": self.A.tolist(), "b": self.b.tolist()})


class VPolytope:
    """Vertex representation conv{v_1, ..., v_k}."""

    __slots__ = ("vertices", "dim")

    def __init__(self, vertices):
        V = _as_matrix(vertices, "vertices")
        if V.shape[0] == 0:
            raise ValueError("at least one vertex is required")
        V.flags.writeable = False
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "dim", V.shape[1])

    def __setattr__(self, name, value):
        raise AttributeError("VPolytope is immutable")

    def __repr__(self):
        return f"VPolytope(vertices={self.num_vertices}, dim={self.dim})"

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @staticmethod
    def singleton(x) -> "VPolytope":
        return VPolytope(np.atleast_2d(np.asarray(x, dtype=float)))

    @staticmethod
    def box(lower, upper) -> "VPolytope":
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        n = lower.size
        corners = np.array(np.meshgrid(*[[lower[i], upper[i]] for i in range(n)],
                                       indexing="ij")).reshape(n, -1).T
        return VPolytope(corners)

    def to_json(self) -> str:
        return json.dumps({"V": self.vertices.tolist()})


def polytope_from_json(text: str):
    """Inverse of HPolytope.to_json / VPolytope.to_json."""
    doc = json.loads(text)
    if "V" in doc:
        return VPolytope(np.asarray(doc["V"], dtype=float))
    return HPolytope(np.asarray(doc["A"], dtype=float), np.asarray(doc["b"], dtype=float))


# ---------------------------------------------------------------------------
# LP helpers (scipy/HiGHS); these are one-shot anonymous LPs, distinct from the
# structured models in lp_core.

def _lp(c_min, A_ub, b_ub, bounds=None):
    if bounds is None:
        bounds = [(None, None)] * A_ub.shape[1]
    return linprog(c_min, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")


def _lp_max(d, A, b) -> tuple[float, int]:
    """max d'x s.t. Ax <= b. Returns (value, status); status 3 = unbounded."""
    res = _lp(-np.asarray(d, dtype=float), A, b)
    if res.status == 0:
        return -res.fun, 0
    return np.nan, res.status


def _check_same_dim(P, Q):
    if P.dim != Q.dim:
        raise DimensionMismatch(f"dims differ: {P.dim} vs {Q.dim}")


# ---------------------------------------------------------------------------
# Vertex utilities

def _unique_rows(X: np.ndarray, tol: float) -> np.ndarray:
    """Drop rows that coincide within tol (greedy, order-preserving)."""
    kept: list[np.ndarray] = []
    for row in X:
        if not any(np.max(np.abs(row - k)) <= tol for k in kept):
            kept.append(row)
    return np.array(kept)

def hull_vertices(points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Irredundant vertex set of conv(points), handling flat point clouds by
    working in the affine hull."""
    points = _as_matrix(points, "points")
    pts = _unique_rows(points, tol)
    if pts.shape[0] <= 1:
        return pts
    center = pts.mean(axis=0)
    centered = pts - center
    _, svals, Vt = np.linalg.svd(centered, full_matrices=False)
    scale = max(svals[0], 1.0)
    rank = int(np.sum(svals > 1e-9 * scale))
    if rank == 0:
        return pts[:1]
    if rank == 1:
        t = centered @ Vt[0]
        return pts[[int(np.argmin(t)), int(np.argmax(t))]]
    proj = centered @ Vt[:rank].T
    try:
        hull = ConvexHull(proj)
    except QhullError:
        hull = ConvexHull(proj, qhull_options="QJ")
    idx = np.sort(hull.vertices)
    return pts[idx]


def _vertices_of(P, tol: SetTolerance = DEFAULT_TOL) -> np.ndarray:
    if isinstance(P, VPolytope):
        return P.vertices
    return to_vrep(P, tol).vertices


# ---------------------------------------------------------------------------
# Core operations

def support(P, d, tol: SetTolerance = DEFAULT_TOL) -> float:
    """Support function max_{x in P} d'x (LP for H-rep, vertex max for V-rep)."""
    d = np.asarray(d, dtype=float).ravel()
    if d.size != P.dim:
        raise DimensionMismatch(f"direction has dim {d.size}, set has {P.dim}")
    if isinstance(P, VPolytope):
        return float(np.max(P.vertices @ d))
    val, status = _lp_max(d, P.A, P.b)
    if status == 2:
        raise EmptySet("support of an empty set")
    if status == 3:
        raise UnboundedSet("support direction is unbounded")
    if status != 0:
        raise EmptySet(f"support LP failed with status {status}")
    return float(val)


def to_vrep(P: HPolytope, tol: SetTolerance = DEFAULT_TOL) -> VPolytope:
    """Enumerate the vertices of a bounded, full-dimensional H-polytope."""
    center, radius = P.chebyshev_center()
    if radius == -np.inf:
        raise EmptySet("cannot enumerate vertices of an empty set")
    if radius < 1e-10:
        raise DegenerateSet(f"set is not full-dimensional (chebyshev radius {radius:.2e})")
    if np.max(np.abs(center)) > 0.9 * _BIG or radius > 0.9 * _BIG:
        raise UnboundedSet("halfspace system is unbounded")
    if P.dim == 1:
        lo, hi = P.bounding_box()
        return VPolytope(np.array([[lo[0]], [hi[0]]]))
    # scale rows to unit norm so qhull sees well-conditioned offsets
    norms = np.linalg.norm(P.A, axis=1)
    halfspaces = np.hstack([P.A / norms[:, None], (-P.b / norms)[:, None]])
    try:
        hs = HalfspaceIntersection(halfspaces, center)
    except QhullError as exc:
        if "unbounded" in str(exc).lower():
            raise UnboundedSet(str(exc)) from exc
        hs = HalfspaceIntersection(halfspaces, center, qhull_options="QJ")
    verts = hull_vertices(hs.intersections, tol=max(tol.redundancy_tol, 1e-9))
    if not np.all(np.isfinite(verts)):
        raise UnboundedSet("halfspace intersection produced non-finite vertices")
    return VPolytope(verts)


def to_hrep(V: VPolytope, tol: SetTolerance = DEFAULT_TOL) -> HPolytope:
    """Facet description of a full-dimensional vertex set."""
    pts = V.vertices
    if pts.shape[0] <= pts.shape[1]:
        raise DegenerateSet("too few vertices for a full-dimensional set")
    if V.dim == 1:
        lo, hi = float(pts.min()), float(pts.max())
        if hi - lo < 1e-12:
            raise DegenerateSet("vertex set is a single point")
        return HPolytope(np.array([[1.0], [-1.0]]), np.array([hi, -lo]))
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateSet(f"vertex set is not full-dimensional: {exc}") from exc
    # hull.equations rows are [normal, offset] with normal.x + offset <= 0
    eqs = _unique_rows(hull.equations, 1e-9)
    return HPolytope(eqs[:, :-1], -eqs[:, -1])


def minkowski_sum(P, Q, tol: SetTolerance = DEFAULT_TOL) -> VPolytope:
    """P (+) Q as the hull of pairwise vertex sums."""
    _check_same_dim(P, Q)
    vp = _vertices_of(P, tol)
    vq = _vertices_of(Q, tol)
    sums = (vp[:, None, :] + vq[None, :, :]).reshape(-1, P.dim)
    return VPolytope(hull_vertices(sums, tol=max(tol.redundancy_tol, 1e-9)))


def pontryagin_diff(P: HPolytope, S, tol: SetTolerance = DEFAULT_TOL) -> HPolytope:
    """P (-) S = {x | A x <= b - h}, h_i the support of S along row i.

    The result may be empty; callers check with ``is_empty``.
    """
    _check_same_dim(P, S)
    if isinstance(S, VPolytope):
        h = np.max(S.vertices @ P.A.T, axis=0)
    else:
        h = np.array([support(S, row, tol) for row in P.A])
    return HPolytope(P.A, P.b - h)


def contains_set(P: HPolytope, Q, tol: SetTolerance = DEFAULT_TOL) -> bool:
    """True iff Q subseteq P (vertex check; equivalent to the existence of a
    nonnegative multiplier matrix between the halfspace systems)."""
    _check_same_dim(P, Q)
    verts = _vertices_of(Q, tol)
    return bool(np.all(verts @ P.A.T <= P.b + tol.feas_tol))


def affine_image(M: np.ndarray, P) -> VPolytope:
    """{M x | x in P} from the vertex images."""
    M = _as_matrix(M, "M")
    verts = _vertices_of(P)
    if M.shape[1] != verts.shape[1]:
        raise DimensionMismatch(f"matrix maps dim {M.shape[1]}, set has dim {verts.shape[1]}")
    return VPolytope(hull_vertices(verts @ M.T))


def remove_redundant_rows(P: HPolytope, tol: SetTolerance = DEFAULT_TOL) -> HPolytope:
    """Minimal halfspace description: row i is redundant if its maximum over
    the remaining rows stays below b_i + redundancy_tol."""
    A = P.A.copy()
    b = P.b.copy()
    # exact duplicates (after unit normalization) go first, cheaply
    norms = np.linalg.norm(A, axis=1)
    stacked = np.hstack([A / norms[:, None], (b / norms)[:, None]])
    keep_mask = np.ones(len(b), dtype=bool)
    for i in range(len(b)):
        if not keep_mask[i]:
            continue
        dup = np.where(keep_mask & (np.max(np.abs(stacked - stacked[i]), axis=1) <= 1e-12))[0]
        keep_mask[dup[dup > i]] = False
    idx = np.where(keep_mask)[0]
    A, b = A[idx], b[idx]

    keep = list(range(len(b)))
    i = 0
    while i < len(keep):
        others = keep[:i] + keep[i + 1:]
        if not others:
            break
        r = keep[i]
        val, status = _lp_max(A[r], A[others], b[others])
        if status == 0 and val <= b[r] + tol.redundancy_tol:
            keep.pop(i)
        else:
            i += 1
    return HPolytope(A[keep], b[keep])


# ---------------------------------------------------------------------------
# Invariant / contractive set iterations

def lambda_contractive_set(A_cl, lam: float, X0: HPolytope,
                           max_iter: int = 200,
                           tol: SetTolerance = DEFAULT_TOL,
                           shape_disturbance: VPolytope | None = None) -> HPolytope:
    """Largest set L inside X0 with A_i L subseteq lam * L for every vertex
    matrix, via iterated pre-set intersection. Output is normalized to unit
    right-hand side, so L = {z | T z <= 1}.

    With ``shape_disturbance`` W the pre-set uses A_i z + w instead of A_i z
    (the invariant set of the lam-scaled dynamics under w in W), which leaves
    a margin for an additive disturbance the downstream tube must absorb. The
    result then satisfies A_i L (+) lam W subseteq lam L and in particular is
    still lam-contractive. W = {0} or None recovers the plain iteration.
    """
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    A_cl = [np.asarray(M, dtype=float) for M in A_cl]
    Wv = None
    if shape_disturbance is not None and np.max(np.abs(shape_disturbance.vertices)) > 1e-14:
        Wv = shape_disturbance.vertices
        if Wv.shape[1] != X0.dim:
            raise DimensionMismatch("shape disturbance dimension differs from X0")
    current = remove_redundant_rows(X0.normalized(), tol)
    for _ in range(max_iter):
        T = current.A
        if Wv is None:
            cand = np.vstack([T @ M / lam for M in A_cl])
        else:
            margin = 1.0 - np.max(Wv @ T.T, axis=0)
            if np.any(margin <= 1e-12):
                raise EmptyInterior("disturbance too large for a contractive set at this lambda")
            cand = np.vstack([(T @ M / lam) / margin[:, None] for M in A_cl])
        cand = cand[np.linalg.norm(cand, axis=1) > 1e-12]
        new_rows = []
        for row in cand:
            val, status = _lp_max(row, current.A, current.b)
            if status != 0 or val > 1.0 + tol.feas_tol:
                new_rows.append(row)
        if not new_rows:
            return current
        stacked = HPolytope(np.vstack([current.A, np.array(new_rows)]),
                            np.ones(current.num_rows + len(new_rows)))
        current = remove_redundant_rows(stacked, tol)
    raise NotConverged(f"contractive-set iteration did not settle in {max_iter} steps")


def max_rpi_set(A_cl, W: VPolytope, X: HPolytope,
                max_iter: int = 200,
                tol: SetTolerance = DEFAULT_TOL) -> HPolytope:
    """Maximal robust positively invariant subset of X for
    x+ = A_i x + w, w in W, by backward iteration. The output is certified
    vertex-wise before returning."""
    A_cl = [np.asarray(M, dtype=float) for M in A_cl]
    if W.dim != X.dim:
        raise DimensionMismatch("disturbance and state sets differ in dimension")
    current = remove_redundant_rows(X, tol)
    converged = False
    for _ in range(max_iter):
        T, b = current.A, current.b
        h_w = np.max(W.vertices @ T.T, axis=0)
        new_rows, new_rhs = [], []
        for M in A_cl:
            TA = T @ M
            rhs = b - h_w
            for row, r in zip(TA, rhs):
                if np.linalg.norm(row) < 1e-12:
                    if r < -tol.feas_tol:
                        raise EmptyResult("disturbance too large for the constraint set")
                    continue
                val, status = _lp_max(row, current.A, current.b)
                if status != 0 or val > r + tol.feas_tol:
                    new_rows.append(row)
                    new_rhs.append(r)
        if not new_rows:
            converged = True
            break
        stacked = HPolytope(np.vstack([current.A, np.array(new_rows)]),
                            np.concatenate([current.b, np.array(new_rhs)]))
        if stacked.is_empty(tol.feas_tol):
            raise EmptyResult("maximal RPI subset is empty")
        current = remove_redundant_rows(stacked, tol)
    if not converged:
        raise NotConverged(f"RPI iteration did not settle in {max_iter} steps")
    # Definition-1 certificate on the result
    verts = _vertices_of(current, tol)
    for M in A_cl:
        images = verts @ M.T
        for w in W.vertices:
            if not np.all((images + w) @ current.A.T <= current.b + 1e-7):
                raise EmptyResult("RPI certificate failed on the converged set")
    return current


# ---------------------------------------------------------------------------
# Volume

def volume(P, method: str = "exact", samples: int = 10**5, seed: int = 0,
           tol: SetTolerance = DEFAULT_TOL):
    """Volume of a bounded polytope.

    exact       -> float, from the convex-hull triangulation (dim <= 6)
    montecarlo  -> (estimate, standard_error), hit ratio times bounding-box
                   volume; deterministic for a fixed seed
    """
    if method == "exact":
        if P.dim > 6:
            raise ValueError("exact volume is only supported for dim <= 6")
        verts = _vertices_of(P, tol)
        if verts.shape[0] <= P.dim:
            return 0.0
        if P.dim == 1:
            return float(verts.max() - verts.min())
        try:
            return float(ConvexHull(verts).volume)
        except QhullError:
            return 0.0
    if method == "montecarlo":
        if samples < 1:
            raise ValueError("samples must be positive")
        H = P if isinstance(P, HPolytope) else to_hrep(P, tol)
        if isinstance(P, VPolytope):
            lower = P.vertices.min(axis=0)
            upper = P.vertices.max(axis=0)
        else:
            lower, upper = P.bounding_box()
        box_vol = float(np.prod(upper - lower))
        rng = np.random.default_rng(seed)
        hits = 0
        chunk = 200_000
        done = 0
        while done < samples:
            n = min(chunk, samples - done)
            pts = rng.uniform(lower, upper, size=(n, P.dim))
            hits += int(np.sum(H.contains_points(pts, tol.feas_tol)))
            done += n
        p = hits / samples
        est = p * box_vol
        stderr = box_vol * np.sqrt(max(p * (1 - p), 0.0) / samples)
        return est, stderr
    raise ValueError(f"unknown volume method {method!r}")
