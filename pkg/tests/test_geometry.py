import numpy as np
import pytest
from scipy.spatial import ConvexHull

from tems import geometry as geo
from tems.errors import (DegenerateSet, DimensionMismatch, EmptyInterior,
                         UnboundedSet)
from tems.geometry import HPolytope, VPolytope


def random_hpolytope(rng, dim, rows=10):
    """Random bounded polytope with the origin inside: box plus random cuts."""
    box = HPolytope.box(-np.ones(dim) * rng.uniform(0.5, 2.0),
                        np.ones(dim) * rng.uniform(0.5, 2.0))
    A = rng.normal(size=(rows, dim))
    b = rng.uniform(0.3, 1.5, size=rows)
    return geo.remove_redundant_rows(HPolytope(np.vstack([box.A, A]),
                                               np.concatenate([box.b, b])))


def random_vpolytope(rng, dim, n_pts=8):
    pts = rng.normal(size=(n_pts, dim))
    return VPolytope(geo.hull_vertices(pts))


# -- minkowski sum -----------------------------------------------------------

def test_minkowski_identity_element():
    box = HPolytope.box([-1, -1], [1, 1])
    out = geo.minkowski_sum(box, VPolytope.singleton([0, 0]))
    assert sorted(map(tuple, out.vertices)) == sorted(map(tuple, geo.to_vrep(box).vertices))


def test_minkowski_box_sum_is_interval_sum():
    out = geo.minkowski_sum(HPolytope.box([-1, -1], [1, 1]),
                            HPolytope.box([-0.5, -0.5], [0.5, 0.5]))
    H = geo.to_hrep(out)
    expect = HPolytope.box([-1.5, -1.5], [1.5, 1.5])
    assert geo.contains_set(H, expect) and geo.contains_set(expect, out)


def test_minkowski_matches_pairwise_hull_oracle():
    rng = np.random.default_rng(3)
    for _ in range(5):
        pent = random_vpolytope(rng, 2, 5)
        tri = random_vpolytope(rng, 2, 3)
        out = geo.minkowski_sum(pent, tri)
        # independent oracle: hull of all pairwise sums straight through qhull
        sums = np.array([p + q for p in pent.vertices for q in tri.vertices])
        hull = ConvexHull(sums)
        oracle = sums[hull.vertices]
        assert out.num_vertices == len(oracle)
        got = sorted(map(tuple, np.round(out.vertices, 9)))
        want = sorted(map(tuple, np.round(oracle, 9)))
        assert got == want


def test_minkowski_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        geo.minkowski_sum(HPolytope.box([-1], [1]), HPolytope.box([-1, -1], [1, 1]))


# -- pontryagin difference ---------------------------------------------------

def test_pontryagin_zero_is_identity():
    X = HPolytope.box([-5, -5, -3, -5], [5, 5, 3, 5])
    out = geo.pontryagin_diff(X, VPolytope.singleton([0, 0, 0, 0]))
    assert np.allclose(out.b, X.b)


def test_pontryagin_box_difference():
    out = geo.pontryagin_diff(HPolytope.box([-1, -1], [1, 1]),
                              HPolytope.box([-0.25, -0.25], [0.25, 0.25]))
    assert np.allclose(out.b, 0.75)


def test_erosion_then_dilation_is_contained():
    rng = np.random.default_rng(11)
    for _ in range(8):
        P = random_hpolytope(rng, 3)
        S = VPolytope(0.2 * random_vpolytope(rng, 3).vertices)
        eroded = geo.pontryagin_diff(P, S)
        if eroded.is_empty():
            continue
        back = geo.minkowski_sum(eroded, S)
        assert geo.contains_set(P, back, geo.SetTolerance(feas_tol=1e-7))


# -- support -----------------------------------------------------------------

def test_support_unit_box():
    box = HPolytope.box([-1, -1], [1, 1])
    assert geo.support(box, [1, 0]) == pytest.approx(1.0)
    assert geo.support(box, [1, 1]) == pytest.approx(2.0)


def test_support_cstr_disturbance_box():
    W = VPolytope.box([-0.1] * 4, [0.1] * 4)
    for i in range(4):
        d = np.zeros(4)
        d[i] = 1.0
        assert geo.support(W, d) == pytest.approx(0.1)


def test_support_additivity_under_minkowski_sum():
    rng = np.random.default_rng(5)
    P = random_vpolytope(rng, 3, 7)
    Q = random_vpolytope(rng, 3, 6)
    M = geo.minkowski_sum(P, Q)
    for d in rng.normal(size=(100, 3)):
        lhs = geo.support(M, d)
        rhs = geo.support(P, d) + geo.support(Q, d)
        assert abs(lhs - rhs) < 1e-7


# -- representation conversion ----------------------------------------------

def test_to_vrep_square():
    V = geo.to_vrep(HPolytope.box([-1, -1], [1, 1]))
    assert sorted(map(tuple, V.vertices)) == [(-1, -1), (-1, 1), (1, -1), (1, 1)]


def test_vertex_active_set_oracle_3d():
    rng = np.random.default_rng(9)
    P = random_hpolytope(rng, 3)
    V = geo.to_vrep(P)
    for v in V.vertices:
        resid = P.A @ v - P.b
        assert np.max(resid) <= 1e-7              # inside
        assert np.sum(resid > -1e-6) >= 3         # at least dim active rows


def test_roundtrip_mutual_containment():
    rng = np.random.default_rng(21)
    for dim in (2, 3, 4):
        P = random_hpolytope(rng, dim)
        V = geo.to_vrep(P)
        H = geo.to_hrep(V)
        assert geo.contains_set(H, V)
        assert geo.contains_set(P, geo.to_vrep(H))
        assert geo.contains_set(H, geo.to_vrep(P))


def test_to_vrep_rejects_unbounded_and_degenerate():
    half = HPolytope(np.array([[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
                     np.array([1.0, 1.0, 1.0]))
    with pytest.raises(UnboundedSet):
        geo.to_vrep(half)
    flat = HPolytope(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
                     np.array([1.0, -1.0, 1.0, 1.0]))
    with pytest.raises(DegenerateSet):
        geo.to_vrep(flat)


# -- containment -------------------------------------------------------------

def test_contains_self_and_strict():
    P = HPolytope.box([-1, -1], [1, 1])
    assert geo.contains_set(P, P)
    assert not geo.contains_set(P, HPolytope.box([-2, -2], [2, 2]))


# -- contractive sets --------------------------------------------------------

def test_contractive_already_contractive_box():
    out = geo.lambda_contractive_set([0.5 * np.eye(2)], 0.9,
                                     HPolytope.box([-1, -1], [1, 1]))
    expect = HPolytope.box([-1, -1], [1, 1])
    assert geo.contains_set(out, geo.to_vrep(expect))
    assert geo.contains_set(expect, geo.to_vrep(out))


def test_contractive_scalar_tight():
    out = geo.lambda_contractive_set([np.array([[0.8]])], 0.8,
                                     HPolytope.box([-1], [1]))
    assert geo.support(out, [1.0]) == pytest.approx(1.0)
    assert geo.support(out, [-1.0]) == pytest.approx(1.0)


def test_contractive_vertex_certificate_random_systems():
    rng = np.random.default_rng(2)
    lam = 0.8
    for _ in range(6):
        dim = int(rng.integers(2, 4))
        mats = []
        for _ in range(int(rng.integers(1, 3))):
            A = rng.normal(size=(dim, dim))
            A *= rng.uniform(0.3, 0.95) * lam / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-9)
            mats.append(A)
        X0 = random_hpolytope(rng, dim)
        lam_set = geo.lambda_contractive_set(mats, lam, X0)
        verts = geo.to_vrep(lam_set).vertices
        for M in mats:
            assert np.max(verts @ M.T @ lam_set.A.T / lam - 1.0) <= 1e-7


def test_contractive_rejects_bad_lambda_and_interior():
    with pytest.raises(ValueError):
        geo.lambda_contractive_set([np.eye(2) * 0.5], 1.2, HPolytope.box([-1, -1], [1, 1]))
    shifted = HPolytope(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
                        np.array([3.0, -1.0, 1.0, 1.0]))  # origin outside
    with pytest.raises(EmptyInterior):
        geo.lambda_contractive_set([np.eye(2) * 0.5], 0.9, shifted)


# -- maximal RPI sets --------------------------------------------------------

def test_max_rpi_no_disturbance_contractive_map():
    X = HPolytope.box([-1, -1], [1, 1])
    out = geo.max_rpi_set([0.5 * np.eye(2)], VPolytope.singleton([0, 0]), X)
    assert geo.contains_set(out, geo.to_vrep(X))


def test_max_rpi_scalar_one_step():
    out = geo.max_rpi_set([np.array([[0.5]])], VPolytope(np.array([[-0.1], [0.1]])),
                          HPolytope.box([-1], [1]))
    assert geo.support(out, [1.0]) == pytest.approx(1.0)


def test_max_rpi_vertex_image_certificate():
    rng = np.random.default_rng(17)
    for _ in range(5):
        A = rng.normal(size=(2, 2))
        A *= 0.6 / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-9)
        W = VPolytope.box([-0.05, -0.05], [0.05, 0.05])
        X = random_hpolytope(rng, 2)
        out = geo.max_rpi_set([A], W, X)
        verts = geo.to_vrep(out).vertices
        for w in W.vertices:
            assert np.all((verts @ A.T + w) @ out.A.T <= out.b + 1e-7)


# -- volume ------------------------------------------------------------------

def test_volume_box_exact():
    assert geo.volume(HPolytope.box([-1] * 4, [1] * 4)) == pytest.approx(16.0)


def test_volume_simplex():
    tri = VPolytope(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    assert geo.volume(tri) == pytest.approx(0.5)


def test_volume_montecarlo_matches_exact():
    rng = np.random.default_rng(8)
    for dim in (3, 4):
        P = random_hpolytope(rng, dim)
        exact = geo.volume(P)
        est, se = geo.volume(P, "montecarlo", samples=200_000, seed=4)
        assert abs(est - exact) <= 3 * se + 1e-12


def test_volume_montecarlo_deterministic():
    P = HPolytope.box([-1, -1], [1, 1])
    a = geo.volume(P, "montecarlo", samples=5000, seed=7)
    b = geo.volume(P, "montecarlo", samples=5000, seed=7)
    assert a == b


# -- serialization -----------------------------------------------------------

def test_json_roundtrip():
    P = HPolytope.box([-1, -2], [3, 4])
    P2 = geo.polytope_from_json(P.to_json())
    assert np.allclose(P2.A, P.A) and np.allclose(P2.b, P.b)
    V = VPolytope(np.array([[0.0, 1.0], [1.0, 0.0]]))
    V2 = geo.polytope_from_json(V.to_json())
    assert np.allclose(V2.vertices, V.vertices)


def test_immutability():
    P = HPolytope.box([-1], [1])
    with pytest.raises(Exception):
        P.A[0, 0] = 5.0
    with pytest.raises(AttributeError):
        P.b = np.zeros(2)
