import numpy as np
import pytest

from tems import controller as ctl
from tems import lp_core as lp
from tems import offline_synth as osn
from tems import scenario_tree as st
from tems import simulator as sim
from tems.geometry import HPolytope, VPolytope


@pytest.fixture(scope="module")
def cstr():
    from tems import cstr_bench
    model, gains, defaults, data, data_low = cstr_bench.synthesize_cstr()
    return model, gains, defaults, data


@pytest.fixture(scope="module")
def noise_free():
    """CSTR vertex matrices with no additive disturbance at all."""
    from tems import cstr_bench
    model, gains, defaults = cstr_bench.load_cstr()
    zero = VPolytope.singleton(np.zeros(4))
    quiet = osn.UncertainModel(
        A_vertices=model.A_vertices, B_vertices=model.B_vertices,
        W=zero, W_large=zero, W_small=zero, X=model.X, U=model.U)
    data = osn.synthesize(quiet, gains, defaults["lambda"])
    return quiet, gains, defaults, data


# -- sampler ---------------------------------------------------------------------

def test_sampler_deterministic(cstr):
    model = cstr[0]
    a = sim.UncertaintySampler(seed=5).realizations(model, 7)
    b = sim.UncertaintySampler(seed=5).realizations(model, 7)
    for (A1, B1, w1), (A2, B2, w2) in zip(a, b):
        assert np.array_equal(A1, A2) and np.array_equal(B1, B2) and np.array_equal(w1, w2)


def test_sampler_draws_inside_hull_and_box(cstr):
    model = cstr[0]
    draws = sim.UncertaintySampler(seed=1).realizations(model, 50)
    stacked_A = np.array([A for A, _, _ in draws])
    # convex combination check: every entry between the vertex min and max
    lo = np.min([A for A in model.A_vertices], axis=0)
    hi = np.max([A for A in model.A_vertices], axis=0)
    assert np.all(stacked_A >= lo - 1e-12) and np.all(stacked_A <= hi + 1e-12)
    for _, _, w in draws:
        assert np.all(np.abs(w) <= 0.1 + 1e-12)


def test_sampler_vertices_and_cycle_modes(cstr):
    model = cstr[0]
    vdraws = sim.UncertaintySampler(seed=2, mode=sim.MODE_VERTICES).realizations(model, 20)
    v_ids = {tuple(np.round(A[0], 6)) for A, _, _ in vdraws}
    assert len(v_ids) > 1
    cdraws = sim.UncertaintySampler(seed=0, mode=sim.MODE_CYCLE).realizations(model, 16)
    assert np.array_equal(cdraws[0][2], model.W.vertices[0])
    assert np.array_equal(cdraws[1][2], model.W.vertices[1])


def test_sampler_rejects_unknown_mode():
    with pytest.raises(ValueError):
        sim.UncertaintySampler(seed=0, mode="nope")


# -- closed loop -------------------------------------------------------------------

def test_closed_loop_bit_identical_given_seed(cstr):
    model, gains, defaults, data = cstr
    spec = ctl.ControllerSpec(ctl.TUBE_GENERAL, 5, 1, defaults["Q"], defaults["R"])
    tree = st.build_tree(4, 1, 5, 1)
    prep = ctl.prepare(spec, data, tree)
    x0 = np.array([1.0, -0.5, 0.4, 0.2])
    a = sim.run_closed_loop(spec, data, tree, x0, 6, sim.UncertaintySampler(seed=3),
                            prepared=prep)
    b = sim.run_closed_loop(spec, data, tree, x0, 6, sim.UncertaintySampler(seed=3),
                            prepared=prep)
    assert all(np.array_equal(s1, s2) for s1, s2 in zip(a.states, b.states))
    assert a.values == b.values


def test_closed_loop_noise_free_stays_on_target(noise_free):
    model, gains, defaults, data = noise_free
    spec = ctl.ControllerSpec(ctl.TUBE_GENERAL, 5, 1, defaults["Q"], defaults["R"])
    tree = st.build_tree(4, 1, 5, 1)
    x0 = 0.3 * data.terminal_tau[0] * np.linalg.lstsq(
        data.Lambda.A, np.ones(data.n_r), rcond=None)[0]
    x0 = np.clip(x0, -0.2, 0.2)
    log = sim.run_closed_loop(spec, data, tree, x0, 8,
                              sim.UncertaintySampler(seed=1, mode=sim.MODE_VERTICES))
    assert log.completed
    assert all(model.U.contains_point(np.atleast_1d(u)) for u in log.inputs)
    assert max(log.values) <= 1e-6


def test_closed_loop_logs_are_consistent(cstr):
    model, gains, defaults, data = cstr
    spec = ctl.ControllerSpec(ctl.TUBE_GENERAL, 5, 0, defaults["Q"], defaults["R"])
    tree = st.build_tree(4, 1, 5, 0)
    log = sim.run_closed_loop(spec, data, tree, np.zeros(4), 5,
                              sim.UncertaintySampler(seed=8))
    assert len(log.states) == len(log.inputs) + 1
    assert len(log.statuses) == len(log.per_step_times)
    assert log.completed


def test_closed_loop_records_infeasible_and_stops(cstr):
    model, gains, defaults, data = cstr
    spec = ctl.ControllerSpec(ctl.TUBE_GENERAL, 5, 1, defaults["Q"], defaults["R"])
    tree = st.build_tree(4, 1, 5, 1)
    log = sim.run_closed_loop(spec, data, tree, np.array([4.99, 4.99, 2.99, 4.99]),
                              5, sim.UncertaintySampler(seed=8))
    assert log.statuses == [lp.INFEASIBLE]
    assert log.states[0].shape == (4,)
    assert not log.inputs


# -- volume estimation ----------------------------------------------------------------

def test_volume_zero_on_infeasible_region(cstr):
    model, gains, defaults, data = cstr
    spec = ctl.ControllerSpec(ctl.TUBE_GENERAL, 5, 1, defaults["Q"], defaults["R"])
    tree = st.build_tree(4, 1, 5, 1)
    corner = HPolytope.box([4.7, 4.7, 2.7, 4.7], [5.0, 5.0, 3.0, 5.0])
    vol, err = sim.estimate_feasible_volume(spec, data, tree, corner, 300, seed=1)
    assert vol == 0.0 and err == 0.0


def test_volume_stderr_shrinks_with_samples(cstr):
    model, gains, defaults, data = cstr
    spec = ctl.ControllerSpec(ctl.TUBE_GENERAL, 5, 0, defaults["Q"], defaults["R"])
    tree = st.build_tree(4, 1, 5, 0)
    v1, e1 = sim.estimate_feasible_volume(spec, data, tree, model.X, 400, seed=3)
    v2, e2 = sim.estimate_feasible_volume(spec, data, tree, model.X, 1600, seed=3)
    assert e2 < e1
    assert e2 == pytest.approx(e1 / 2, rel=0.35)  # ~sqrt(4) shrink


def test_volume_deterministic_and_worker_invariant(cstr):
    model, gains, defaults, data = cstr
    spec = ctl.ControllerSpec(ctl.TUBE_GENERAL, 5, 0, defaults["Q"], defaults["R"])
    tree = st.build_tree(4, 1, 5, 0)
    a = sim.estimate_feasible_volume(spec, data, tree, model.X, 300, seed=5, workers=1)
    b = sim.estimate_feasible_volume(spec, data, tree, model.X, 300, seed=5, workers=2)
    assert a == b


# -- timing ------------------------------------------------------------------------------

def test_benchmark_timing_single_row(cstr):
    model, gains, defaults, data = cstr
    spec = ctl.ControllerSpec(ctl.TUBE_GENERAL, 5, 0, defaults["Q"], defaults["R"])
    tree = st.build_tree(4, 1, 5, 0)
    rows = sim.benchmark_timing([spec], [data], [tree], [np.zeros(4)], repeats=1)
    assert len(rows) == 1
    row = rows[0]
    assert row["solves"] == 1 and row["all_optimal"]
    assert row["tube_recursion_rows_per_step"] == data.n_r * 4 * 1
    assert row["median_s"] > 0
