from fractions import Fraction

import numpy as np
import pytest

from etdmpc.constraints import ScaledGeometry, Weights
from etdmpc.dynamics import LinearModel, TimingConfig, hover_plan, make_plan
from etdmpc.network import SwarmBuffer
from etdmpc.sim import generate_scenario, run
from etdmpc.verify import (
    axis_displacement_bound, check_lemma1, check_theorem1, check_theorem2, delta_p_max,
    executed_positions, is_certified,
)

MODEL = LinearModel.triple_integrator()


def grid_displacement(v, a, u, tau_max, n_grid=20, n_tau=50):
    """Largest |v0 t + a0 t^2/2 + j t^3/6| over a grid of the box and of t."""
    vv = np.linspace(-v, v, n_grid)[:, None, None, None]
    aa = np.linspace(-a, a, n_grid)[None, :, None, None]
    uu = np.linspace(-u, u, n_grid)[None, None, :, None]
    t = np.linspace(0, tau_max, n_tau)[None, None, None, :]
    return float(np.max(np.abs(vv * t + aa * t ** 2 / 2 + uu * t ** 3 / 6)))


def test_bound_matches_oracle_for_default_box():
    w, certified = axis_displacement_bound(MODEL, Fraction(1, 9))
    assert certified
    oracle = grid_displacement(1.0, 2.0, 5.0, 1 / 9)
    np.testing.assert_allclose(w, oracle, rtol=1e-12)


def test_scaled_bound_uses_inverse_metric():
    geom = ScaledGeometry.default()
    w, _ = axis_displacement_bound(MODEL, Fraction(1, 3))
    expect = np.linalg.norm(w * np.array([1.0, 1.0, 0.5]))
    assert delta_p_max(MODEL, geom, Fraction(1, 3)) == pytest.approx(expect)


def test_non_nilpotent_model_is_sampled():
    A = MODEL.A.copy()
    A[6:, 3:6] = -np.eye(3)  # velocity feedback on the jerk channel
    m = LinearModel(A, MODEL.B, 3, MODEL.x_min, MODEL.x_max, MODEL.u_min, MODEL.u_max)
    assert not is_certified(m)
    w, certified = axis_displacement_bound(m, 0.2)
    assert not certified and np.all(w > 0)


def test_negative_horizon_rejected():
    with pytest.raises(ValueError):
        axis_displacement_bound(MODEL, -0.1)


def test_lemma1_flags_close_plans():
    t = TimingConfig()
    geom = ScaledGeometry.default()
    ok = SwarmBuffer([hover_plan(MODEL, t, 0, [0, 0, 1]), hover_plan(MODEL, t, 0, [1, 0, 1])], [0, 0], 0)
    bad = SwarmBuffer([hover_plan(MODEL, t, 1, [0, 0, 1]), hover_plan(MODEL, t, 1, [0.5, 0, 1])], [1, 1], 1)
    rep = check_lemma1([ok, bad], geom)
    assert rep.violations == t.h_c + 1
    assert rep.first_violation.round == 1 and rep.first_violation.pair == (0, 1)
    assert rep.min_scaled_distance_at_samples == pytest.approx(0.5)
    assert check_lemma1([ok], geom).ok


def test_executed_positions_follow_plan():
    t = TimingConfig()
    x0 = np.zeros(9)
    U = np.zeros((t.h_s, 3))
    U[0] = [1.0, 0, 0]
    plans = [make_plan(MODEL, t, 0, x0, U)]
    buf = SwarmBuffer(plans, [0], 0)
    times, pos, is_sample = executed_positions([buf], MODEL, substeps=4)
    assert len(times) == 5 and is_sample[0] and is_sample[-1] and not is_sample[1:-1].any()
    tau = times - times[0]
    np.testing.assert_allclose(pos[0, :, 0], tau ** 3 / 6, atol=1e-14)


@pytest.fixture(scope="module")
def small_run():
    timing = TimingConfig(Tc=Fraction(1, 9), Tb=Fraction(1, 9))
    geom = ScaledGeometry.default(r_min=0.3)
    sc = generate_scenario(4, 2, MODEL.x_min[:3], MODEL.x_max[:3], geom, seed=7)
    return run(sc, MODEL, timing, geom, Weights.default(MODEL), "pbt", rounds=30)


def test_theorem2_on_run(small_run):
    rep = small_run.dense
    assert rep.guarantee_configured and rep.certified_bound
    assert rep.ok
    assert rep.min_scaled_distance_dense >= small_run.history.geom.r_min
    assert rep.min_scaled_distance_dense <= rep.min_scaled_distance_executed_samples


def test_theorem1_reassembled_matches_logged(small_run):
    logged = check_theorem1(small_run.history, reassemble=False)
    rebuilt = check_theorem1(small_run.history, reassemble=True)
    assert logged.ok and rebuilt.ok
    assert rebuilt.checked == logged.checked == 30 * 2
    assert rebuilt.max_violation == pytest.approx(logged.max_violation, abs=1e-12)


def test_checks_leave_history_untouched(small_run):
    before = [b.digest() for b in small_run.history.buffers]
    check_lemma1(small_run.history.buffers, small_run.history.geom)
    check_theorem2(small_run.history.buffers, MODEL, small_run.history.geom)
    check_theorem1(small_run.history)
    assert [b.digest() for b in small_run.history.buffers] == before


def test_default_timing_is_not_configured_for_dense_guarantee():
    geom = ScaledGeometry.default()
    t = TimingConfig()
    buf = SwarmBuffer([hover_plan(MODEL, t, 0, [0, 0, 1]), hover_plan(MODEL, t, 0, [1, 0, 1])], [0, 0], 0)
    rep = check_theorem2([buf], MODEL, geom)
    assert rep.guarantee_configured is False
    assert rep.delta_p_max > (geom.r_hat_min - geom.r_min) / 2
