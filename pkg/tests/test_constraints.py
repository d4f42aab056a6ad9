from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etdmpc.constraints import (
    Prediction, ScaledGeometry, SeparationViolation, Weights, assemble_qp,
    collision_constraints, difference_vectors, tvbvc_rows,
)
from etdmpc.dynamics import LinearModel, TimingConfig, hover_plan, make_plan
from etdmpc.network import SwarmBuffer, shift_plan
from etdmpc.qp import check_feasible

MODEL = LinearModel.triple_integrator()
GEOM = ScaledGeometry.default()


def buffer_at(positions, timing=TimingConfig(), k=0):
    plans = [hover_plan(MODEL, timing, k, p) for p in positions]
    return SwarmBuffer(plans, [k] * len(plans), k)


def moving_plan(timing, rng, start, k=0):
    x0 = np.zeros(9)
    x0[:3] = start
    U = rng.uniform(-0.3, 0.3, size=(timing.h_s, 3))
    return make_plan(MODEL, timing, k, x0, U)


class TestGeometry:
    def test_scaled_distance_weights_vertical(self):
        assert GEOM.scaled_distance([0, 0, 0], [0, 0, 1]) == pytest.approx(0.5)
        assert GEOM.scaled_distance([0, 0, 0], [1, 0, 0]) == pytest.approx(1.0)

    def test_rejects_r_hat_below_r_min(self):
        with pytest.raises(ValueError, match="r_hat_min"):
            ScaledGeometry(np.eye(3), r_min=0.5, r_hat_min=0.4)

    def test_rejects_indefinite_theta(self):
        with pytest.raises(ValueError, match="positive definite"):
            ScaledGeometry(np.diag([1.0, -1.0, 1.0]), 0.1, 0.2)

    def test_weights_must_be_positive_definite(self):
        with pytest.raises(ValueError):
            Weights(np.eye(9), np.zeros(3))


class TestHalfPlanes:
    def test_hover_rows_at_midpoint(self):
        # two hovering vehicles 2 m apart on x: planes at x = 1 -/+ r_hat/2
        rows = tvbvc_rows(hover_plan(MODEL, TimingConfig(), 0, [0, 0, 1]),
                          hover_plan(MODEL, TimingConfig(), 0, [2, 0, 1]), GEOM)
        np.testing.assert_allclose(rows.normals, np.tile([1.0, 0, 0], (16, 1)))
        np.testing.assert_allclose(rows.offsets, 1 + 1 - 0.5 * (0.7 + 2.0))

    def test_difference_vectors_antisymmetric(self):
        rng = np.random.default_rng(1)
        t = TimingConfig(Tc=Fraction(1, 9))
        a, b = moving_plan(t, rng, [0, 0, 1]), moving_plan(t, rng, [1.5, 0, 2])
        np.testing.assert_array_equal(difference_vectors(a, b, GEOM), -difference_vectors(b, a, GEOM))

    def test_self_pair_rejected(self):
        p = hover_plan(MODEL, TimingConfig(), 0, [0, 0, 1])
        with pytest.raises(ValueError):
            tvbvc_rows(p, p, GEOM)

    def test_close_previous_plans_raise(self):
        buf = buffer_at([[0, 0, 1], [0.3, 0, 1]])
        with pytest.raises(SeparationViolation) as exc:
            collision_constraints(0, buf, GEOM)
        assert (exc.value.i, exc.value.j) == (0, 1)

    def test_previous_plan_keeps_half_the_slack(self):
        rng = np.random.default_rng(5)
        t = TimingConfig(Tc=Fraction(1, 9))
        a, b = moving_plan(t, rng, [-1, 0, 1]), moving_plan(t, rng, [1, 0, 3])
        rows = tvbvc_rows(a, b, GEOM)
        steps = np.arange(t.h_c + 1) * t.tc_steps + t.steps_per_round
        margins = rows.margins(a.states_at_steps(steps)[:, :3])
        np.testing.assert_allclose(margins, 0.5 * (rows.distance - GEOM.r_hat_min), atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_mutual_rows_imply_separation(self, seed):
        """Any pair of positions meeting both vehicles' rows is r_hat apart."""
        rng = np.random.default_rng(seed)
        t = TimingConfig()
        while True:
            pa, pb = rng.uniform(-2, 2, 3), rng.uniform(-2, 2, 3)
            if GEOM.scaled_distance(pa, pb) >= GEOM.r_hat_min:
                break
        a, b = hover_plan(MODEL, t, 0, pa), hover_plan(MODEL, t, 0, pb)
        ra, rb = tvbvc_rows(a, b, GEOM, 0, 1), tvbvc_rows(b, a, GEOM, 1, 0)
        qa, qb = rng.uniform(-3, 3, 3), rng.uniform(-3, 3, 3)
        # project the candidates onto their row (sample 0) if they violate it
        for rows, q in ((ra, qa), (rb, qb)):
            c, off = rows.position_coeffs[0], rows.offsets[0]
            excess = c @ q - off
            if excess > 0:
                q -= excess * c / (c @ c)
        assert GEOM.scaled_distance(qa, qb) >= GEOM.r_hat_min - 1e-9


class TestAssembly:
    def setup_method(self):
        self.timing = TimingConfig(Tc=Fraction(1, 9), Tb=Fraction(1, 9))
        self.pred = Prediction(MODEL, self.timing)
        self.weights = Weights.default(MODEL)
        self.buf = buffer_at([[-1, -1, 1], [1, 1, 2], [0, 1.5, 4]], self.timing)
        self.target = np.array([1.0, -1.0, 2.0])

    def test_objective_matches_rollout(self):
        rng = np.random.default_rng(0)
        prob = assemble_qp(0, self.buf, MODEL, self.timing, GEOM, self.weights, self.target, self.pred)
        U = rng.uniform(-1, 1, size=(self.timing.h_s, 3))
        plan = make_plan(MODEL, self.timing, 0, self.buf.plans[0].state_at_step(self.timing.steps_per_round), U)
        xt = np.concatenate([self.target, np.zeros(6)])
        cost = 0.0
        for kappa, step in enumerate(self.pred.obj_steps):
            e = plan.states[step] - xt
            u = U[step // self.timing.ts_steps] if step // self.timing.ts_steps < len(U) else np.zeros(3)
            cost += e @ self.weights.Q @ e + u @ self.weights.R @ u
        assert prob.objective(U.reshape(-1)) == pytest.approx(cost, rel=1e-12)

    def test_rows_match_rollout(self):
        rng = np.random.default_rng(2)
        prob = assemble_qp(1, self.buf, MODEL, self.timing, GEOM, self.weights, self.target, self.pred)
        U = rng.uniform(-1, 1, size=(self.timing.h_s, 3))
        x0 = self.buf.plans[1].state_at_step(self.timing.steps_per_round)
        plan = make_plan(MODEL, self.timing, 1, x0, U)
        box = prob.ineq_groups["state_box"]
        n_box = box.stop // 2
        got = prob.ineq_matrix[:n_box] @ U.reshape(-1) - prob.ineq_upper[:n_box]
        want = plan.states[self.pred.box_steps].reshape(-1) - np.tile(MODEL.x_max, self.timing.h_b + 1)
        np.testing.assert_allclose(got, want, atol=1e-12)
        rows = collision_constraints(1, self.buf, GEOM)
        col = prob.ineq_groups["tvbvc"]
        got = prob.ineq_upper[col] - prob.ineq_matrix[col] @ U.reshape(-1)
        np.testing.assert_allclose(got, rows.margins(plan.states[self.pred.col_steps, :3]), atol=1e-12)
        term = prob.eq_matrix @ U.reshape(-1) - prob.eq_rhs
        np.testing.assert_allclose(term, plan.states[-1, 3:], atol=1e-12)

    def test_row_count(self):
        prob = assemble_qp(0, self.buf, MODEL, self.timing, GEOM, self.weights, self.target, self.pred)
        v = self.timing.h_s * 3
        assert prob.n_vars == v
        assert prob.ineq_upper.size == 2 * 9 * (self.timing.h_b + 1) + 2 * (self.timing.h_c + 1)
        assert prob.eq_rhs.size == 6
        assert prob.row_count() == 2 * v + prob.ineq_upper.size + 6

    def test_shifted_plan_feasible(self):
        prob = assemble_qp(2, self.buf, MODEL, self.timing, GEOM, self.weights, self.target, self.pred)
        rep = check_feasible(prob, shift_plan(self.buf.plans[2]).inputs.reshape(-1))
        assert rep.feasible, rep.violations

    def test_single_vehicle_has_no_collision_rows(self):
        buf = buffer_at([[0, 0, 1]], self.timing)
        prob = assemble_qp(0, buf, MODEL, self.timing, GEOM, self.weights, self.target, self.pred)
        assert prob.ineq_groups["tvbvc"] == slice(prob.ineq_upper.size, prob.ineq_upper.size)

    def test_target_dimension_checked(self):
        with pytest.raises(ValueError, match="target"):
            assemble_qp(0, self.buf, MODEL, self.timing, GEOM, self.weights, [1, 2], self.pred)

    def test_prediction_mismatch_rejected(self):
        with pytest.raises(ValueError, match="prediction"):
            assemble_qp(0, self.buf, MODEL, TimingConfig(), GEOM, self.weights, self.target, self.pred)
