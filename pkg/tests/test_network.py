import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etdmpc.dynamics import LinearModel, TimingConfig, evaluate_plan, hover_plan, make_plan
from etdmpc.network import FALLBACK, ProtocolViolation, RoundRecord, RoundTimeline, SwarmBuffer, commit_round, shift_plan
from etdmpc.trigger import TriggerDecision

MODEL = LinearModel.triple_integrator()


def random_plan(rng, timing, k=0):
    x0 = np.zeros(9)
    x0[:3] = rng.uniform(-1, 1, 3)
    return make_plan(MODEL, timing, k, x0, rng.uniform(-2, 2, (timing.h_s, 3)))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), j=st.integers(0, 80), fine=st.booleans())
def test_shift_is_reindexing(seed, j, fine):
    timing = TimingConfig(Tc=Fraction(1, 9), Ts=Fraction(1, 9)) if fine else TimingConfig()
    plan = random_plan(np.random.default_rng(seed), timing)
    t = timing.T + j * timing.base_step
    shifted = shift_plan(plan)
    assert shifted.planned_round == plan.planned_round + 1
    np.testing.assert_array_equal(evaluate_plan(shifted, t), evaluate_plan(plan, t + timing.T))


def test_shift_pads_inputs_with_zeros():
    timing = TimingConfig()
    plan = random_plan(np.random.default_rng(0), timing)
    shifted = shift_plan(plan)
    np.testing.assert_array_equal(shifted.inputs[:-1], plan.inputs[1:])
    np.testing.assert_array_equal(shifted.inputs[-1], 0.0)


def test_timeline():
    tl = RoundTimeline(3, TimingConfig())
    assert tl.comm_window == (Fraction(1), Fraction(1) + Fraction(1, 10))
    assert tl.compute_window == (Fraction(11, 10), Fraction(4, 3))
    assert tl.activation_time == Fraction(4, 3)
    assert tl.control_window == (Fraction(4, 3), Fraction(5, 3))


class TestCommit:
    def setup_method(self):
        self.timing = TimingConfig()
        plans = [hover_plan(MODEL, self.timing, 0, [i, 0, 1]) for i in range(3)]
        self.buf = SwarmBuffer(plans, [0, -1, 0], 0)

    def new_plan(self, i):
        return hover_plan(MODEL, self.timing, 1, [i, 0.5, 1])

    def test_replanned_and_shifted(self):
        dec = TriggerDecision(((0, 2), (1, 0)), 2, 3)
        out = commit_round(self.buf, dec, {2: self.new_plan(2), 0: FALLBACK})
        assert out.current_round == 1
        assert out.last_replan_round == (0, -1, 1)
        np.testing.assert_array_equal(out.plans[0].states, shift_plan(self.buf.plans[0]).states)
        assert out.plans[2].states[0, 1] == 0.5

    def test_extra_plan_rejected(self):
        dec = TriggerDecision(((0, 2),), 1, 3)
        with pytest.raises(ProtocolViolation, match="unassigned"):
            commit_round(self.buf, dec, {2: self.new_plan(2), 1: self.new_plan(1)})

    def test_missing_result_rejected(self):
        dec = TriggerDecision(((0, 2), (1, 1)), 2, 3)
        with pytest.raises(ProtocolViolation, match="no result"):
            commit_round(self.buf, dec, {2: self.new_plan(2)})

    def test_stale_plan_rejected(self):
        dec = TriggerDecision(((0, 1),), 1, 3)
        with pytest.raises(ProtocolViolation, match="round"):
            commit_round(self.buf, dec, {1: hover_plan(MODEL, self.timing, 0, [0, 0, 1])})

    def test_input_buffer_untouched(self):
        before = self.buf.digest()
        commit_round(self.buf, TriggerDecision(((0, 1),), 1, 3), {1: self.new_plan(1)})
        assert self.buf.digest() == before

    def test_mixed_rounds_rejected(self):
        plans = [hover_plan(MODEL, self.timing, 0, [0, 0, 1]), hover_plan(MODEL, self.timing, 1, [1, 0, 1])]
        with pytest.raises(ValueError, match="belongs to round"):
            SwarmBuffer(plans, [0, 0], 0)


def test_round_record_roundtrip():
    rec = RoundRecord(4, [(0, 2), (1, 0)], [True, False, True], ["infeasible", "not_assigned", "optimal"],
                      inputs={2: [[0.1, 0.2, 0.3]]}, shift_violation={2: 0.0, 0: 1e-12})
    back = RoundRecord.from_dict(json.loads(rec.to_json()))
    assert back == rec
