import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etdmpc.dynamics import LinearModel, TimingConfig, hover_plan
from etdmpc.network import SwarmBuffer
from etdmpc.trigger import PriorityParams, TriggerDecision, priorities, priority, select_pbt, select_round_robin

MODEL = LinearModel.triple_integrator()
TIMING = TimingConfig()


def buffer_at(positions, last=None, k=0):
    plans = [hover_plan(MODEL, TIMING, k, p) for p in positions]
    last = [k] * len(plans) if last is None else last
    return SwarmBuffer(plans, last, k)


def test_hand_computed_priority():
    # vehicle 0 heads along +x with vehicle 1 right in its way
    buf = buffer_at([[0, 0, 1], [1, 0, 1]], last=[-1, 0])
    targets = np.array([[3.0, 0, 1], [1.0, 0, 1]])
    p = PriorityParams(alpha1=1.0, alpha2=0.5, alpha3=1.0, beta=math.pi / 4)
    g = priorities(buf, targets, p)
    # xi = 3 - 1 = 2, cos = 1; waited = (1 - (-1)) * T
    assert g[0] == pytest.approx(3.0 + 0.5 * 2 / 3 - 2.0)
    # vehicle 1 is at its target: no distance, no cone term beyond cos(beta)
    assert g[1] == pytest.approx(0.0 + 0.5 * 1 / 3 - math.cos(math.pi / 4))
    assert priority(0, buf, targets, p) == g[0]


def test_at_target_gives_no_nan():
    buf = buffer_at([[0, 0, 1], [1, 1, 1]])
    g = priorities(buf, np.array([[0.0, 0, 1], [1, 1, 1]]), PriorityParams())
    assert np.all(np.isfinite(g))


def test_blocking_neighbor_lowers_priority():
    targets = np.array([[2.0, 0, 1], [-2.0, -2, 1]])
    clear = priorities(buffer_at([[0, 0, 1], [-1, 1, 1]]), targets, PriorityParams())
    blocked = priorities(buffer_at([[0, 0, 1], [1, 0, 1]]), targets, PriorityParams())
    assert blocked[0] < clear[0]


def test_longest_waiting_first():
    last = [3, -1, 1, 0, 2]
    buf = buffer_at([[i, 0, 1] for i in range(5)], last=last, k=3)
    prio = priorities(buf, np.zeros((5, 3)), PriorityParams(alpha1=0.0, alpha2=1.0, alpha3=0.0))
    assert select_pbt(prio, 3).vehicles == (1, 3, 2)


def test_pbt_ties_broken_by_index():
    assert select_pbt([1.0, 2.0, 2.0, 0.5], 2).assignment == ((0, 1), (1, 2))


def test_more_units_than_vehicles():
    dec = select_pbt([0.1, 0.3], 5)
    assert dec.vehicles == (1, 0)
    assert dec.gamma.shape == (5, 2) and dec.gamma.sum() == 2


def test_round_robin_examples():
    assert select_round_robin(0, 5, 2).vehicles == (0, 1)
    assert select_round_robin(1, 5, 2).vehicles == (2, 3)
    assert select_round_robin(2, 5, 2).vehicles == (4, 0)
    assert select_round_robin(7, 4, 4).vehicles == (0, 1, 2, 3)


@given(N=st.integers(1, 30), M=st.integers(1, 30), k0=st.integers(0, 100))
def test_round_robin_gap(N, M, k0):
    span = math.ceil(N / M)
    seen = set()
    for k in range(k0, k0 + span):
        seen.update(select_round_robin(k, N, M).vehicles)
    assert seen == set(range(N))


def test_decision_rejects_duplicates():
    with pytest.raises(ValueError):
        TriggerDecision(((0, 1), (1, 1)), 2, 3)


def test_params_validated():
    with pytest.raises(ValueError):
        PriorityParams(alpha1=-1.0)
    with pytest.raises(ValueError):
        PriorityParams(beta=math.pi)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(1e-3, 1e3), M=st.integers(1, 8))
def test_scaling_invariance(seed, scale, M):
    rng = np.random.default_rng(seed)
    N = 8
    buf = buffer_at(rng.uniform(-2, 2, (N, 3)), last=list(rng.integers(-1, 1, N)))
    prio = priorities(buf, rng.uniform(-2, 2, (N, 3)), PriorityParams())
    assert select_pbt(prio, M) == select_pbt(scale * prio, M)


def test_priority_grows_with_wait():
    pos = [[0, 0, 1], [2, 2, 2]]
    targets = np.array([[1.0, 1, 1], [0, 0, 3]])
    early = priorities(buffer_at(pos, last=[0, 0], k=0), targets, PriorityParams())
    late = priorities(buffer_at(pos, last=[0, 0], k=10), targets, PriorityParams())
    np.testing.assert_allclose(late - early, PriorityParams().alpha2 * 10 * float(TIMING.T))
