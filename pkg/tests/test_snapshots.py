import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, rule

from ksvrg.data import synth_logistic
from ksvrg.objective import FiniteSumObjective, Loss
from ksvrg.optim import Method, OptimizerConfig, run
from ksvrg.snapshots import SnapshotStore


def test_init_uniform():
    s = SnapshotStore.init_uniform(5, np.zeros(3))
    assert s.live_count == 1
    assert sum(s.refcount(i) for i in s.live_ids()) == 5
    assert s.memory_report() == (1, 5)
    for i in range(5):
        assert np.array_equal(s.lookup(i), np.zeros(3))
    assert SnapshotStore.init_uniform(9, np.ones(2)).memory_report() == (1, 9)


def test_init_requires_n():
    with pytest.raises(ValueError):
        SnapshotStore.init_uniform(0, np.zeros(2))


def test_lookup_after_reassign():
    s = SnapshotStore.init_uniform(5, np.zeros(2))
    s.reassign([3], np.array([1.0, 2.0]))
    assert np.array_equal(s.lookup(3), [1.0, 2.0])
    assert np.array_equal(s.lookup(2), [0.0, 0.0])
    with pytest.raises(IndexError):
        s.lookup(5)
    with pytest.raises(ValueError):
        s.lookup(3)[0] = 7.0


def test_full_replacement_reclaims():
    s = SnapshotStore.init_uniform(4, np.zeros(2))
    s.reassign([0, 1, 2, 3], np.ones(2))
    assert s.live_count == 1
    s.check_invariants()


def test_refcount_hand_trace():
    s = SnapshotStore.init_uniform(4, np.zeros(2))
    s.reassign([0], np.ones(2))
    s.reassign([1], 2 * np.ones(2))
    # x0 keeps {2, 3}; v keeps {0}; w keeps {1}
    assert s.live_count == 3
    assert sorted(s.refcount(i) for i in s.live_ids()) == [1, 1, 2]


def test_empty_reassign_is_noop():
    s = SnapshotStore.init_uniform(4, np.zeros(2))
    before = s.assignment.copy()
    s.reassign([], np.ones(2))
    assert s.live_count == 1 and np.array_equal(s.assignment, before)


def test_out_of_range_leaves_store_unchanged():
    s = SnapshotStore.init_uniform(4, np.zeros(2))
    s.reassign([1], np.ones(2))
    before = (s.assignment.copy(), s.live_count)
    with pytest.raises(IndexError):
        s.reassign([0, 4], np.ones(2))
    with pytest.raises(IndexError):
        s.reassign([-1], np.ones(2))
    assert np.array_equal(s.assignment, before[0]) and s.live_count == before[1]
    s.check_invariants()


def test_dedup_by_event_not_content():
    s = SnapshotStore.init_uniform(4, np.zeros(2))
    s.reassign([0], np.zeros(2))
    assert s.live_count == 2


class StoreMachine(RuleBasedStateMachine):
    """Compare the store against a plain dict-of-vectors model."""

    n = 12

    def __init__(self):
        super().__init__()
        self.store = SnapshotStore.init_uniform(self.n, np.zeros(2))
        self.model = {i: (0, np.zeros(2)) for i in range(self.n)}
        self.events = 0

    @rule(phi=st.lists(st.integers(0, 11), max_size=12), v=st.floats(-5, 5))
    def reassign(self, phi, v):
        x = np.array([v, -v])
        self.store.reassign(phi, x)
        if phi:
            self.events += 1
            for i in phi:
                self.model[i] = (self.events, x)

    @invariant()
    def agrees(self):
        self.store.check_invariants()
        for i, (_, x) in self.model.items():
            assert np.array_equal(self.store.lookup(i), x)
        assert self.store.live_count == len({e for e, _ in self.model.values()})
        assert self.store.memory_report() == (self.store.live_count, self.n)


TestStoreMachine = StoreMachine.TestCase
TestStoreMachine.settings = settings(max_examples=60, stateful_step_count=30, deadline=None)


@given(st.lists(st.lists(st.integers(0, 7), max_size=8), max_size=25))
@settings(max_examples=80, deadline=None)
def test_refcount_audit(batches):
    s = SnapshotStore.init_uniform(8, np.zeros(1))
    for k, phi in enumerate(batches):
        s.reassign(phi, np.full(1, float(k)))
        s.check_invariants()
        assert sum(s.refcount(i) for i in s.live_ids()) == 8


def test_k2_memory_bound_small():
    obj = FiniteSumObjective(synth_logistic(30, 3, 0), Loss.LOGISTIC)
    lives = []
    res = run(OptimizerConfig(Method.K2SVRG, eta=0.1, k=3, outer_loops=60, seed=1), obj,
              on_refresh=lambda ev: lives.append(ev.store.live_count), record_wall=False)
    assert max(max(lives), res.store.live_count) <= 6


def test_v1_growth_bounded_by_loops():
    obj = FiniteSumObjective(synth_logistic(20, 3, 0), Loss.LOGISTIC)
    for M in (1, 3, 8):
        res = run(OptimizerConfig(Method.KSVRG_V1, eta=0.1, k=2, outer_loops=M, seed=0), obj, record_wall=False)
        assert res.store.memory_report()[0] <= M + 1


def test_v1_coupon_collector_trend():
    # probabilistic soft bound: exceeding it is reported, not fatal
    for k in (2, 4, 8):
        ell = 8
        obj = FiniteSumObjective(synth_logistic(k * ell, 3, k), Loss.LOGISTIC)
        peak = []
        M = 50 * k
        run(OptimizerConfig(Method.KSVRG_V1, eta=0.05, k=k, outer_loops=M, seed=k), obj,
            on_refresh=lambda ev: peak.append(ev.store.live_count), record_wall=False)
        soft = 4 * k * (1 + math.log(k))
        if max(peak) > soft:
            warnings.warn(f"k={k}: {max(peak)} live snapshots exceeds soft bound {soft:.1f}")
        assert max(peak) <= M + 1
