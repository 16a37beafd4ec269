"""Event generation, the replay queue, and superposition grouping."""

import math

import numpy as np
import pytest

from gossipsim import events, seeds
from gossipsim.errors import CausalityViolationError, InvalidInputError


class FixedUniform:
    """rng stub whose random() yields preset values."""

    def __init__(self, values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


# -------------------------------------------------------------- exponential

def test_sample_exponential_inverse_cdf_value():
    # u fixed at e^-1 with rate 0.1 maps to 10
    rng = FixedUniform([1.0 - math.exp(-1.0)])
    assert abs(events.sample_exponential(0.1, rng) - 10.0) <= 1e-12


def test_sample_exponential_boundary_u_equals_one():
    rng = FixedUniform([0.0])  # u = 1 - 0 = 1 -> draw 0
    assert events.sample_exponential(2.0, rng) == 0.0


def test_sample_exponential_rejects_bad_rate():
    with pytest.raises(InvalidInputError):
        events.sample_exponential(0.0, np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        events.sample_exponential(-1.0, np.random.default_rng(0))


def test_sample_exponential_empirical_mean():
    rng = np.random.default_rng(77)
    draws = [events.sample_exponential(0.1, rng) for _ in range(100_000)]
    assert abs(np.mean(draws) - 10.0) <= 0.2


# -------------------------------------------------------------- poisson pmf

def test_poisson_pmf_unit_mean_values():
    assert abs(events.poisson_count_pmf(0.1, 10.0, 0) - math.exp(-1.0)) <= 1e-12
    assert abs(events.poisson_count_pmf(0.1, 10.0, 1) - math.exp(-1.0)) <= 1e-12


def test_poisson_pmf_normalizes():
    total = sum(events.poisson_count_pmf(0.1, 10.0, m) for m in range(101))
    assert abs(total - 1.0) <= 1e-12


def test_poisson_pmf_large_count_stays_finite():
    v = events.poisson_count_pmf(1.0, 1.0, 400)
    assert 0.0 <= v < 1e-300 or v == 0.0


# ----------------------------------------------------------------- schedule

def test_schedule_unification_times_and_round_robin_hubs():
    sched = events.generate_schedule([1e-9, 1e-9], [1e-9, 1e-9], 10.0, 5.0, seed=0)
    unify = [e for e in sched.events if e.kind == events.UNIFY]
    assert [e.time for e in unify] == [5.0, 10.0]
    assert [e.node for e in unify] == [0, 1]


def test_schedule_unification_count_is_floor_horizon_over_period():
    sched = events.generate_schedule([0.2] * 3, [0.2] * 3, 103.0, 10.0, seed=1)
    unify = [e for e in sched.events if e.kind == events.UNIFY]
    assert len(unify) == 10


def test_schedule_expected_compute_event_count():
    totals = []
    for seed in range(10):
        sched = events.generate_schedule([0.1] * 25, [0.1] * 25, 1000.0, 100.0, seed)
        totals.append(sum(1 for e in sched.events if e.kind == events.COMPUTE))
    assert abs(np.mean(totals) - 2500.0) <= 250.0


def test_schedule_is_sorted_with_unique_seqs():
    sched = events.generate_schedule([0.5] * 4, [0.3] * 4, 200.0, 40.0, seed=5)
    keys = [(e.time, e.seq) for e in sched.events]
    assert keys == sorted(keys)
    seqs = [e.seq for e in sched.events]
    assert len(set(seqs)) == len(seqs)
    assert all(e.time <= 200.0 for e in sched.events)


def test_schedule_same_seed_identical_dump():
    a = events.generate_schedule([0.2] * 5, [0.1] * 5, 300.0, 50.0, seed=9)
    b = events.generate_schedule([0.2] * 5, [0.1] * 5, 300.0, 50.0, seed=9)
    assert events.dump_schedule(a) == events.dump_schedule(b)


def test_schedule_dump_load_round_trip():
    sched = events.generate_schedule([0.2] * 3, [0.1] * 3, 120.0, 30.0, seed=2)
    loaded = events.load_schedule(events.dump_schedule(sched))
    assert loaded.horizon == sched.horizon and loaded.period == sched.period
    assert loaded.events == sched.events


def test_chunked_arrival_draws_match_stepwise_sampling():
    # vectorized generation consumes the stream exactly like scalar draws
    rate, horizon = 0.7, 50.0
    rng_a = seeds.substream(3, seeds.COMPUTE_SCHEDULE, 0)
    chunked = events._arrival_times(rate, horizon, rng_a)
    rng_b = seeds.substream(3, seeds.COMPUTE_SCHEDULE, 0)
    stepwise = []
    t = 0.0
    while True:
        t += events.sample_exponential(rate, rng_b)
        if t > horizon:
            break
        stepwise.append(t)
    assert chunked == stepwise


def test_schedule_rejects_bad_rates_and_period():
    with pytest.raises(InvalidInputError):
        events.generate_schedule([0.0], [0.1], 10.0, 5.0, seed=0)
    with pytest.raises(InvalidInputError):
        events.generate_schedule([0.1], [0.1], 10.0, 20.0, seed=0)


# -------------------------------------------------------------------- queue

def test_queue_tie_break_by_seq():
    evs = [events.Event(time=3.0, seq=0, node=0, kind=events.COMPUTE),
           events.Event(time=1.0, seq=1, node=0, kind=events.COMPUTE),
           events.Event(time=1.0, seq=2, node=0, kind=events.COMPUTE)]
    q = events.EventQueue(evs)
    order = [(q.pop().time, s) for s in (1, 2, 0)]
    assert [o[0] for o in order] == [1.0, 1.0, 3.0]


def test_queue_rejects_insert_before_clock():
    q = events.EventQueue([events.Event(time=5.0, seq=0, node=0, kind=events.COMPUTE)])
    q.pop()
    with pytest.raises(CausalityViolationError):
        q.push(events.Event(time=4.0, seq=q.next_seq(), node=0, kind=events.COMPUTE))


def test_queue_pop_empty_returns_none():
    assert events.EventQueue().pop() is None


def test_queue_operation_aliases():
    q = events.EventQueue()
    ev = events.Event(time=1.0, seq=q.next_seq(), node=0, kind=events.COMPUTE)
    events.insert(q, ev)
    assert events.pop_next(q) == ev
    assert events.pop_next(q) is None


def test_queue_random_inserts_pop_sorted():
    rng = np.random.default_rng(11)
    q = events.EventQueue()
    for _ in range(10_000):
        q.push(events.Event(time=float(rng.random() * 100.0), seq=q.next_seq(),
                            node=0, kind=events.COMPUTE))
    popped = []
    while (e := q.pop()) is not None:
        popped.append((e.time, e.seq))
    assert popped == sorted(popped)


# ------------------------------------------------------------- superposition

def brute_force_groups(arrivals, window):
    # independent greedy scan used as the reference
    groups = []
    i = 0
    while i < len(arrivals):
        start = arrivals[i][0]
        j = i
        while j < len(arrivals) and arrivals[j][0] <= start + window:
            j += 1
        groups.append(arrivals[i:j])
        i = j
    return groups


def test_group_superposition_window_semantics():
    arrivals = [(1.0, "a"), (1.0001, "b"), (5.0, "c")]
    groups = events.group_superposition(arrivals, 0.001)
    assert len(groups) == 2
    assert [m for _, m in groups[0][1]] == ["a", "b"]
    assert groups[0][0] == 1.0001  # group time is the latest arrival
    assert [m for _, m in groups[1][1]] == ["c"]


def test_group_superposition_zero_window():
    arrivals = [(1.0, "a"), (2.0, "b"), (3.0, "c")]
    groups = events.group_superposition(arrivals, 0.0)
    assert [len(g) for _, g in groups] == [1, 1, 1]


def test_group_superposition_matches_reference_scan():
    rng = np.random.default_rng(23)
    times = np.sort(rng.random(100) * 2.0)
    arrivals = [(float(t), k) for k, t in enumerate(times)]
    got = events.group_superposition(arrivals, 0.01)
    ref = brute_force_groups(arrivals, 0.01)
    assert [g for _, g in got] == ref


def test_group_superposition_rejects_unsorted():
    with pytest.raises(InvalidInputError):
        events.group_superposition([(2.0, "a"), (1.0, "b")], 0.1)
