"""Trace records, diagnostics, and the rate-bound evaluator."""

import math

import numpy as np
import pytest

from gossipsim import metrics, problem
from gossipsim.errors import InvalidInputError


# ------------------------------------------------------------ virtual global

def test_virtual_global_of_equal_states():
    v = np.array([1.5, -2.0])
    states = np.tile(v, (6, 1))
    assert np.array_equal(metrics.virtual_global(states), v)


def test_virtual_global_two_scalars():
    assert metrics.virtual_global(np.array([[0.0], [2.0]]))[0] == 1.0


def test_virtual_global_matches_summation_oracle():
    rng = np.random.default_rng(4)
    states = rng.normal(0, 1, (25, 7))
    expected = sum(states[i] for i in range(25)) / 25.0
    np.testing.assert_allclose(metrics.virtual_global(states), expected,
                               rtol=0, atol=1e-12)


# --------------------------------------------------------- consensus distance

def test_consensus_zero_for_equal_states():
    states = np.tile(np.array([3.0, 4.0]), (5, 1))
    assert metrics.consensus_distance(states) == 0.0


def test_consensus_two_scalar_states():
    assert metrics.consensus_distance(np.array([[0.0], [2.0]])) == 1.0


def test_consensus_matches_two_pass_variance_oracle():
    rng = np.random.default_rng(6)
    states = rng.normal(0, 2, (12, 5))
    xbar = states.mean(axis=0)
    expected = sum(float(np.sum((s - xbar) ** 2)) for s in states) / 12.0
    assert abs(metrics.consensus_distance(states) - expected) <= 1e-12


# --------------------------------------------------------------- rate bound

def base_inputs(**kw):
    d = dict(init_gap=2.0, batches=4, step=1e-4, psi_max=5, zeta=0.0, sigma=0.0,
             n_agents=10, L=1.0, rho=0.5)
    d.update(kw)
    return metrics.BoundInputs(**d)


def test_bound_reduces_to_first_term_without_noise_or_divergence():
    inp = base_inputs()
    value, valid = metrics.theorem_bound(inp)
    expected = 128.0 * 2.0 / (11.0 * 4 * 1e-4 * 5)
    assert abs(value - expected) <= 1e-9 * expected
    assert valid


def test_bound_per_term_hand_evaluation():
    inp = base_inputs(init_gap=0.0, zeta=0.0, sigma=1.0)
    value, _ = metrics.theorem_bound(inp)
    b, g, psi, n, L, rho = 4, 1e-4, 5, 10, 1.0, 0.5
    expected = (252.0 / 11.0
                + 9216.0 * b * L**2 * g**2
                + 64.0 * L * g * rho**2 / (11.0 * n * psi))
    assert abs(value - expected) <= 1e-12 * expected


def test_bound_all_terms_with_divergence():
    inp = base_inputs(init_gap=1.0, zeta=0.3, sigma=0.7, rho=0.9)
    value, _ = metrics.theorem_bound(inp)
    b, g, psi, n, L = 4, 1e-4, 5, 10, 1.0
    expected = (128.0 * 1.0 / (11.0 * b * g * psi)
                + 11136.0 * 0.09 / (11.0 * (n - 4))
                + 252.0 * 0.49 / 11.0
                + 2592.0 * n * 0.09 / 11.0
                + 9216.0 * b * L**2 * g**2 * 0.49
                + 64.0 * L * g * 0.81 * 0.49 / (11.0 * n * psi))
    assert abs(value - expected) <= 1e-12 * expected


def test_bound_diverges_at_four_agents():
    value, valid = metrics.theorem_bound(base_inputs(n_agents=4))
    assert value == math.inf and not valid


def test_bound_validity_flags():
    assert not metrics.theorem_bound(base_inputs(psi_max=2))[1]
    assert not metrics.theorem_bound(base_inputs(step=1.0))[1]
    limit = base_inputs().step_limit()
    assert metrics.theorem_bound(base_inputs(step=limit))[1]


def test_bound_monotone_nonincreasing_in_budget():
    values = [metrics.theorem_bound(base_inputs(psi_max=p, zeta=0.1, sigma=0.5))[0]
              for p in range(3, 25)]
    assert all(a >= b for a, b in zip(values, values[1:]))


# ------------------------------------------------------------------ sampling

def run_sampler(total_events, interval):
    obj = problem.Quadratic(np.zeros((2, 2)))
    sampler = metrics.TraceSampler(obj, interval)
    states = np.zeros((2, 2))
    counters = metrics.Counters()
    sampler.record(states, 0.0, 0, counters)
    for k in range(1, total_events + 1):
        sampler.after_event(lambda: states, float(k), k, counters)
    sampler.final(states, float(total_events), total_events, counters)
    return sampler.records


def test_sampler_interval_hits():
    records = run_sampler(1000, 500)
    assert [r.events for r in records] == [0, 500, 1000]


def test_sampler_interval_larger_than_run():
    records = run_sampler(42, 500)
    assert [r.events for r in records] == [0, 42]


def test_sampler_rejects_bad_interval():
    obj = problem.Quadratic(np.zeros((1, 1)))
    with pytest.raises(InvalidInputError):
        metrics.TraceSampler(obj, 0)


# ----------------------------------------------------------------------- csv

def test_quadratic_virtual_gradient_closed_form():
    rng = np.random.default_rng(10)
    centers = rng.normal(0, 1, (5, 3))
    obj = problem.Quadratic(centers)
    states = rng.normal(0, 2, (5, 3))
    rec = metrics.snapshot(obj, states, 1.0, 1, metrics.Counters())
    xbar = states.mean(axis=0)
    cbar = centers.mean(axis=0)
    assert abs(rec.virtual_grad_sq - float(np.sum((xbar - cbar) ** 2))) <= 1e-12
    # for quadratics the mixed gradient equals the virtual one exactly
    assert abs(rec.mixed_grad_sq - rec.virtual_grad_sq) <= 1e-12


def test_csv_round_trips_floats_exactly():
    rng = np.random.default_rng(1)
    centers = rng.normal(0, 1, (3, 2))
    obj = problem.Quadratic(centers)
    states = rng.normal(0, 1, (3, 2))
    rec = metrics.snapshot(obj, states, math.pi, 7, metrics.Counters())
    text = metrics.records_to_csv([rec])
    header, row = text.strip().split("\n")
    assert header.split(",")[:3] == ["time", "events", "global_loss"]
    cells = row.split(",")
    assert float(cells[0]) == math.pi
    assert float(cells[2]) == rec.global_loss
    assert len(cells) == len(header.split(","))
