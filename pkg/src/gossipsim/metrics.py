"""Trace records, consensus diagnostics, and the convergence-rate bound.

Records are sampled every fixed number of executed events plus once at the
start and once at the horizon.  CSV serialization uses 17 significant
digits so reruns of the same config produce byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gossipsim.errors import InvalidInputError


def virtual_global(states: np.ndarray) -> np.ndarray:
    """Coordinate-wise mean of the per-agent reference models.

    Computed relative to the first row so that identical states return
    their common value bitwise (a plain mean re-rounds).
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] < 1:
        raise InvalidInputError("states must be a nonempty (N, d) array")
    return states[0] + (states - states[0]).mean(axis=0)


def consensus_distance(states: np.ndarray) -> float:
    """Mean squared deviation of agent models from their average.

    Shift invariant: equal states give exactly 0.0, which the protocol
    relies on right after every unification.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] < 1:
        raise InvalidInputError("states must be a nonempty (N, d) array")
    rel = states - states[0]
    mu = rel.mean(axis=0)
    return float(np.mean(np.sum((rel - mu) ** 2, axis=1)))


@dataclass(frozen=True)
class BoundInputs:
    """Everything the rate bound needs: constants, budgets, dispersion."""

    init_gap: float     # objective gap at the start point
    batches: int
    step: float
    psi_max: int
    zeta: float
    sigma: float
    n_agents: int
    L: float
    rho: float

    def step_limit(self) -> float:
        return 1.0 / (8.0 * self.batches * self.L * self.n_agents * self.psi_max)


def theorem_bound(inp: BoundInputs) -> tuple[float, bool]:
    """Explicit-constant upper bound on the best squared gradient norm.

    Six terms; the second diverges as the network shrinks toward four
    agents, so n_agents <= 4 yields (inf, False).  The validity flag also
    requires at least three messages of budget and the step-size ceiling
    1 / (8 * batches * L * N * psi).
    """
    if inp.n_agents <= 4:
        return math.inf, False
    b, g, psi = inp.batches, inp.step, inp.psi_max
    n, L = inp.n_agents, inp.L
    value = (
        128.0 * inp.init_gap / (11.0 * b * g * psi)
        + 11136.0 * inp.zeta ** 2 / (11.0 * (n - 4))
        + 252.0 * inp.sigma ** 2 / 11.0
        + 2592.0 * n * inp.zeta ** 2 / 11.0
        + 9216.0 * b * L ** 2 * g ** 2 * inp.sigma ** 2
        + 64.0 * L * g * inp.rho ** 2 * inp.sigma ** 2 / (11.0 * n * psi)
    )
    valid = (inp.n_agents > 4) and (inp.psi_max >= 3) and (inp.step <= inp.step_limit())
    return value, valid


@dataclass(frozen=True)
class TraceRecord:
    """One sampled snapshot of the network state and message counters."""

    time: float
    events: int
    global_loss: float
    virtual_grad_sq: float      # squared gradient of the mean model
    mixed_grad_sq: float        # squared norm of the mean of local gradients
    consensus: float
    sent: int
    delivered: int
    dropped_deadline: int
    dropped_budget: int
    agent_losses: tuple[float, ...]


@dataclass
class Counters:
    computes: int = 0
    transmits: int = 0
    sent: int = 0               # link-level send attempts
    delivered: int = 0          # arrivals executed before the horizon
    dropped_deadline: int = 0
    dropped_budget: int = 0
    accepted: int = 0           # messages applied in aggregations

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def snapshot(obj, states: np.ndarray, time: float, events: int,
             counters: Counters) -> TraceRecord:
    """Evaluate all record fields on the current states."""
    xbar = virtual_global(states)
    gv = obj.global_gradient(xbar)
    gm = np.zeros(obj.dim)
    losses = []
    for i in range(states.shape[0]):
        gm += obj.exact_gradient(i, states[i])
        losses.append(obj.loss(i, states[i]))
    gm /= states.shape[0]
    return TraceRecord(
        time=time,
        events=events,
        global_loss=obj.global_loss(xbar),
        virtual_grad_sq=float(gv @ gv),
        mixed_grad_sq=float(gm @ gm),
        consensus=consensus_distance(states),
        sent=counters.sent,
        delivered=counters.delivered,
        dropped_deadline=counters.dropped_deadline,
        dropped_budget=counters.dropped_budget,
        agent_losses=tuple(losses),
    )


class TraceSampler:
    """Emits a record every ``interval`` executed events, plus start and end."""

    def __init__(self, obj, interval: int):
        if interval < 1:
            raise InvalidInputError("sampling interval must be >= 1")
        self.obj = obj
        self.interval = int(interval)
        self.records: list[TraceRecord] = []
        self._last_events = -1

    def record(self, states, time, events, counters) -> None:
        self.records.append(snapshot(self.obj, states, time, events, counters))
        self._last_events = events

    def after_event(self, states_fn, time, events, counters) -> None:
        # states_fn is a provider so the state matrix is only built on hits
        if events % self.interval == 0:
            self.record(states_fn(), time, events, counters)

    def final(self, states, time, events, counters, force: bool = False) -> None:
        if force or events != self._last_events:
            self.record(states, time, events, counters)


@dataclass
class Trace:
    """Full output of one simulation run."""

    records: list[TraceRecord]
    final_models: np.ndarray
    counters: Counters
    weight_matrix: object
    bound_inputs: BoundInputs | None
    bound_value: float
    bound_valid: bool
    meta: dict = field(default_factory=dict)
    deltas: list[list[np.ndarray]] | None = None

    def min_mixed_grad_sq(self) -> float:
        return min(r.mixed_grad_sq for r in self.records)

    def final_record(self) -> TraceRecord:
        return self.records[-1]


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def csv_header(n_agents: int) -> str:
    cols = ["time", "events", "global_loss", "virtual_grad_sq", "mixed_grad_sq",
            "consensus", "sent", "delivered", "dropped_deadline", "dropped_budget"]
    cols.extend(f"loss_{i:03d}" for i in range(n_agents))
    return ",".join(cols)


def records_to_csv(records: list[TraceRecord]) -> str:
    if not records:
        raise InvalidInputError("no records to serialize")
    n_agents = len(records[0].agent_losses)
    lines = [csv_header(n_agents)]
    for r in records:
        row = [_fmt(r.time), str(r.events), _fmt(r.global_loss), _fmt(r.virtual_grad_sq),
               _fmt(r.mixed_grad_sq), _fmt(r.consensus), str(r.sent), str(r.delivered),
               str(r.dropped_deadline), str(r.dropped_budget)]
        row.extend(_fmt(v) for v in r.agent_losses)
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def trace_csv(trace: Trace) -> str:
    return records_to_csv(trace.records)


def final_models_csv(trace: Trace) -> str:
    """Per-agent final reference models: ``node,x_000,...`` rows."""
    models = np.asarray(trace.final_models)
    lines = ["node," + ",".join(f"x_{k:03d}" for k in range(models.shape[1]))]
    for i, row in enumerate(models):
        lines.append(f"{i}," + ",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def summary_dict(trace: Trace) -> dict:
    """JSON-ready run summary (deterministic: no wall-clock fields)."""
    last = trace.final_record()
    out = {
        "final_global_loss": last.global_loss,
        "final_virtual_grad_sq": last.virtual_grad_sq,
        "final_mixed_grad_sq": last.mixed_grad_sq,
        "final_consensus": last.consensus,
        "min_mixed_grad_sq": trace.min_mixed_grad_sq(),
        "counters": trace.counters.as_dict(),
        "rho_observed": trace.weight_matrix.rho if trace.weight_matrix is not None else None,
        "bound_value": trace.bound_value if math.isfinite(trace.bound_value) else "inf",
        "bound_valid": trace.bound_valid,
        "records": len(trace.records),
    }
    out.update(trace.meta)
    return out
