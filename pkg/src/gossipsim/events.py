"""Continuous-timeline event generation and the deterministic replay queue.

Compute and transmit events are two independent Poisson streams per agent;
model-sync events sit at fixed multiples of the period with a round-robin
hub.  The whole schedule is generated up front from named RNG substreams
and totally ordered by ``(time, seq)``, where ``seq`` is assigned once at
generation (ties broken by event kind, then agent id).  Receive events are
not pre-generated: link delays depend on channel state at send time, so
the replay loop inserts them while running, which the queue allows as long
as causality holds.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from gossipsim import seeds
from gossipsim.errors import CausalityViolationError, InvalidInputError

COMPUTE = "compute"
TRANSMIT = "transmit"
RECEIVE = "receive"
UNIFY = "unify"
GROUP_CLOSE = "close"

_SCHEDULED_KINDS = (COMPUTE, TRANSMIT, UNIFY)
_KIND_RANK = {COMPUTE: 0, TRANSMIT: 1, UNIFY: 2}


@dataclass(frozen=True)
class Event:
    """One timestamped action on the continuous timeline.

    ``node`` is the acting agent (the hub for ``UNIFY``, the receiver for
    ``RECEIVE``/``GROUP_CLOSE``).  ``payload`` carries the in-flight message
    for receive events.
    """

    time: float
    seq: int
    node: int
    kind: str
    payload: Any = None

    def __post_init__(self):
        if not math.isfinite(self.time) or self.time < 0.0:
            raise InvalidInputError(f"event time must be finite and >= 0, got {self.time}")


@dataclass
class EventSchedule:
    """Pre-generated, (time, seq)-sorted events plus horizon and period."""

    events: list[Event]
    horizon: float
    period: float


def sample_exponential(rate: float, rng) -> float:
    """One draw from exp(rate) via the inverse CDF ``-ln(u)/rate``.

    ``u`` is uniform on (0, 1]; the boundary u == 1 maps to 0.0 exactly.
    """
    if rate <= 0.0:
        raise InvalidInputError(f"rate must be > 0, got {rate}")
    u = 1.0 - rng.random()
    return -math.log(u) / rate


def poisson_count_pmf(rate: float, period: float, m: int) -> float:
    """Probability of exactly ``m`` arrivals in an interval of length ``period``.

    Evaluated in log space so large ``m`` stays finite.
    """
    if rate <= 0.0 or period <= 0.0:
        raise InvalidInputError("rate and period must be > 0")
    if m < 0:
        raise InvalidInputError("m must be >= 0")
    mu = rate * period
    return math.exp(m * math.log(mu) - mu - math.lgamma(m + 1)) if m > 0 else math.exp(-mu)


def _arrival_times(rate: float, horizon: float, rng, chunk: int = 256) -> list[float]:
    # vectorized cumulative exp draws; identical stream consumption to
    # repeated sample_exponential() calls on the same generator
    times: list[float] = []
    t = 0.0
    while True:
        gaps = -np.log(1.0 - rng.random(chunk)) / rate
        for g in gaps:
            t += float(g)
            if t > horizon:
                return times
            times.append(t)


def generate_schedule(rates_compute, rates_transmit, horizon: float, period: float,
                      seed: int) -> EventSchedule:
    """Build the full pre-generated schedule for one run.

    Per agent: compute events from a Poisson stream at its compute rate,
    transmit events from an independent stream at its transmit rate, both
    truncated at the horizon.  Sync events are inserted at every multiple
    of the period (strictly positive), hubs assigned round-robin by agent
    index.  Each agent's streams derive from ``(seed, tag, agent)``, so
    generation is order independent and reproducible.
    """
    rates_compute = np.atleast_1d(np.asarray(rates_compute, dtype=np.float64))
    rates_transmit = np.atleast_1d(np.asarray(rates_transmit, dtype=np.float64))
    n = rates_compute.shape[0]
    if rates_transmit.shape[0] != n:
        raise InvalidInputError("rate vectors must have equal length")
    if np.any(rates_compute <= 0.0) or np.any(rates_transmit <= 0.0):
        raise InvalidInputError("all rates must be > 0")
    if not 0.0 < period <= horizon:
        raise InvalidInputError("period must satisfy 0 < period <= horizon")

    raw: list[tuple[float, int, int]] = []  # (time, kind_rank, node)
    for i in range(n):
        rng_c = seeds.substream(seed, seeds.COMPUTE_SCHEDULE, i)
        for t in _arrival_times(float(rates_compute[i]), horizon, rng_c):
            raw.append((t, _KIND_RANK[COMPUTE], i))
        rng_t = seeds.substream(seed, seeds.TRANSMIT_SCHEDULE, i)
        for t in _arrival_times(float(rates_transmit[i]), horizon, rng_t):
            raw.append((t, _KIND_RANK[TRANSMIT], i))

    m = 1
    while m * period <= horizon:
        raw.append((m * period, _KIND_RANK[UNIFY], (m - 1) % n))
        m += 1

    raw.sort()
    rank_to_kind = {v: k for k, v in _KIND_RANK.items()}
    evs = [Event(time=t, seq=k, node=node, kind=rank_to_kind[rank])
           for k, (t, rank, node) in enumerate(raw)]
    return EventSchedule(events=evs, horizon=float(horizon), period=float(period))


class EventQueue:
    """Min-priority queue over (time, seq) with a causality guard.

    Inserting an event earlier than the last popped time is rejected;
    popping an empty queue returns None (end of replay).
    """

    def __init__(self, initial: Iterable[Event] = ()):
        self._heap: list[tuple[float, int, Event]] = [(e.time, e.seq, e) for e in initial]
        heapq.heapify(self._heap)
        self._clock = -math.inf
        self._next_seq = 1 + max((e.seq for _, _, e in self._heap), default=-1)

    def __len__(self) -> int:
        return len(self._heap)

    def next_seq(self) -> int:
        s = self._next_seq
        self._next_seq += 1
        return s

    def push(self, event: Event) -> None:
        if event.time < self._clock:
            raise CausalityViolationError(
                f"insert at t={event.time} before clock {self._clock}")
        heapq.heappush(self._heap, (event.time, event.seq, event))

    def pop(self) -> Event | None:
        if not self._heap:
            return None
        t, _, ev = heapq.heappop(self._heap)
        self._clock = t
        return ev

    @property
    def clock(self) -> float:
        return self._clock


def group_superposition(arrivals: list[tuple[float, Any]], window: float
                        ) -> list[tuple[float, list[tuple[float, Any]]]]:
    """Greedy left-to-right grouping of near-simultaneous arrivals.

    A group opens at the first ungrouped arrival t0 and absorbs every
    arrival with time <= t0 + window; the group's event time is the latest
    arrival it absorbed.  ``window == 0`` groups only exact ties.
    """
    if window < 0.0:
        raise InvalidInputError("window must be >= 0")
    groups: list[tuple[float, list[tuple[float, Any]]]] = []
    cur: list[tuple[float, Any]] = []
    start = 0.0
    last_t = -math.inf
    for t, item in arrivals:
        if t < last_t:
            raise InvalidInputError("arrivals must be sorted by time")
        last_t = t
        if not cur:
            cur = [(t, item)]
            start = t
        elif t <= start + window:
            cur.append((t, item))
        else:
            groups.append((cur[-1][0], cur))
            cur = [(t, item)]
            start = t
    if cur:
        groups.append((cur[-1][0], cur))
    return groups


def pop_next(queue: EventQueue) -> Event | None:
    """Operation-surface alias for :meth:`EventQueue.pop`."""
    return queue.pop()


def insert(queue: EventQueue, event: Event) -> None:
    """Operation-surface alias for :meth:`EventQueue.push`."""
    queue.push(event)


# ---------------------------------------------------------------------------
# text dump of pre-generated schedules (debugging, golden tests)

def dump_schedule(schedule: EventSchedule) -> str:
    """Line format: ``seq time node kind [hub]`` with 17-digit floats."""
    lines = [f"# horizon {schedule.horizon:.17g} period {schedule.period:.17g}"]
    for e in schedule.events:
        if e.kind not in _SCHEDULED_KINDS:
            raise InvalidInputError(f"cannot dump lazily scheduled kind {e.kind!r}")
        lines.append(f"{e.seq} {e.time:.17g} {e.node} {e.kind}")
    return "\n".join(lines) + "\n"


def load_schedule(text: str) -> EventSchedule:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != "#" or head[1] != "horizon":
        raise InvalidInputError("missing schedule header")
    horizon, period = float(head[2]), float(head[4])
    evs = []
    for ln in lines[1:]:
        parts = ln.split()
        evs.append(Event(time=float(parts[1]), seq=int(parts[0]),
                         node=int(parts[2]), kind=parts[3]))
    return EventSchedule(events=evs, horizon=horizon, period=period)
