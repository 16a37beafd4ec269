"""The agent state machine and the deterministic replay loop.

An agent reacts to four event kinds:

* ``compute``  -- run local batch training against the current reference
  model and append the produced delta to a transmit backlog.  The
  reference model itself never changes here.
* ``transmit`` -- broadcast the summed backlog as one message to every
  out-neighbor, then clear the backlog (push only, no acknowledgments).
  Per link the channel draws fresh fading, evaluates SINR against the
  currently overlapping transmissions, and the message is delivered at
  ``t + delay`` iff the delay beats the deadline.
* ``receive``  -- arrivals within one superposition window of a receiver
  form a group; when the window closes the group is aggregated into the
  reference model with row-stochastic weights, subject to the per-period
  message budget (earliest messages win, the rest are dropped and counted).
* ``unify``    -- at every multiple of the period a round-robin hub
  overwrites every reference model with its own over an idealized control
  channel, and all message budgets reset for the new window.

Everything is single threaded and totally ordered by (time, seq), so a
config and seed identify one exact trajectory.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from gossipsim import channel as chan
from gossipsim import events as ev
from gossipsim import metrics, problem, seeds
from gossipsim.errors import ConfigError, CorruptMessageError

TOPOLOGY_KINDS = ("cycle", "complete", "geometric")
OBJECTIVE_KINDS = ("quadratic", "logistic", "mlp")
CHANNEL_MODES = ("ideal", "wireless")


@dataclass(frozen=True)
class SimulationConfig:
    """Everything needed to reproduce one run byte for byte."""

    n_agents: int = 25
    batches: int = 5
    step: float = 1e-4
    horizon: float = 1000.0
    period: float = 100.0
    psi_max: int = 10
    window: float = 1e-3
    seed: int = 0
    lambda_compute: float = 0.1
    lambda_transmit: float | None = None
    sampling_interval: int = 500
    topology: str = "complete"

    objective: str = "quadratic"
    dim: int = 10
    center_spread: float = 1.0
    noise_std: float = 0.0
    x0_value: float = 0.0
    features: int = 5
    samples_per_agent: int = 1000
    batch_size: int = 64
    heterogeneity: float = 1.0
    hidden: int = 8
    classes: int = 3

    channel_mode: str = "ideal"
    ideal_delay: float = 1e-3
    field_radius: float = 500.0
    tx_power_dbm: float = 30.0
    path_loss_exp: float = 4.0
    bandwidth_hz: float = 1e7
    noise_dbm_per_hz: float = -174.0
    message_bytes: int = 596776
    gamma_max: float = 10.0

    record_deltas: bool = False

    def transmit_rate(self) -> float:
        return self.lambda_compute if self.lambda_transmit is None else self.lambda_transmit

    def validate(self) -> None:
        checks = [
            (self.n_agents >= 1, "n_agents must be >= 1"),
            (self.batches >= 1, "batches must be >= 1"),
            (self.step > 0.0, "step must be > 0"),
            (0.0 < self.period <= self.horizon, "need 0 < period <= horizon"),
            (self.psi_max >= 1, "psi_max must be >= 1"),
            (self.window >= 0.0, "window must be >= 0"),
            (self.seed >= 0, "seed must be >= 0"),
            (self.lambda_compute > 0.0, "lambda_compute must be > 0"),
            (self.transmit_rate() > 0.0, "lambda_transmit must be > 0"),
            (self.sampling_interval >= 1, "sampling_interval must be >= 1"),
            (self.topology in TOPOLOGY_KINDS, f"topology must be one of {TOPOLOGY_KINDS}"),
            (self.objective in OBJECTIVE_KINDS, f"objective must be one of {OBJECTIVE_KINDS}"),
            (self.channel_mode in CHANNEL_MODES, f"channel_mode must be one of {CHANNEL_MODES}"),
            (self.dim >= 1, "dim must be >= 1"),
            (self.noise_std >= 0.0, "noise_std must be >= 0"),
            (self.ideal_delay >= 0.0, "ideal_delay must be >= 0"),
            (self.gamma_max >= 0.0, "gamma_max must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.topology == "geometric" and self.channel_mode != "wireless":
            raise ConfigError("geometric topology requires the wireless channel")


@dataclass(frozen=True)
class Message:
    """One broadcast payload: the summed backlog of the sender."""

    sender: int
    send_time: float
    delta_sum: np.ndarray
    n_updates: int


@dataclass
class AgentState:
    """Reference model, untransmitted backlog, and the period message budget.

    ``psi_counts`` maps a period-window index to the number of messages
    accepted with arrival times in that window, so budget accounting stays
    exact even when an aggregation group straddles a window boundary.
    """

    id: int
    x: np.ndarray
    backlog: list[problem.LocalUpdate] = field(default_factory=list)
    psi_counts: dict[int, int] = field(default_factory=dict)


@dataclass
class _OpenGroup:
    open_time: float
    gen: int
    msgs: list[tuple[float, Message]] = field(default_factory=list)


class Simulation:
    """Owns all mutable run state; drive with :meth:`run` or per-handler."""

    def __init__(self, cfg: SimulationConfig):
        cfg.validate()
        self.cfg = cfg
        self.obj = problem.build_objective(cfg)
        self.x0 = np.full(self.obj.dim, cfg.x0_value, dtype=np.float64)
        self.constants = problem.estimate_constants(
            self.obj, self.x0, seeds.substream(cfg.seed, seeds.CONSTANTS))

        limit = 1.0 / (8.0 * cfg.batches * max(self.constants.L, 1e-300)
                       * cfg.n_agents * cfg.psi_max)
        self.step_condition_ok = cfg.step <= limit * (1.0 + 1e-12)
        if not self.step_condition_ok:
            warnings.warn(
                f"step {cfg.step} exceeds the stability ceiling {limit:.3e}; "
                "the rate bound does not apply", RuntimeWarning, stacklevel=2)

        if cfg.channel_mode == "wireless":
            self.geometry = chan.place_nodes(
                cfg.n_agents, cfg.field_radius, seeds.substream(cfg.seed, seeds.PLACEMENT))
            self.params = chan.make_channel_params(
                cfg.n_agents, cfg.tx_power_dbm, cfg.path_loss_exp, cfg.bandwidth_hz,
                cfg.noise_dbm_per_hz, cfg.message_bytes, cfg.gamma_max)
            self.topology = chan.build_topology(cfg.topology, cfg.n_agents,
                                                self.geometry, self.params)
        else:
            self.geometry = None
            self.params = None
            self.topology = chan.build_topology(cfg.topology, cfg.n_agents)

        sched = ev.generate_schedule(
            np.full(cfg.n_agents, cfg.lambda_compute),
            np.full(cfg.n_agents, cfg.transmit_rate()),
            cfg.horizon, cfg.period, cfg.seed)
        self.queue = ev.EventQueue(sched.events)
        self.schedule_size = len(sched.events)

        self.agents = [AgentState(id=i, x=self.x0.copy()) for i in range(cfg.n_agents)]
        self.noise_rngs = [seeds.substream(cfg.seed, seeds.GRADIENT_NOISE, i)
                           for i in range(cfg.n_agents)]
        self.fading_rng = seeds.substream(cfg.seed, seeds.FADING)

        self.counters = metrics.Counters()
        self.weight_matrix = chan.WeightMatrix()
        self.sampler = metrics.TraceSampler(self.obj, cfg.sampling_interval)
        self.open_groups: dict[int, _OpenGroup] = {}
        self._group_gen = 0
        self._busy: list[tuple[int, float, float]] = []  # (node, start, end)
        self.post_unify_consensus: list[float] = []
        self.unify_times: list[float] = []
        self.deltas: list[list[np.ndarray]] | None = (
            [[] for _ in range(cfg.n_agents)] if cfg.record_deltas else None)

    # ------------------------------------------------------------------ state

    def _states(self) -> np.ndarray:
        return np.array([a.x for a in self.agents])

    def _window_of(self, t: float) -> int:
        return int(math.floor(t / self.cfg.period))

    # --------------------------------------------------------------- handlers

    def on_compute(self, agent: int, t: float) -> None:
        upd = problem.local_batch_train(
            self.obj, agent, self.agents[agent].x, self.cfg.batches, self.cfg.step,
            self.noise_rngs[agent], at=t)
        self.agents[agent].backlog.append(upd)
        if self.deltas is not None:
            self.deltas[agent].append(upd.delta.copy())
        self.counters.computes += 1

    def on_transmit(self, agent: int, t: float) -> None:
        self.counters.transmits += 1
        state = self.agents[agent]
        if not state.backlog:
            return
        delta_sum = state.backlog[0].delta.copy()
        for upd in state.backlog[1:]:
            delta_sum += upd.delta
        msg = Message(sender=agent, send_time=t, delta_sum=delta_sum,
                      n_updates=len(state.backlog))
        state.backlog.clear()

        neighbors = self.topology.out_neighbors[agent]
        if self.cfg.channel_mode == "ideal":
            for j in neighbors:
                self.counters.sent += 1
                self._schedule_arrival(j, t + self.cfg.ideal_delay, msg)
            return

        self._busy = [b for b in self._busy if b[2] > t]
        worst_delay = 0.0
        for j in neighbors:
            fading = {agent: float(self.fading_rng.exponential())}
            interferers = []
            for n, _, _ in self._busy:
                # overlapping transmissions near the receiver; the receiver
                # itself cannot interfere with its own reception (the
                # path-loss term is undefined at zero distance)
                if n in (agent, j):
                    continue
                if self.geometry.distance(n, j) < self.geometry.interference_radius:
                    interferers.append(n)
                    fading[n] = float(self.fading_rng.exponential())
            s = chan.sinr(agent, j, self.geometry, self.params, fading, interferers)
            delay = chan.transmission_delay(
                self.params.message_bytes, self.params.bandwidth_hz, s,
                self.geometry.distance(agent, j))
            worst_delay = max(worst_delay, delay)
            self.counters.sent += 1
            if chan.delivery(delay, self.params.deadline):
                self._schedule_arrival(j, t + delay, msg)
            else:
                self.counters.dropped_deadline += 1
        if neighbors:
            # the sender occupies the air until its slowest link finishes,
            # but never past the deadline
            self._busy.append((agent, t, t + min(worst_delay, self.params.deadline)))

    def _schedule_arrival(self, receiver: int, at: float, msg: Message) -> None:
        self.queue.push(ev.Event(time=at, seq=self.queue.next_seq(),
                                 node=receiver, kind=ev.RECEIVE, payload=msg))

    def on_arrival(self, receiver: int, msg: Message, t: float) -> None:
        self.counters.delivered += 1
        g = self.open_groups.get(receiver)
        if g is not None and t <= g.open_time + self.cfg.window:
            g.msgs.append((t, msg))
            return
        if g is not None:  # overdue group: close it before opening a new one
            del self.open_groups[receiver]
            self.on_receive_group(receiver, g.msgs, t)
        gen = self._group_gen
        self._group_gen += 1
        self.open_groups[receiver] = _OpenGroup(open_time=t, gen=gen, msgs=[(t, msg)])
        self.queue.push(ev.Event(time=t + self.cfg.window, seq=self.queue.next_seq(),
                                 node=receiver, kind=ev.GROUP_CLOSE, payload=gen))

    def on_group_close(self, receiver: int, gen: int, t: float) -> None:
        g = self.open_groups.get(receiver)
        if g is None or g.gen != gen:
            return
        del self.open_groups[receiver]
        self.on_receive_group(receiver, g.msgs, t)

    def on_receive_group(self, receiver: int, arrivals: list[tuple[float, Message]],
                         t: float) -> None:
        """Apply one grouped aggregation under the period message budget.

        ``arrivals`` come in arrival order; each message debits the budget
        of the period window it arrived in, and once a window's budget is
        exhausted the remaining messages of that window are dropped.
        """
        state = self.agents[receiver]
        accepted: list[tuple[float, int, Message]] = []
        for ta, msg in arrivals:
            if msg.delta_sum.shape != (self.obj.dim,):
                raise CorruptMessageError(
                    f"payload shape {msg.delta_sum.shape} at receiver {receiver}, "
                    f"expected ({self.obj.dim},)")
            w = self._window_of(ta)
            used = state.psi_counts.get(w, 0)
            if used < self.cfg.psi_max:
                state.psi_counts[w] = used + 1
                accepted.append((ta, w, msg))
            else:
                self.counters.dropped_budget += 1
        if not accepted:
            return
        weights = chan.reception_weights([m.sender for _, _, m in accepted])
        update = np.zeros(self.obj.dim)
        for wgt, (_, _, m) in zip(weights, accepted):
            update += wgt * m.delta_sum
        state.x += update
        self.counters.accepted += len(accepted)
        self.weight_matrix.add_row(chan.WeightRow(
            time=t, receiver=receiver,
            senders=tuple(m.sender for _, _, m in accepted),
            weights=tuple(float(w) for w in weights),
            arrival_times=tuple(ta for ta, _, _ in accepted),
            send_times=tuple(m.send_time for _, _, m in accepted),
            windows=tuple(w for _, w, _ in accepted)))

    def on_unification(self, hub: int, t: float) -> None:
        hub_x = self.agents[hub].x
        window = int(round(t / self.cfg.period))
        for a in self.agents:
            if a.id != hub:
                a.x = hub_x.copy()
            # the new window starts with a fresh budget; drop stale counters
            a.psi_counts = {w: c for w, c in a.psi_counts.items() if w >= window - 1}
        self.post_unify_consensus.append(metrics.consensus_distance(self._states()))
        self.unify_times.append(t)

    # ------------------------------------------------------------------- run

    def run(self) -> metrics.Trace:
        cfg = self.cfg
        counted = 0
        self.sampler.record(self._states(), 0.0, 0, self.counters)
        while True:
            event = self.queue.pop()
            if event is None or event.time > cfg.horizon:
                break
            if event.kind == ev.COMPUTE:
                self.on_compute(event.node, event.time)
            elif event.kind == ev.TRANSMIT:
                self.on_transmit(event.node, event.time)
            elif event.kind == ev.RECEIVE:
                self.on_arrival(event.node, event.payload, event.time)
            elif event.kind == ev.UNIFY:
                self.on_unification(event.node, event.time)
            elif event.kind == ev.GROUP_CLOSE:
                self.on_group_close(event.node, event.payload, event.time)
                continue  # internal bookkeeping, not a protocol event
            counted += 1
            self.sampler.after_event(self._states, event.time, counted, self.counters)

        flushed = False
        for receiver in sorted(self.open_groups):
            g = self.open_groups[receiver]
            self.on_receive_group(receiver, g.msgs, cfg.horizon)
            flushed = True
        self.open_groups.clear()
        self.sampler.final(self._states(), cfg.horizon, counted, self.counters,
                           force=flushed)

        c = self.constants
        inputs = metrics.BoundInputs(
            init_gap=c.init_gap, batches=cfg.batches, step=cfg.step,
            psi_max=cfg.psi_max, zeta=c.zeta, sigma=c.sigma,
            n_agents=cfg.n_agents, L=c.L, rho=self.weight_matrix.rho)
        value, valid = metrics.theorem_bound(inputs)
        meta = {
            "objective": cfg.objective,
            "n_agents": cfg.n_agents,
            "seed": cfg.seed,
            "step_condition_ok": self.step_condition_ok,
            "constants_exact": c.exact,
            "constants": {"L": c.L, "sigma": c.sigma, "zeta": c.zeta,
                          "init_gap": c.init_gap},
            "schedule_events": self.schedule_size,
            "unify_times": list(self.unify_times),
            "post_unify_consensus": list(self.post_unify_consensus),
        }
        return metrics.Trace(
            records=self.sampler.records,
            final_models=self._states(),
            counters=self.counters,
            weight_matrix=self.weight_matrix,
            bound_inputs=inputs,
            bound_value=value,
            bound_valid=valid,
            meta=meta,
            deltas=self.deltas,
        )


def run(cfg: SimulationConfig) -> metrics.Trace:
    """One full asynchronous run."""
    return Simulation(cfg).run()


def isolated_local_sgd(cfg: SimulationConfig) -> tuple[np.ndarray, list[list[np.ndarray]]]:
    """Replay only the compute events, each agent alone.

    Uses the same schedule and gradient-noise substreams as :func:`run`,
    so a run whose channel delivers nothing must match this trajectory bit
    for bit: reference models never move without aggregation, and the
    produced deltas depend only on per-agent streams.
    """
    cfg.validate()
    obj = problem.build_objective(cfg)
    x0 = np.full(obj.dim, cfg.x0_value, dtype=np.float64)
    sched = ev.generate_schedule(
        np.full(cfg.n_agents, cfg.lambda_compute),
        np.full(cfg.n_agents, cfg.transmit_rate()),
        cfg.horizon, cfg.period, cfg.seed)
    rngs = [seeds.substream(cfg.seed, seeds.GRADIENT_NOISE, i) for i in range(cfg.n_agents)]
    deltas: list[list[np.ndarray]] = [[] for _ in range(cfg.n_agents)]
    models = np.tile(x0, (cfg.n_agents, 1))
    for event in sched.events:
        if event.kind == ev.COMPUTE and event.time <= cfg.horizon:
            upd = problem.local_batch_train(obj, event.node, models[event.node],
                                            cfg.batches, cfg.step, rngs[event.node],
                                            at=event.time)
            deltas[event.node].append(upd.delta)
    return models, deltas


def _metropolis_weights(topology: chan.Topology) -> np.ndarray:
    """Symmetric doubly stochastic mixing matrix on the undirected closure."""
    n = topology.n_nodes
    adj = np.zeros((n, n), dtype=bool)
    for i, neigh in enumerate(topology.out_neighbors):
        for j in neigh:
            adj[i, j] = True
            adj[j, i] = True
    deg = adj.sum(axis=1)
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if adj[i, j]:
                w[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
        w[i, i] = 1.0 - w[i].sum()
    return w


def run_sync_baseline(cfg: SimulationConfig) -> metrics.Trace:
    """Synchronous decentralized SGD rounds for comparison plots.

    Every round each agent trains ``batches`` steps, applies its own
    update, then mixes models with symmetric Metropolis weights over the
    undirected closure of the topology.  The number of rounds matches the
    expected per-agent compute-event count of the asynchronous run, spread
    evenly over the horizon, and the trace schema is identical.
    """
    cfg.validate()
    obj = problem.build_objective(cfg)
    x0 = np.full(obj.dim, cfg.x0_value, dtype=np.float64)
    topology = chan.build_topology(
        cfg.topology if cfg.topology != "geometric" else "complete", cfg.n_agents)
    mix = _metropolis_weights(topology)
    n_edges = int(sum(len(v) for v in topology.out_neighbors))

    rounds = max(1, int(round(cfg.lambda_compute * cfg.horizon)))
    stride = max(1, cfg.sampling_interval // max(cfg.n_agents, 1))
    rngs = [seeds.substream(cfg.seed, seeds.GRADIENT_NOISE, i) for i in range(cfg.n_agents)]

    states = np.tile(x0, (cfg.n_agents, 1))
    counters = metrics.Counters()
    sampler = metrics.TraceSampler(obj, cfg.sampling_interval)
    sampler.record(states, 0.0, 0, counters)
    for r in range(rounds):
        proposals = np.empty_like(states)
        for i in range(cfg.n_agents):
            upd = problem.local_batch_train(obj, i, states[i], cfg.batches, cfg.step,
                                            rngs[i])
            proposals[i] = states[i] + upd.delta
        states = mix @ proposals
        counters.computes += cfg.n_agents
        counters.transmits += cfg.n_agents
        counters.sent += n_edges
        counters.delivered += n_edges
        counters.accepted += n_edges
        t = (r + 1) * cfg.horizon / rounds
        if (r + 1) % stride == 0:
            sampler.record(states, t, (r + 1) * cfg.n_agents, counters)
    sampler.final(states, cfg.horizon, rounds * cfg.n_agents, counters)

    constants = problem.estimate_constants(
        obj, x0, seeds.substream(cfg.seed, seeds.CONSTANTS))
    meta = {
        "objective": cfg.objective,
        "n_agents": cfg.n_agents,
        "seed": cfg.seed,
        "baseline": "synchronous",
        "rounds": rounds,
        "constants_exact": constants.exact,
        "constants": {"L": constants.L, "sigma": constants.sigma,
                      "zeta": constants.zeta, "init_gap": constants.init_gap},
    }
    return metrics.Trace(
        records=sampler.records,
        final_models=states,
        counters=counters,
        weight_matrix=chan.WeightMatrix(),
        bound_inputs=None,
        bound_value=math.inf,
        bound_valid=False,
        meta=meta,
    )


def with_overrides(cfg: SimulationConfig, **kw) -> SimulationConfig:
    """Functional update helper used by sweeps."""
    return replace(cfg, **kw)
