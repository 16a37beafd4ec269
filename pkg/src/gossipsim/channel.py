"""Wireless geometry, fading, SINR, delays, topologies and reception weights.

All powers are handled in linear milliwatts internally; configs speak dBm.
Per-message small-scale fading is exponential with unit mean, redrawn for
every transmission (block fading per message).  A message is delivered to
a receiver iff its link delay is strictly below the deadline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gossipsim.errors import InvalidGeometryError, InvalidInputError

LIGHTSPEED = 2.99792458e8  # m/s

ROW_SUM_TOL = 1e-12


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    if mw <= 0.0:
        raise InvalidInputError("power must be > 0 mW")
    return 10.0 * math.log10(mw)


@dataclass(frozen=True)
class Geometry:
    """Node positions inside a disk, plus the interference proximity radius."""

    positions: np.ndarray       # (N, 2) meters
    field_radius: float
    interference_radius: float

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    def distance(self, a: int, b: int) -> float:
        d = self.positions[a] - self.positions[b]
        return float(math.hypot(d[0], d[1]))


def place_nodes(n: int, field_radius: float, rng,
                interference_fraction: float = 0.1) -> Geometry:
    """Uniform placement in the disk via the square-root radial law."""
    if n < 1 or field_radius <= 0.0:
        raise InvalidInputError("need n >= 1 and field_radius > 0")
    r = field_radius * np.sqrt(rng.random(n))
    theta = 2.0 * math.pi * rng.random(n)
    pos = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return Geometry(positions=pos, field_radius=float(field_radius),
                    interference_radius=interference_fraction * float(field_radius))


def geometry_csv(geometry: Geometry) -> str:
    """Node positions as ``node,x,y`` rows with 17-digit floats."""
    lines = ["node,x,y"]
    for i, (x, y) in enumerate(geometry.positions):
        lines.append(f"{i},{x:.17g},{y:.17g}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ChannelParams:
    """Radio parameters; noise power is derived from density and bandwidth."""

    tx_power_mw: np.ndarray     # per agent, mW
    path_loss_exp: float
    bandwidth_hz: float
    noise_dbm_per_hz: float
    message_bytes: int
    deadline: float             # seconds; delays at or above it drop
    noise_mw: float = field(default=0.0)

    def __post_init__(self):
        if self.path_loss_exp <= 0.0 or self.bandwidth_hz <= 0.0:
            raise InvalidInputError("path_loss_exp and bandwidth_hz must be > 0")
        if self.message_bytes <= 0:
            raise InvalidInputError("message_bytes must be > 0")
        if self.deadline < 0.0:
            raise InvalidInputError("deadline must be >= 0")
        if np.any(np.asarray(self.tx_power_mw) <= 0.0):
            raise InvalidInputError("tx power must be > 0 mW")
        derived = dbm_to_mw(self.noise_dbm_per_hz) * self.bandwidth_hz
        if self.noise_mw == 0.0:
            object.__setattr__(self, "noise_mw", derived)
        elif abs(self.noise_mw - derived) > 1e-9 * derived:
            raise InvalidInputError(
                f"noise_mw {self.noise_mw} inconsistent with density*bandwidth {derived}")


def make_channel_params(n_agents: int, tx_power_dbm: float, path_loss_exp: float,
                        bandwidth_hz: float, noise_dbm_per_hz: float,
                        message_bytes: int, deadline: float) -> ChannelParams:
    p = dbm_to_mw(tx_power_dbm)
    return ChannelParams(
        tx_power_mw=np.full(n_agents, p),
        path_loss_exp=path_loss_exp,
        bandwidth_hz=bandwidth_hz,
        noise_dbm_per_hz=noise_dbm_per_hz,
        message_bytes=message_bytes,
        deadline=deadline,
    )


def sinr(sender: int, receiver: int, geometry: Geometry, params: ChannelParams,
         fading: dict[int, float], interferers: list[int]) -> float:
    """Signal-to-interference-plus-noise ratio of one link, linear units.

    ``fading`` maps node id -> small-scale gain toward the receiver; it must
    cover the sender and every interferer.
    """
    d = geometry.distance(receiver, sender)
    if d <= 0.0:
        raise InvalidGeometryError(f"coincident nodes {sender} and {receiver}")
    h = fading[sender]
    if h < 0.0:
        raise InvalidInputError("fading gains must be >= 0")
    alpha = params.path_loss_exp
    signal = float(params.tx_power_mw[sender]) * h * d ** (-alpha)
    interference = 0.0
    for n in interferers:
        dn = geometry.distance(receiver, n)
        if dn <= 0.0:
            raise InvalidGeometryError(f"coincident nodes {n} and {receiver}")
        interference += float(params.tx_power_mw[n]) * fading[n] * dn ** (-alpha)
    return signal / (interference + params.noise_mw)


def transmission_delay(message_bytes: int, bandwidth_hz: float, sinr_value: float,
                       distance: float) -> float:
    """Link delay in seconds: serialization at the Shannon rate + propagation.

    Zero SINR yields an infinite delay (undeliverable), which is a value,
    not an error.
    """
    if bandwidth_hz <= 0.0:
        raise InvalidInputError("bandwidth must be > 0")
    if sinr_value < 0.0:
        raise InvalidInputError("sinr must be >= 0")
    if sinr_value == 0.0:
        return math.inf
    bits = 8.0 * message_bytes
    rate = bandwidth_hz * math.log2(1.0 + sinr_value)
    return bits / rate + distance / LIGHTSPEED


def delivery(delay: float, deadline: float) -> bool:
    """Strictly-below-deadline delivery rule."""
    if delay < 0.0:
        raise InvalidInputError("delay must be >= 0")
    return delay < deadline


@dataclass(frozen=True)
class Topology:
    """Directed adjacency: ``out_neighbors[i]`` is who agent i sends to."""

    kind: str
    out_neighbors: tuple[tuple[int, ...], ...]

    @property
    def n_nodes(self) -> int:
        return len(self.out_neighbors)


def build_topology(kind: str, n_agents: int, geometry: Geometry | None = None,
                   params: ChannelParams | None = None) -> Topology:
    """Cycle / complete by index, or feasibility-derived from geometry.

    The geometric variant adds a directed edge i -> j iff the link would be
    delivered under median fading with no interference.
    """
    if kind == "cycle":
        out = []
        for i in range(n_agents):
            neigh = sorted({(i - 1) % n_agents, (i + 1) % n_agents} - {i})
            out.append(tuple(neigh))
        return Topology(kind=kind, out_neighbors=tuple(out))
    if kind == "complete":
        out = tuple(tuple(j for j in range(n_agents) if j != i) for i in range(n_agents))
        return Topology(kind=kind, out_neighbors=out)
    if kind == "geometric":
        if geometry is None or params is None:
            raise InvalidInputError("geometric topology needs geometry and channel params")
        median_fade = math.log(2.0)
        out = []
        for i in range(n_agents):
            neigh = []
            for j in range(n_agents):
                if j == i:
                    continue
                s = sinr(i, j, geometry, params, {i: median_fade}, [])
                g = transmission_delay(params.message_bytes, params.bandwidth_hz, s,
                                       geometry.distance(i, j))
                if delivery(g, params.deadline):
                    neigh.append(j)
            out.append(tuple(neigh))
        return Topology(kind=kind, out_neighbors=tuple(out))
    raise InvalidInputError(f"unknown topology kind {kind!r}")


def reception_weights(senders: list[int]) -> np.ndarray:
    """Per-message aggregation weights for one superposition group.

    Weight mass is uniform over distinct senders; a sender appearing with
    several messages in the group splits its share equally among them.
    Returns an empty array for an empty group (a no-op aggregation).
    """
    if not senders:
        return np.zeros(0)
    counts: dict[int, int] = {}
    for s in senders:
        counts[s] = counts.get(s, 0) + 1
    share = 1.0 / len(counts)
    return np.array([share / counts[s] for s in senders])


@dataclass(frozen=True)
class WeightRow:
    """One aggregation instant at one receiver."""

    time: float
    receiver: int
    senders: tuple[int, ...]
    weights: tuple[float, ...]
    arrival_times: tuple[float, ...]
    send_times: tuple[float, ...]
    windows: tuple[int, ...]    # period window index of each message


class WeightMatrix:
    """Collects per-aggregation weight rows and tracks the dispersion bound.

    ``rho`` is the max over observed rows of sqrt(sum of squared weights);
    it is strictly below 1 whenever every row has at least two distinct
    contributors.
    """

    def __init__(self):
        self.rows: list[WeightRow] = []

    def add_row(self, row: WeightRow) -> None:
        w = np.asarray(row.weights)
        if w.size == 0:
            return
        if np.any(w < 0.0) or abs(float(w.sum()) - 1.0) > ROW_SUM_TOL:
            raise InvalidInputError(f"weight row not stochastic: sum={w.sum()!r}")
        self.rows.append(row)

    @property
    def rho(self) -> float:
        if not self.rows:
            return 1.0
        worst = max(float(np.sum(np.square(r.weights))) for r in self.rows)
        return math.sqrt(worst)

    def row_sums(self) -> list[float]:
        return [float(np.sum(r.weights)) for r in self.rows]
