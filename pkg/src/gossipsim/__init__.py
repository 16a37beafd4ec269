"""gossipsim: event-driven simulation of asynchronous decentralized SGD
over unreliable gossip networks.

The package is organized around seven pieces:

* ``problem``   objective families and local batch training,
* ``events``    continuous-time event generation and the replay queue,
* ``channel``   geometry, fading, SINR, delays, topologies and weights,
* ``protocol``  the agent state machine and the replay loop,
* ``metrics``   trace records, consensus diagnostics and the rate bound,
* ``verify``    fuzz verification of the analysis inequalities,
* ``harness``   configs, sweeps and reproducible artifact directories.

All randomness flows from a single master seed through named substreams
(see :mod:`gossipsim.seeds`), so identical configs replay bit for bit.
"""

__version__ = "0.1.0"

from gossipsim.errors import (
    CausalityViolationError,
    ConfigError,
    CorruptMessageError,
    GossipSimError,
    InvalidGeometryError,
    InvalidInputError,
    InvalidInstanceError,
    NumericalOverflowError,
)

__all__ = [
    "__version__",
    "GossipSimError",
    "ConfigError",
    "InvalidInputError",
    "NumericalOverflowError",
    "CausalityViolationError",
    "InvalidGeometryError",
    "CorruptMessageError",
    "InvalidInstanceError",
]
