"""Quantum-enhanced V2X toolkit: simulation-scale building blocks.

Subpackages cover the dense statevector engine (qcore), the patchwise
semantic codec (codec), the fading semantic channel (channel), reversible
multimodal fusion (fusion), quantum actor-critic transfer decisions
(transfer), low-rank masked federated aggregation (fed), and the scenario
layer (config, dataio, runners, cli).
"""

from . import channel, codec, fed, fusion, qcore, transfer
from .errors import (
    CapacityError,
    CheckFailure,
    ConfigError,
    DataError,
    DomainError,
    IntegrityError,
    ProtocolError,
    QV2XError,
)

__version__ = "0.1.0"

__all__ = [
    "qcore",
    "codec",
    "channel",
    "fusion",
    "transfer",
    "fed",
    "QV2XError",
    "CapacityError",
    "DomainError",
    "IntegrityError",
    "ProtocolError",
    "ConfigError",
    "DataError",
    "CheckFailure",
]
