"""Committee-prioritized asynchronous Byzantine agreement, simulated.

Composable message-driven state machines for the protocol stack (threshold
crypto oracle, committee selection, prioritized broadcast, recommendation
exchange, biased binary agreement, per-party engine), a deterministic
adversarial network simulator, and a scenario / experiment harness.
"""

from .engine import (
    PartyEngine,
    ProtocolConfig,
    ProtocolViolation,
    scheme_catalogue,
)
from .simnet import (
    IsolatePolicy,
    LockstepPolicy,
    RunMetrics,
    Simulation,
    TargetedDelayPolicy,
    UniformRandomPolicy,
    WorstCaseOrderPolicy,
)
from .tcrypto import KeyMaterial, PartyKeys, key_setup

__all__ = [
    "PartyEngine",
    "ProtocolConfig",
    "ProtocolViolation",
    "scheme_catalogue",
    "Simulation",
    "RunMetrics",
    "LockstepPolicy",
    "UniformRandomPolicy",
    "TargetedDelayPolicy",
    "IsolatePolicy",
    "WorstCaseOrderPolicy",
    "KeyMaterial",
    "PartyKeys",
    "key_setup",
]

__version__ = "0.1.0"
