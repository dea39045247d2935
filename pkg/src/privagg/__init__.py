"""Private aggregate statistics with secret-shared proofs of validity.

Clients split an encoding of their value among several servers and attach
a proof that the encoding is well formed; the servers check the proof
with a constant amount of communication, add accepted shares into
accumulators and publish only the aggregate.
"""

from __future__ import annotations

from privagg.afe import KINDS, parse_kind
from privagg.field import F31, F101, GOLDILOCKS, Field
from privagg.kernels import BACKEND
from privagg.protocol import DeploymentConfig, Server, client_submit, publish

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DeploymentConfig", "F101", "F31", "Field", "GOLDILOCKS", "KINDS",
    "Server", "client_submit", "parse_kind", "publish",
]
