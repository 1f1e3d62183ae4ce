"""Typed envelopes for every cross-party transfer, and the phase automata.

Each (active, passive) channel follows a small automaton per protocol round.
A message whose kind is not allowed in the channel's current state raises
:class:`~fedxgb.errors.PhaseViolation`.
"""

import hashlib
import json
from dataclasses import dataclass, fields, is_dataclass
from enum import Enum
from typing import Any, Optional

import numpy as np

from ..errors import PhaseViolation


class Kind(str, Enum):
    ANNOUNCE = "announce-user-set"
    KERNEL_BASIS = "kernel-basis"
    SECURE_RESPONSE = "secure-response"
    PERTURBED_GRADIENTS = "perturbed-gradients"
    SCORE_REPORT = "score-report"
    SPLIT_REQUEST = "split-request"
    SPLIT_REVEAL = "split-reveal"
    REFUSAL = "refusal"


class Role(str, Enum):
    ACTIVE = "active"
    PASSIVE = "passive"


# -- payloads ---------------------------------------------------------------

@dataclass(frozen=True)
class UserSet:
    node_id: int
    user_ids: tuple


@dataclass(frozen=True)
class BasisPayload:
    vectors: np.ndarray


@dataclass(frozen=True)
class ResponsePayload:
    W: np.ndarray
    G: Optional[float] = None
    H: Optional[float] = None


@dataclass(frozen=True)
class PerturbedGradients:
    g_star: np.ndarray
    G: float


@dataclass(frozen=True)
class ScoreReport:
    score: Optional[float]


@dataclass(frozen=True)
class SplitRequest:
    candidate: Optional[int] = None


@dataclass(frozen=True)
class SplitReveal:
    record_id: int
    feature_id: Any
    threshold: float
    left_ids: tuple
    right_ids: tuple


@dataclass(frozen=True)
class Refusal:
    reason: str
    flagged: int


PAYLOAD_TYPES = {
    Kind.ANNOUNCE: UserSet,
    Kind.KERNEL_BASIS: BasisPayload,
    Kind.SECURE_RESPONSE: ResponsePayload,
    Kind.PERTURBED_GRADIENTS: PerturbedGradients,
    Kind.SCORE_REPORT: ScoreReport,
    Kind.SPLIT_REQUEST: SplitRequest,
    Kind.SPLIT_REVEAL: SplitReveal,
    Kind.REFUSAL: Refusal,
}


@dataclass(frozen=True)
class PartyMessage:
    kind: Kind
    sender: int
    receiver: int
    round: int
    payload: Any

    def __post_init__(self):
        expected = PAYLOAD_TYPES[self.kind]
        if not isinstance(self.payload, expected):
            raise TypeError(f"{self.kind.value} carries {expected.__name__}, "
                            f"got {type(self.payload).__name__}")

    def digest(self):
        return payload_digest(self.payload)

    def trace_record(self):
        return {"round": self.round, "sender": self.sender, "receiver": self.receiver,
                "kind": self.kind.value, "payload_digest": self.digest()}


def payload_digest(payload):
    h = hashlib.sha256()
    _feed(h, payload)
    return h.hexdigest()[:16]


def _feed(h, obj):
    if isinstance(obj, np.ndarray):
        a = np.ascontiguousarray(obj)
        h.update(f"nd{a.dtype.str}{a.shape}".encode())
        h.update(a.tobytes())
    elif is_dataclass(obj):
        h.update(type(obj).__name__.encode())
        for f in fields(obj):
            h.update(f.name.encode())
            _feed(h, getattr(obj, f.name))
    elif isinstance(obj, (tuple, list)):
        h.update(b"(")
        for x in obj:
            _feed(h, x)
        h.update(b")")
    else:
        h.update(json.dumps(obj if not isinstance(obj, np.generic) else obj.item(),
                            sort_keys=True, default=str).encode())


# -- phase automata ---------------------------------------------------------

# (state, sender role, kind) -> next state
_TRANSITIONS = {
    "smm1": {
        ("start", Role.ACTIVE, Kind.ANNOUNCE): "announced",
        ("announced", Role.ACTIVE, Kind.KERNEL_BASIS): "basis",
        ("basis", Role.PASSIVE, Kind.SECURE_RESPONSE): "responded",
        ("responded", Role.ACTIVE, Kind.SPLIT_REQUEST): "requested",
        ("requested", Role.PASSIVE, Kind.SPLIT_REVEAL): "done",
    },
    "smm2": {
        ("start", Role.ACTIVE, Kind.ANNOUNCE): "announced",
        ("announced", Role.PASSIVE, Kind.KERNEL_BASIS): "kernel",
        ("announced", Role.PASSIVE, Kind.SCORE_REPORT): "scored",
        ("kernel", Role.ACTIVE, Kind.REFUSAL): "announced",
        ("kernel", Role.ACTIVE, Kind.SECURE_RESPONSE): "responded",
        ("responded", Role.PASSIVE, Kind.SCORE_REPORT): "scored",
        ("scored", Role.ACTIVE, Kind.SPLIT_REQUEST): "requested",
        ("requested", Role.PASSIVE, Kind.SPLIT_REVEAL): "done",
    },
    "ldp": {
        ("start", Role.ACTIVE, Kind.ANNOUNCE): "announced",
        ("announced", Role.ACTIVE, Kind.PERTURBED_GRADIENTS): "released",
        ("released", Role.PASSIVE, Kind.SCORE_REPORT): "scored",
        ("scored", Role.ACTIVE, Kind.SPLIT_REQUEST): "requested",
        ("requested", Role.PASSIVE, Kind.SPLIT_REVEAL): "done",
    },
}

PROTOCOL_KINDS = {mode: {k for (_, _, k) in table} for mode, table in _TRANSITIONS.items()}


class ChannelAutomaton:
    """Phase tracker for one active/passive channel within one round."""

    def __init__(self, mode):
        if mode not in _TRANSITIONS:
            raise ValueError(f"no message protocol for mode {mode!r}")
        self.mode = mode
        self.table = _TRANSITIONS[mode]
        self.state = "start"

    def step(self, role, kind):
        nxt = self.table.get((self.state, role, kind))
        if nxt is None:
            raise PhaseViolation(
                f"{role.value} party sent {kind.value} in phase {self.state!r} of {self.mode}")
        self.state = nxt
        return nxt
