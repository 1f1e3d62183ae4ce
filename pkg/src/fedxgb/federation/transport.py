"""In-process message transport with phase barriers and an audit trail."""

import json

import numpy as np

from ..errors import ProtocolError
from .messages import ChannelAutomaton, Role


class Transport:
    """Sequential transport: ``send`` queues, ``flush`` delivers (a barrier).

    Every channel is checked twice: against the sender's view when a
    message is queued and against the receiver's view when it is delivered.
    With ``shuffle=True`` messages inside one barrier are delivered in a
    random order, which must not change any result.
    """

    def __init__(self, shuffle=False, seed=None):
        self.shuffle = shuffle
        self._rng = np.random.default_rng(seed)
        self.parties = {}
        self.active_id = None
        self.mode = None
        self.round = -1
        self.pending = []
        self.history = []
        self._send_view = {}
        self._recv_view = {}

    def attach(self, party, active=False):
        self.parties[party.party_id] = party
        if active:
            self.active_id = party.party_id

    def begin_round(self, round_no, mode):
        if self.pending:
            raise ProtocolError(f"{len(self.pending)} undelivered messages at round start")
        self.round = round_no
        self.mode = mode
        passive = [pid for pid in self.parties if pid != self.active_id]
        self._send_view = {pid: ChannelAutomaton(mode) for pid in passive}
        self._recv_view = {pid: ChannelAutomaton(mode) for pid in passive}
        for party in self.parties.values():
            party.reset_inbox()

    def _channel(self, msg):
        if msg.sender == self.active_id:
            return msg.receiver, Role.ACTIVE
        if msg.receiver == self.active_id:
            return msg.sender, Role.PASSIVE
        raise ProtocolError("passive parties may only talk to the active party")

    def send(self, msg):
        if msg.round != self.round:
            raise ProtocolError(f"message for round {msg.round} during round {self.round}")
        if msg.receiver not in self.parties:
            raise ProtocolError(f"unknown receiver {msg.receiver}")
        peer, role = self._channel(msg)
        self._send_view[peer].step(role, msg.kind)
        self.pending.append(msg)

    def flush(self):
        batch, self.pending = self._take_batch(), []
        for msg in batch:
            peer, role = self._channel(msg)
            self._recv_view[peer].step(role, msg.kind)
            self.history.append(msg)
            self.parties[msg.receiver].receive(msg)

    def _take_batch(self):
        batch = list(self.pending)
        if self.shuffle and len(batch) > 1:
            batch = [batch[i] for i in self._rng.permutation(len(batch))]
        return batch

    def trace_lines(self):
        return [json.dumps(m.trace_record(), sort_keys=True) for m in self.history]

    def write_trace(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.trace_lines():
                fh.write(line + "\n")


class ReorderingTransport(Transport):
    """Fault injector: each message may be held back past later barriers.

    Used to confirm that out-of-phase delivery is detected rather than
    silently absorbed.
    """

    def __init__(self, hold_probability=0.2, seed=None):
        super().__init__(shuffle=True, seed=seed)
        self.hold_probability = hold_probability
        self._held = []
        self.reordered = False

    def begin_round(self, round_no, mode):
        self.pending = self._held + self.pending
        self._held = []
        if self.pending:
            self.reordered = True
            raise ProtocolError(f"{len(self.pending)} messages still in flight at round start")
        super().begin_round(round_no, mode)

    def _take_batch(self):
        batch = self._held + list(self.pending)
        self._held = []
        out = []
        for msg in batch:
            if self._rng.random() < self.hold_probability:
                self._held.append(msg)
                self.reordered = True
            else:
                out.append(msg)
        if len(out) > 1:
            out = [out[i] for i in self._rng.permutation(len(out))]
        return out
