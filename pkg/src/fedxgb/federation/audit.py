"""Transport-level privacy audit.

:class:`AuditingTransport` inspects every message as it is queued, with
the sender's private state at hand, and records a violation whenever a
payload carries something the mode forbids:

* a kind outside the mode's message protocol;
* any raw feature column, splitting-matrix column, hessian vector or
  unperturbed gradient vector of the current node, in any array field;
* in ``ldp``, any hessian-bearing field at all.

The audit is an oracle with a global view; parties never use it.
"""

import numpy as np

from .messages import Kind, PROTOCOL_KINDS, ResponsePayload
from .transport import Transport

EQ_TOL = 1e-12


def _arrays(payload):
    for name in ("vectors", "W", "g_star"):
        a = getattr(payload, name, None)
        if a is not None:
            yield name, np.atleast_2d(np.asarray(a, dtype=float).T).T


def _matching_columns(A, F, tol=EQ_TOL):
    """Pairs (i, j) with ``A[:, i] == F[:, j]`` for non-zero ``F[:, j]``."""
    if A.size == 0 or F.size == 0 or A.shape[0] != F.shape[0]:
        return []
    live = np.abs(F).max(axis=0) > tol
    hits = []
    for j in np.flatnonzero(live):
        d = np.abs(A - F[:, [j]]).max(axis=0)
        hits.extend((int(i), int(j)) for i in np.flatnonzero(d <= tol))
    return hits


class AuditingTransport(Transport):
    def __init__(self, shuffle=False, seed=None):
        super().__init__(shuffle, seed)
        self.violations = []
        self.kind_counts = {}

    def send(self, msg):
        self._inspect(msg)
        super().send(msg)

    def _flag(self, msg, what):
        self.violations.append({"round": msg.round, "sender": msg.sender,
                                "receiver": msg.receiver, "kind": msg.kind.value,
                                "violation": what})

    def _inspect(self, msg):
        key = (self.mode, msg.kind.value)
        self.kind_counts[key] = self.kind_counts.get(key, 0) + 1
        if msg.kind not in PROTOCOL_KINDS.get(self.mode, ()):
            self._flag(msg, f"kind not allowed in {self.mode}")
        if self.mode == "ldp" and isinstance(msg.payload, ResponsePayload):
            self._flag(msg, "hessian-bearing payload in ldp")
        sender = self.parties[msg.sender]
        for label, F in self._forbidden(sender, msg):
            for field, A in _arrays(msg.payload):
                if _matching_columns(A, F):
                    self._flag(msg, f"{field} contains a raw {label} column")

    def _forbidden(self, party, msg):
        out = []
        if msg.sender == self.active_id:
            users = self._node_users(msg)
            if users is None or party.gh is None:
                return out
            g, h = party.node_gh(users)
            out.append(("gradient", g[:, None]))
            out.append(("hessian", h[:, None]))
            rows = party.rows(users)
        else:
            node = getattr(party, "_node", None)
            if node is None:
                return out
            rows = party.rows(node.user_ids)
            M = getattr(party, "_M", None)
            if M is not None and M.l:
                out.append(("splitting-matrix", M.entries))
        if party.features:
            out.append(("feature", np.column_stack([v[rows] for v in party.features.values()])))
        return out

    def _node_users(self, msg):
        # the AP's current node is whatever it last announced this round
        if msg.kind == Kind.ANNOUNCE:
            self._current_users = list(msg.payload.user_ids)
        return getattr(self, "_current_users", None)
