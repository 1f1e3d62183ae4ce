"""Federation state and the per-node split-finding rounds.

One *round* finds the split of one tree node:

* ``smm1``: the AP masks with a kernel of ``[g h]^T``; PPs answer
  ``(I - ZZ^T) M``; the AP scores every candidate.
* ``smm2``: PPs publish a kernel of their padded matrix; the AP answers
  ``(I - ZZ^T)[g h]`` (or refuses); PPs score and report their best.
* ``ldp``: the AP releases perturbed gradients once; PPs score with the
  first-order gain and report their best.

In every mode the AP then picks the best party and asks it to reveal the
winning column.
"""

import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..boosting import Hyperparams, best_index, worth_splitting
from ..errors import LeakRefusal, ProtocolError
from .messages import BasisPayload, Kind, PartyMessage, PerturbedGradients
from .parties import ActiveParty, PassiveParty, ProtocolParams
from .transport import Transport

MODES = ("centralized", "smm1", "smm2", "ldp")

_PURPOSE = {"basis": 1, "response": 2, "kernel": 3, "answer": 4, "ldp": 5}


@dataclass
class RoundResult:
    """Outcome of one node's split search.

    ``party_id is None`` means no party had a candidate.  ``left_ids`` is
    ``None`` when the best score did not justify a split.
    """

    party_id: Optional[int]
    candidate: Optional[int]
    score: float
    record_id: Optional[int] = None
    feature_id: object = None
    threshold: Optional[float] = None
    left_ids: Optional[tuple] = None
    right_ids: Optional[tuple] = None
    refusals: int = 0
    reports: dict = field(default_factory=dict)

    @property
    def split(self):
        return self.left_ids is not None


class Federation:
    """One active party, ``p`` passive parties and the transport between them."""

    def __init__(self, active, passives, params=None, protocol=None, seed=0, transport=None):
        self.active = active
        self.passives = list(passives)
        ids = [active.party_id] + [pp.party_id for pp in self.passives]
        if len(set(ids)) != len(ids):
            raise ValueError("party ids must be unique")
        if not all(isinstance(pp, PassiveParty) for pp in self.passives):
            raise TypeError("passives must be PassiveParty instances")
        if not isinstance(active, ActiveParty):
            raise TypeError("exactly one ActiveParty is required")
        for pp in self.passives:
            if not np.array_equal(pp.user_ids, active.user_ids):
                raise ValueError(f"party {pp.party_id} is not aligned with the active party")
        self.params = params or Hyperparams()
        self.protocol = protocol or ProtocolParams()
        self.seed = int(seed)
        self.transport = transport or Transport()
        self.transport.attach(active, active=True)
        for pp in self.passives:
            self.transport.attach(pp)
        self.round = 0
        self.timings = defaultdict(float)
        self.events = []

    @property
    def parties(self):
        return {p.party_id: p for p in [self.active] + self.passives}

    def rng(self, purpose, party_id):
        """Stream keyed by (seed, round, party, purpose); delivery order cannot shift it."""
        return np.random.default_rng([self.seed, self.round, int(party_id), _PURPOSE[purpose]])

    @contextmanager
    def timer(self, phase):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[phase] += time.perf_counter() - t0

    # -- oracle view (tests and centralized mode only)
    def joined_columns(self):
        cols = dict(self.active.features)
        for pp in self.passives:
            cols.update(pp.features)
        return cols

    def groups(self):
        out = []
        if self.active.features:
            out.append((self.active.party_id, list(self.active.features)))
        out.extend((pp.party_id, list(pp.features)) for pp in self.passives)
        return out

    def next_round(self, mode):
        self.round += 1
        self.transport.begin_round(self.round, mode)
        return self.round

    def _announce(self, rnd, node_id, user_ids):
        ap = self.active
        with self.timer("announce"):
            for pp in self.passives:
                self.transport.send(ap.announce(pp.party_id, rnd, node_id, user_ids))
            self.transport.flush()
            for pp in self.passives:
                pp.accept_announcement(ap.party_id, self.params)

    def _choose(self, per_party, rnd, send_index=False):
        """Pick the best ``(party, candidate, score)`` and fetch the split.

        ``send_index`` names the candidate in the request (the AP scanned
        all columns); otherwise the party reveals the best it reported.
        """
        per_party = [p for p in per_party if p[2] is not None]
        if not per_party:
            return RoundResult(None, None, float("-inf"))
        k = best_index([p[2] for p in per_party], self.params.tie_rtol)
        pid, cand, score = per_party[k][:3]
        result = RoundResult(pid, cand, score, reports={p[0]: p[2] for p in per_party})
        if not worth_splitting(score, self.params.tie_rtol):
            return result
        ap = self.active
        with self.timer("reveal"):
            if pid == ap.party_id:
                M = per_party[k][3]
                fid, thr = M.column_meta[cand]
                result.record_id = ap.store_record(fid, thr)
                result.feature_id, result.threshold = fid, thr
                result.left_ids = tuple(M.left_ids(cand).tolist())
                result.right_ids = tuple(M.right_ids(cand).tolist())
                return result
            pp = self.parties[pid]
            self.transport.send(ap.request(pid, rnd, cand if send_index else None))
            self.transport.flush()
            self.transport.send(pp.reveal(ap.party_id, rnd))
            self.transport.flush()
            rev = ap.take(Kind.SPLIT_REVEAL, pid)
        result.record_id = rev.record_id
        result.feature_id, result.threshold = rev.feature_id, rev.threshold
        result.left_ids, result.right_ids = rev.left_ids, rev.right_ids
        return result

    def _local(self, user_ids, first_order=False):
        best = self.active.local_best(user_ids, self.params, first_order)
        if best is None:
            return []
        j, score, M = best
        return [(self.active.party_id, j, score, M)]


def run_smm1_round(fed, node_id, user_ids):
    """AP-masked round: PPs return ``(I - ZZ^T) M``, the AP scans all candidates."""
    rnd = fed.next_round("smm1")
    ap, tr, proto = fed.active, fed.transport, fed.protocol
    fed._announce(rnd, node_id, user_ids)
    with fed.timer("kernel"):
        shared = None
        for pp in fed.passives:
            if proto.fresh_basis or shared is None:
                basis = ap.smm1_basis(user_ids, proto, fed.rng("basis", pp.party_id))
                shared = basis
            tr.send(_basis_msg(ap, pp.party_id, rnd, shared))
        tr.flush()
    with fed.timer("response"):
        for pp in fed.passives:
            tr.send(pp.smm1_respond(ap.party_id, rnd, proto, fed.rng("response", pp.party_id)))
        tr.flush()
    with fed.timer("scoring"):
        per_party = fed._local(user_ids)
        for pp in fed.passives:
            W = ap.take(Kind.SECURE_RESPONSE, pp.party_id).W
            if W.shape[1] == 0:
                continue
            scores = ap.smm1_scores(W, user_ids, fed.params)
            j = best_index(scores, fed.params.tie_rtol)
            if j is not None:
                per_party.append((pp.party_id, j, float(scores[j])))
    return fed._choose(per_party, rnd, send_index=True)


def _basis_msg(ap, to, rnd, basis):
    return PartyMessage(Kind.KERNEL_BASIS, ap.party_id, to, rnd, BasisPayload(basis.vectors))


def run_smm2_round(fed, node_id, user_ids):
    """PP-masked round with quasi-secure kernels and AP-side leak refusal."""
    rnd = fed.next_round("smm2")
    ap, tr, proto = fed.active, fed.transport, fed.protocol
    fed._announce(rnd, node_id, user_ids)
    waiting = list(fed.passives)
    refusals = 0
    attempt = 0
    while True:
        with fed.timer("kernel"):
            asked = []
            for pp in waiting:
                msg = pp.smm2_kernel(ap.party_id, rnd, proto,
                                     _attempt_rng(fed, "kernel", pp.party_id, attempt), attempt)
                if msg is None:
                    if attempt == 0:
                        tr.send(pp.empty_report(ap.party_id, rnd))
                    continue
                tr.send(msg)
                asked.append(pp)
            tr.flush()
        with fed.timer("response"):
            for pp in asked:
                tr.send(ap.smm2_answer(pp.party_id, rnd, user_ids, proto,
                                       _attempt_rng(fed, "answer", pp.party_id, attempt)))
            tr.flush()
        refused = [pp for pp in asked if ap.party_id in pp.inbox.get(Kind.REFUSAL, {})]
        for pp in refused:
            ref = pp.take(Kind.REFUSAL, ap.party_id)
            fed.events.append({"round": rnd, "party": pp.party_id, "event": "refusal",
                               "attempt": attempt, "flagged": ref.flagged})
        refusals += len(refused)
        with fed.timer("scoring"):
            for pp in asked:
                if pp not in refused:
                    tr.send(pp.smm2_score(ap.party_id, rnd, fed.params))
            tr.flush()
        if not refused:
            break
        attempt += 1
        if attempt > proto.max_retries:
            raise LeakRefusal(
                f"round {rnd}: party {refused[0].party_id} still exposes rows after "
                f"{proto.max_retries} regenerations")
        waiting = refused
    per_party = fed._local(user_ids)
    for pp in fed.passives:
        rep = ap.take(Kind.SCORE_REPORT, pp.party_id)
        per_party.append((pp.party_id, None, rep.score))
    result = fed._choose(per_party, rnd)
    result.refusals = refusals
    return result


def _attempt_rng(fed, purpose, party_id, attempt):
    base = fed.rng(purpose, party_id)
    if attempt == 0:
        return base
    return np.random.default_rng([fed.seed, fed.round, int(party_id), _PURPOSE[purpose], attempt])


def run_ldp_round(fed, node_id, user_ids):
    """Perturbed-gradient round scored with the first-order gain."""
    rnd = fed.next_round("ldp")
    ap, tr, proto = fed.active, fed.transport, fed.protocol
    fed._announce(rnd, node_id, user_ids)
    with fed.timer("perturb"):
        release = ap.ldp_release(user_ids, proto, fed.rng("ldp", ap.party_id))
        for pp in fed.passives:
            tr.send(PartyMessage(Kind.PERTURBED_GRADIENTS, ap.party_id, pp.party_id, rnd,
                                 PerturbedGradients(release.g_star, release.G)))
        tr.flush()
    with fed.timer("scoring"):
        for pp in fed.passives:
            tr.send(pp.ldp_score(ap.party_id, rnd, fed.params))
        tr.flush()
    per_party = fed._local(user_ids, first_order=True)
    for pp in fed.passives:
        rep = ap.take(Kind.SCORE_REPORT, pp.party_id)
        per_party.append((pp.party_id, None, rep.score))
    return fed._choose(per_party, rnd)


ROUND_DRIVERS = {"smm1": run_smm1_round, "smm2": run_smm2_round, "ldp": run_ldp_round}
