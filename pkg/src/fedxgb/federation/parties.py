"""Active and passive party state.

Parties never touch each other's attributes; everything they learn about
one another arrives through :meth:`receive`.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import ldp
from ..boosting import (SplitRecord, best_index, compute_grad_hess, first_order_leaf_weight,
                        get_loss, masked_first_order_scores, masked_second_order_scores,
                        optimal_leaf_weight)
from ..candidates import Aggregates, aggregate, build_party_matrix, degenerate_columns
from ..errors import CapacityError, ProtocolError, RoutingError
from ..secure_linalg import (KernelBasis, apply_mask, default_l2, default_r, default_r_prime,
                             detect_sparsity_leak, kernel_basis, kernel_dimension,
                             masking_projector, numerical_rank, secure_kernel,
                             secure_response, select_mask)
from .messages import (BasisPayload, Kind, PartyMessage, PerturbedGradients, Refusal,
                       ResponsePayload, ScoreReport, SplitRequest, SplitReveal, UserSet)


@dataclass
class ProtocolParams:
    """Knobs of the secure and perturbed protocols.

    ``None`` means "use the per-node default": ``r = max(2, n // 4)``,
    ``r_prime = ceil(r / 2)``, ``l1 = l`` and ``l2 = max(2, ceil(l / 4))``.
    """

    r: Optional[int] = None
    r_prime: Optional[int] = None
    l1: Optional[int] = None
    l2: Optional[int] = None
    mu: float = 0.0
    sigma: float = 1.0
    mix: bool = True
    fresh_basis: bool = True
    max_retries: int = 3
    epsilon: float = 1.0
    clip: float = 1.0
    mechanism: str = "laplace"

    @property
    def budget(self):
        return ldp.PrivacyBudget(self.epsilon, self.clip)


class _Party:
    role = None

    def __init__(self, party_id, user_ids, features=None):
        self.party_id = party_id
        self.user_ids = np.asarray(user_ids)
        self.features = {k: np.asarray(v, dtype=float) for k, v in (features or {}).items()}
        for name, col in self.features.items():
            if col.shape[0] != self.user_ids.shape[0]:
                raise ValueError(f"feature {name!r} has {col.shape[0]} rows, "
                                 f"expected {self.user_ids.shape[0]}")
        self._row = {uid: i for i, uid in enumerate(self.user_ids.tolist())}
        self.records = {}
        self._next_record = 0
        self.inbox = {}

    # -- transport hooks
    def reset_inbox(self):
        self.inbox = {}

    def receive(self, msg):
        self.inbox.setdefault(msg.kind, {})[msg.sender] = msg.payload

    def take(self, kind, sender):
        try:
            return self.inbox[kind].pop(sender)
        except KeyError:
            raise ProtocolError(f"party {self.party_id} expected {kind.value} "
                                f"from {sender}, nothing delivered") from None

    def rows(self, user_ids):
        try:
            return np.array([self._row[u] for u in user_ids], dtype=int)
        except KeyError as exc:
            raise RoutingError(f"party {self.party_id} does not know instance {exc.args[0]!r}")

    def node_matrix(self, user_ids, params):
        rows = self.rows(user_ids)
        cols = {f: v[rows] for f, v in self.features.items()}
        return build_party_matrix(cols, params.n_candidates, np.asarray(user_ids),
                                  params.min_bucket)

    def store_record(self, feature_id, threshold):
        rid = self._next_record
        self._next_record += 1
        self.records[rid] = SplitRecord(feature_id, float(threshold))
        return rid

    def route(self, record_id, instance_id):
        """``True`` when ``instance_id`` goes left at split ``record_id``."""
        try:
            rec = self.records[record_id]
        except KeyError:
            raise RoutingError(f"party {self.party_id} has no split record {record_id}")
        row = self.rows([instance_id])[0]
        return bool(self.features[rec.feature_id][row] <= rec.threshold)


class PassiveParty(_Party):
    role = "passive"

    def __init__(self, party_id, user_ids, features):
        super().__init__(party_id, user_ids, features)
        self._node = None
        self._M = None
        self._qsm = None
        self._best = None

    def _msg(self, kind, rnd, payload, to):
        return PartyMessage(kind, self.party_id, to, rnd, payload)

    def accept_announcement(self, ap_id, params):
        ann = self.take(Kind.ANNOUNCE, ap_id)
        self._node = ann
        self._M = self.node_matrix(ann.user_ids, params)
        self._best = None
        return self._M

    # -- SMM-1: answer (I - ZZ^T) M
    def smm1_respond(self, ap_id, rnd, protocol, rng):
        basis = self.take(Kind.KERNEL_BASIS, ap_id)
        vectors = basis.vectors
        r = vectors.shape[1]
        r_prime = min(protocol.r_prime or default_r_prime(r), r)
        W = secure_response(self._M.entries, KernelBasis(vectors), r_prime, rng)
        return self._msg(Kind.SECURE_RESPONSE, rnd, ResponsePayload(W), ap_id)

    # -- SMM-2: publish a kernel of the quasi-secure matrix
    def smm2_kernel(self, ap_id, rnd, protocol, rng, attempt=0):
        """Kernel-basis message, or ``None`` when there is nothing to evaluate."""
        M = self._M
        if M.l == 0:
            return None
        n = M.n
        l1, l2, r = plan_secure_kernel(n, numerical_rank(M.entries), M.l, protocol, attempt)
        self._qsm, basis = secure_kernel(M, l1, l2, protocol.mu, protocol.sigma, r, rng,
                                         mix=protocol.mix)
        return self._msg(Kind.KERNEL_BASIS, rnd, BasisPayload(basis.vectors), ap_id)

    def smm2_score(self, ap_id, rnd, params):
        resp = self.take(Kind.SECURE_RESPONSE, ap_id)
        agg_all = self._qsm.m_star.T @ resp.W
        V = self._qsm.true_index
        GL, HL = agg_all[V, 0], agg_all[V, 1]
        agg = Aggregates(GL, HL, resp.G - GL, resp.H - HL)
        scores = masked_second_order_scores(agg, resp.G, resp.H, params.lam, params.gamma,
                                            degenerate_columns(self._M))
        return self._report(ap_id, rnd, scores, params)

    def empty_report(self, ap_id, rnd):
        self._best = None
        return self._msg(Kind.SCORE_REPORT, rnd, ScoreReport(None), ap_id)

    # -- LDP: first-order score from perturbed gradients
    def ldp_score(self, ap_id, rnd, params):
        pg = self.take(Kind.PERTURBED_GRADIENTS, ap_id)
        M = self._M
        GL = M.entries.T @ pg.g_star
        GR = pg.G - GL
        scores = masked_first_order_scores(GL, GR, params.lam, degenerate_columns(M))
        return self._report(ap_id, rnd, scores, params)

    def _report(self, ap_id, rnd, scores, params):
        j = best_index(scores, params.tie_rtol) if scores.size else None
        self._best = j
        score = None if j is None else float(scores[j])
        return self._msg(Kind.SCORE_REPORT, rnd, ScoreReport(score), ap_id)

    # -- reveal the chosen column
    def reveal(self, ap_id, rnd):
        req = self.take(Kind.SPLIT_REQUEST, ap_id)
        j = req.candidate if req.candidate is not None else self._best
        if j is None or not 0 <= j < self._M.l:
            raise ProtocolError(f"party {self.party_id} cannot reveal candidate {j}")
        fid, thr = self._M.column_meta[j]
        rid = self.store_record(fid, thr)
        left = tuple(self._M.left_ids(j).tolist())
        right = tuple(self._M.right_ids(j).tolist())
        return self._msg(Kind.SPLIT_REVEAL, rnd, SplitReveal(rid, fid, thr, left, right), ap_id)


def plan_secure_kernel(n, rank_M, l, protocol, attempt=0):
    """Pick ``(l1, l2, r)`` that fit the node's kernel.

    ``l2`` doubles on each regeneration attempt.  Fake columns are trimmed
    first, then ``r``, keeping at least two kernel vectors when possible.
    """
    l2 = (protocol.l2 if protocol.l2 is not None else default_l2(l)) * (2 ** attempt)
    l1 = protocol.l1 if protocol.l1 is not None else l
    r = protocol.r if protocol.r is not None else default_r(n)
    free = n - rank_M - l2
    if free < 1:
        raise CapacityError(
            f"node of {n} users: rank(M)={rank_M} plus l2={l2} leaves no kernel")
    r = min(r, free)
    r_floor = min(r, 2)
    l1 = max(0, min(l1, free - r_floor))
    r = min(r, free - l1)
    return l1, l2, r


class ActiveParty(_Party):
    role = "active"

    def __init__(self, party_id, user_ids, labels, loss="logistic", features=None,
                 base_score=0.0):
        super().__init__(party_id, user_ids, features)
        self.labels = np.asarray(labels, dtype=float)
        if self.labels.shape[0] != self.user_ids.shape[0]:
            raise ValueError("labels do not match user_ids")
        self.loss = get_loss(loss)
        self.margin = np.full(self.labels.shape[0], float(base_score))
        self.gh = None

    def refresh_gradients(self):
        self.gh = compute_grad_hess(self.loss, self.labels, self.margin, self.user_ids)
        return self.gh

    def node_gh(self, user_ids):
        rows = self.rows(user_ids)
        return self.gh.g[rows], self.gh.h[rows]

    def announce(self, to, rnd, node_id, user_ids):
        return PartyMessage(Kind.ANNOUNCE, self.party_id, to, rnd,
                            UserSet(node_id, tuple(user_ids)))

    # -- SMM-1
    def smm1_basis(self, user_ids, protocol, rng):
        g, h = self.node_gh(user_ids)
        D = np.column_stack([g, h])
        dim = kernel_dimension(D)
        if dim < 1:
            raise CapacityError(f"[g h] of a {len(user_ids)}-user node has no kernel")
        r = min(protocol.r or default_r(len(user_ids)), dim)
        return kernel_basis(D, r, rng, mix=protocol.mix)

    def smm1_scores(self, W, user_ids, params):
        g, h = self.node_gh(user_ids)
        G, H = g.sum(), h.sum()
        GL, HL = W.T @ g, W.T @ h
        return masked_second_order_scores(Aggregates(GL, HL, G - GL, H - HL), G, H,
                                          params.lam, params.gamma)

    # -- SMM-2
    def smm2_answer(self, sender, rnd, user_ids, protocol, rng):
        """Mask ``[g h]`` with the party's kernel, or refuse if rows would leak."""
        basis_payload = self.take(Kind.KERNEL_BASIS, sender)
        basis = KernelBasis(basis_payload.vectors)
        g, h = self.node_gh(user_ids)
        r_prime = min(protocol.r_prime or default_r_prime(basis.r), basis.r)
        Z = select_mask(basis, r_prime, rng)
        flagged = detect_sparsity_leak(basis, masking_projector(Z))
        if flagged:
            return PartyMessage(Kind.REFUSAL, self.party_id, sender, rnd,
                                Refusal("sparse mask exposes rows", len(flagged)))
        V = np.column_stack([g, h])
        W = apply_mask(V, Z)
        return PartyMessage(Kind.SECURE_RESPONSE, self.party_id, sender, rnd,
                            ResponsePayload(W, float(g.sum()), float(h.sum())))

    # -- LDP
    def ldp_release(self, user_ids, protocol, rng):
        g, _ = self.node_gh(user_ids)
        g_star = ldp.perturb(g, protocol.budget, protocol.mechanism, rng)
        return PerturbedGradients(g_star, float(g.sum()))

    # -- own features, evaluated in the clear
    def local_best(self, user_ids, params, first_order=False):
        if not self.features:
            return None
        M = self.node_matrix(user_ids, params)
        if M.l == 0:
            return None
        g, h = self.node_gh(user_ids)
        agg = aggregate(M, g, h)
        deg = degenerate_columns(M)
        if first_order:
            scores = masked_first_order_scores(agg.GL, agg.GR, params.lam, deg)
        else:
            scores = masked_second_order_scores(agg, g.sum(), h.sum(), params.lam,
                                                params.gamma, deg)
        j = best_index(scores, params.tie_rtol)
        if j is None:
            return None
        return j, float(scores[j]), M

    def request(self, to, rnd, candidate=None):
        return PartyMessage(Kind.SPLIT_REQUEST, self.party_id, to, rnd, SplitRequest(candidate))

    def leaf_weight(self, user_ids, lam, first_order=False):
        g, h = self.node_gh(user_ids)
        if first_order:
            return first_order_leaf_weight(g.sum(), lam)
        return optimal_leaf_weight(g.sum(), h.sum(), lam)
