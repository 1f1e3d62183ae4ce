import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedxgb.boosting import (Hyperparams, Logistic, compute_grad_hess, predict,
                             split_score_first_order, split_score_second_order)
from fedxgb.candidates import aggregate, build_party_matrix
from fedxgb.data import align_and_partition, even_spec, generate_synthetic, partition
from fedxgb.errors import LeakRefusal, PhaseViolation, ProtocolError, RoutingError
from fedxgb.federation import (ActiveParty, ChannelAutomaton, Federation, Kind, LookupTable,
                               PartyMessage, PassiveParty, ProtocolParams, ReorderingTransport,
                               Role, Transport, build_tree, federated_predict,
                               federation_from_slices, run_ldp_round, run_smm1_round,
                               run_smm2_round, train_ensemble)
from fedxgb.federation.audit import AuditingTransport
from fedxgb.federation.messages import ResponsePayload, ScoreReport, UserSet
from fedxgb.ldp import first_order_score_variance

SMALL = Hyperparams(n_candidates=3, min_bucket=5, min_instances=10, max_depth=3)


def make_fed(n=30, d=4, seed=0, params=SMALL, protocol=None, passives=2, ap_features=False,
             transport=None):
    ds = generate_synthetic(n, d, seed=seed)
    spec = even_spec(ds, passives, ap_features)
    slices = align_and_partition(partition(ds, spec))
    return federation_from_slices(slices, spec, params, protocol or ProtocolParams(), seed,
                                  transport)


def brute_force_best(fed, user_ids):
    """(score, feature, threshold) of the best split over the joined table."""
    ap = fed.active
    rows = ap.rows(user_ids)
    g, h = ap.gh.g[rows], ap.gh.h[rows]
    best = (-np.inf, None, None)
    for name, col in fed.joined_columns().items():
        M = build_party_matrix({name: col[rows]}, fed.params.n_candidates, np.asarray(user_ids),
                               fed.params.min_bucket)
        if M.l == 0:
            continue
        agg = aggregate(M, g, h)
        s = split_score_second_order(agg.GL, agg.HL, agg.GR, agg.HR, g.sum(), h.sum(),
                                     fed.params.lam, fed.params.gamma)
        j = int(np.argmax(s))
        if s[j] > best[0] + 1e-9:
            best = (float(s[j]), name, M.column_meta[j][1])
    return best


# -- messages and automata ----------------------------------------------------

def test_payload_type_checked():
    with pytest.raises(TypeError):
        PartyMessage(Kind.ANNOUNCE, 0, 1, 1, ScoreReport(1.0))
    msg = PartyMessage(Kind.ANNOUNCE, 0, 1, 1, UserSet(0, (1, 2)))
    rec = msg.trace_record()
    assert rec["kind"] == "announce-user-set" and len(rec["payload_digest"]) == 16


def test_digest_tracks_content():
    a = PartyMessage(Kind.SECURE_RESPONSE, 1, 0, 1, ResponsePayload(np.ones((2, 2))))
    b = PartyMessage(Kind.SECURE_RESPONSE, 1, 0, 1, ResponsePayload(np.ones((2, 2))))
    c = PartyMessage(Kind.SECURE_RESPONSE, 1, 0, 1, ResponsePayload(np.zeros((2, 2))))
    assert a.digest() == b.digest() != c.digest()


def test_out_of_phase_message_rejected():
    aut = ChannelAutomaton("smm1")
    with pytest.raises(PhaseViolation):
        aut.step(Role.PASSIVE, Kind.SECURE_RESPONSE)
    aut = ChannelAutomaton("ldp")
    aut.step(Role.ACTIVE, Kind.ANNOUNCE)
    with pytest.raises(PhaseViolation):
        aut.step(Role.ACTIVE, Kind.KERNEL_BASIS)


LINEAR = {
    "smm1": [(Role.ACTIVE, Kind.ANNOUNCE), (Role.ACTIVE, Kind.KERNEL_BASIS),
             (Role.PASSIVE, Kind.SECURE_RESPONSE), (Role.ACTIVE, Kind.SPLIT_REQUEST),
             (Role.PASSIVE, Kind.SPLIT_REVEAL)],
    "ldp": [(Role.ACTIVE, Kind.ANNOUNCE), (Role.ACTIVE, Kind.PERTURBED_GRADIENTS),
            (Role.PASSIVE, Kind.SCORE_REPORT), (Role.ACTIVE, Kind.SPLIT_REQUEST),
            (Role.PASSIVE, Kind.SPLIT_REVEAL)],
}
STEPS = st.tuples(st.sampled_from(list(Role)), st.sampled_from(list(Kind)))


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(sorted(LINEAR)), st.lists(STEPS, max_size=7))
def test_fuzzed_sequences_accepted_only_in_order(mode, seq):
    aut = ChannelAutomaton(mode)
    accepted = 0
    for step in seq:
        try:
            aut.step(*step)
        except PhaseViolation:
            break
        accepted += 1
    legal = LINEAR[mode]
    # the accepted prefix is exactly the longest common prefix with the legal run
    k = 0
    while k < min(len(seq), len(legal)) and seq[k] == legal[k]:
        k += 1
    assert accepted == k


def test_smm2_refusal_loop_is_legal():
    aut = ChannelAutomaton("smm2")
    for role, kind in [(Role.ACTIVE, Kind.ANNOUNCE), (Role.PASSIVE, Kind.KERNEL_BASIS),
                       (Role.ACTIVE, Kind.REFUSAL), (Role.PASSIVE, Kind.KERNEL_BASIS),
                       (Role.ACTIVE, Kind.SECURE_RESPONSE), (Role.PASSIVE, Kind.SCORE_REPORT)]:
        aut.step(role, kind)
    assert aut.state == "scored"


def test_transport_rejects_bad_routing():
    fed = make_fed()
    fed.next_round("smm1")
    with pytest.raises(ProtocolError):
        fed.transport.send(PartyMessage(Kind.ANNOUNCE, 0, 1, 99, UserSet(0, ())))
    with pytest.raises(ProtocolError):
        fed.transport.send(PartyMessage(Kind.SCORE_REPORT, 1, 2, 1, ScoreReport(0.0)))


# -- single rounds against the single-site oracle ------------------------------

@pytest.mark.parametrize("driver", [run_smm1_round, run_smm2_round])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_secure_round_finds_oracle_split(driver, seed):
    fed = make_fed(seed=seed, params=Hyperparams(n_candidates=3, min_bucket=3))
    fed.active.refresh_gradients()
    ids = fed.active.user_ids.tolist()
    score, feat, thr = brute_force_best(fed, ids)
    res = driver(fed, 0, ids)
    assert res.score == pytest.approx(score, abs=1e-8)
    assert (res.feature_id, res.threshold) == (feat, thr)
    col = fed.joined_columns()[feat]
    assert set(res.left_ids) == {u for u, x in zip(ids, col) if x <= thr}


def test_smm2_without_fakes_matches_smm1():
    base = dict(n_candidates=3, min_bucket=3)
    out = []
    for driver, proto in ((run_smm1_round, ProtocolParams()),
                          (run_smm2_round, ProtocolParams(l1=0, l2=0))):
        fed = make_fed(n=40, seed=4, params=Hyperparams(**base), protocol=proto)
        fed.active.refresh_gradients()
        res = driver(fed, 0, fed.active.user_ids.tolist())
        out.append((res.party_id, res.feature_id, res.threshold, res.left_ids, res.score))
    assert out[0][:4] == out[1][:4]
    assert out[0][4] == pytest.approx(out[1][4], abs=1e-8)


def test_refusal_without_fake_columns():
    n = 40
    ids = np.arange(n)
    ap = ActiveParty(0, ids, (np.arange(n) % 2).astype(float))
    pp = PassiveParty(1, ids, {"x": np.arange(n, dtype=float)})
    fed = Federation(ap, [pp], Hyperparams(n_candidates=8, min_bucket=2),
                     ProtocolParams(l1=0, l2=0, mix=False, max_retries=0))
    ap.refresh_gradients()
    with pytest.raises(LeakRefusal):
        run_smm2_round(fed, 0, ids.tolist())
    assert fed.events and fed.events[0]["event"] == "refusal"


def _first_order_with_sd(col, g, lam, eps, l=4):
    n = g.size
    M = build_party_matrix({"x": col}, l, np.arange(n), 8)
    agg = aggregate(M, g, np.ones(n))
    s = split_score_first_order(agg.GL, agg.GR, lam)
    v = 2 * (2.0 / eps) ** 2
    nl = M.entries.sum(axis=0)
    vl, vr = v * nl, v * (n - nl)
    var = first_order_score_variance(agg.GL, agg.GR, vl, vr, lam) + vl * vr / lam ** 2
    return s, np.sqrt(var)


def test_ldp_picks_informative_party():
    n, eps = 200, 8.0
    rng = np.random.default_rng(0)
    a = rng.standard_normal(n)
    y = (a > 0).astype(float)
    b = rng.standard_normal(n)
    lam = n / 16
    g = compute_grad_hess(Logistic, y, np.zeros(n)).g
    sa, da = _first_order_with_sd(a, g, lam, eps)
    sb, db = _first_order_with_sd(b, g, lam, eps)
    j = int(np.argmax(sa))
    assert sa[j] - sb.max() > 5 * (da[j] + db.max())
    wins = 0
    for s in range(200):
        ap = ActiveParty(0, np.arange(n), y)
        pa = PassiveParty(1, np.arange(n), {"A": a})
        pb = PassiveParty(2, np.arange(n), {"B": b})
        fed = Federation(ap, [pa, pb], Hyperparams(lam=lam), ProtocolParams(epsilon=eps), seed=s)
        ap.refresh_gradients()
        wins += run_ldp_round(fed, 0, list(range(n))).party_id == 1
    assert wins >= 190


# -- trees, lookup and inference -------------------------------------------------

def test_depth_zero_is_single_leaf():
    fed = make_fed(params=Hyperparams(max_depth=0))
    fed.active.refresh_gradients()
    tree, lookup, fitted = build_tree(fed, "smm2")
    assert len(tree.nodes) == 1 and len(lookup) == 0
    g, h = fed.active.gh.g, fed.active.gh.h
    assert tree.nodes[0].leaf_weight == pytest.approx(-g.sum() / (h.sum() + 1.0))


def test_ldp_leaf_weight_is_first_order():
    fed = make_fed(params=Hyperparams(max_depth=0, lam=2.0))
    fed.active.refresh_gradients()
    tree, _, _ = build_tree(fed, "ldp")
    assert tree.nodes[0].leaf_weight == pytest.approx(-fed.active.gh.g.sum() / 2.0)


@pytest.mark.parametrize("mode", ["smm1", "smm2", "ldp", "centralized"])
def test_lookup_covers_internal_nodes(mode):
    fed = make_fed(n=120, params=Hyperparams(n_candidates=4, min_bucket=8, min_instances=20))
    res = train_ensemble(fed, mode, 2)
    keys = {(t, nd.node_id) for t, tree in enumerate(res.ensemble.trees)
            for nd in tree.internal_nodes()}
    assert set(res.lookup.entries) == keys
    for (t, nid), (pid, rid) in res.lookup.entries.items():
        assert rid in fed.parties[pid].records


def test_federated_predict_matches_joined_routing():
    fed = make_fed(n=120, params=Hyperparams(n_candidates=4, min_bucket=8, min_instances=20))
    res = train_ensemble(fed, "smm2", 3)
    cols = fed.joined_columns()
    for row, u in enumerate(fed.active.user_ids.tolist()):
        def router(ref):
            rec = fed.parties[ref[0]].records[ref[1]]
            return cols[rec.feature_id][row] <= rec.threshold
        assert federated_predict(res.ensemble, res.lookup, fed.parties, u) == \
            predict(res.ensemble, router)
    with pytest.raises(RoutingError):
        federated_predict(res.ensemble, res.lookup, fed.parties, "nobody")


def test_single_split_single_tree():
    n = 40
    ids = np.arange(n)
    x = np.arange(n, dtype=float)
    ap = ActiveParty(0, ids, (x >= 20).astype(float))
    pp = PassiveParty(1, ids, {"x": x})
    fed = Federation(ap, [pp], Hyperparams(max_depth=1, n_candidates=1, min_bucket=2))
    res = train_ensemble(fed, "smm2", 1)
    assert res.lookup.to_list() == [[0, 0, 1, 0]]
    tree = res.ensemble.trees[0]
    wl, wr = tree.nodes[1].leaf_weight, tree.nodes[2].leaf_weight
    assert federated_predict(res.ensemble, res.lookup, fed.parties, 3) == pytest.approx(0.3 * wl)
    assert federated_predict(res.ensemble, res.lookup, fed.parties, 30) == pytest.approx(0.3 * wr)
    with pytest.raises(RoutingError):
        federated_predict(res.ensemble, LookupTable(), fed.parties, 3)
    with pytest.raises(RoutingError):
        federated_predict(res.ensemble, res.lookup, {0: ap}, 3)


def test_lookup_round_trip_and_duplicates():
    lt = LookupTable()
    lt.add(0, 0, 1, 0)
    lt.add(0, 1, 2, 0)
    assert LookupTable.from_list(lt.to_list()).entries == lt.entries
    with pytest.raises(ValueError):
        lt.add(0, 0, 2, 1)


# -- transport behaviour -------------------------------------------------------------

def _run(mode, transport, seed=3):
    fed = make_fed(n=120, seed=seed, transport=transport,
                   params=Hyperparams(n_candidates=4, min_bucket=8, min_instances=20))
    res = train_ensemble(fed, mode, 2)
    return res, fed


@pytest.mark.parametrize("mode", ["smm1", "smm2", "ldp"])
def test_shuffled_delivery_changes_nothing(mode):
    a, _ = _run(mode, Transport())
    b, _ = _run(mode, Transport(shuffle=True, seed=9))
    assert a.losses == b.losses
    assert a.lookup.entries == b.lookup.entries
    assert a.ensemble == b.ensemble


@pytest.mark.parametrize("seed", range(6))
def test_reordering_is_detected_or_harmless(seed):
    ref, _ = _run("smm2", Transport())
    tr = ReorderingTransport(0.1, seed=seed)
    try:
        res, _ = _run("smm2", tr)
    except ProtocolError:
        assert tr.reordered
        return
    assert res.losses == ref.losses


class LeakyParty(PassiveParty):
    def smm1_respond(self, ap_id, rnd, protocol, rng):
        self.take(Kind.KERNEL_BASIS, ap_id)
        return self._msg(Kind.SECURE_RESPONSE, rnd, ResponsePayload(self._M.entries.copy()),
                         ap_id)


def test_audit_flags_leaky_party():
    ds = generate_synthetic(60, 2, seed=1)
    ids = ds.user_ids
    ap = ActiveParty(0, ids, ds.labels)
    pp = LeakyParty(1, ids, {"f0": ds.columns["f0"]})
    tr = AuditingTransport()
    fed = Federation(ap, [pp], Hyperparams(n_candidates=3, min_bucket=5, max_depth=1),
                     transport=tr)
    train_ensemble(fed, "smm1", 1)
    assert any("splitting" in v["violation"] or "column" in v["violation"]
               for v in tr.violations)


@pytest.mark.parametrize("mode", ["smm1", "smm2", "ldp"])
def test_audit_clean_on_honest_parties(mode):
    tr = AuditingTransport()
    _run(mode, tr)
    assert tr.violations == []


def test_trace_is_ndjson(tmp_path):
    _, fed = _run("smm2", Transport())
    path = tmp_path / "trace.ndjson"
    fed.transport.write_trace(path)
    lines = path.read_text().splitlines()
    assert len(lines) == len(fed.transport.history)
    first = json.loads(lines[0])
    assert set(first) == {"round", "sender", "receiver", "kind", "payload_digest"}


def test_federation_rejects_misaligned_parties():
    ap = ActiveParty(0, [1, 2, 3], [0, 1, 0])
    with pytest.raises(ValueError):
        Federation(ap, [PassiveParty(1, [1, 2, 4], {"x": [1, 2, 3]})])
    with pytest.raises(ValueError):
        Federation(ap, [PassiveParty(0, [1, 2, 3], {"x": [1, 2, 3]})])
