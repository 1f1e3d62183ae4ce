"""Privacy audit suite behind ``fedxgb audit``.

Every check returns a :class:`Check`; failures are report content, not
exceptions.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import ldp
from .boosting import Hyperparams
from .errors import LeakRefusal
from .federation import (ActiveParty, Federation, PassiveParty, ProtocolParams,
                         federation_from_slices, run_smm2_round, train_ensemble)
from .federation.audit import AuditingTransport
from .secure_linalg import (default_r, default_r_prime, detect_sparsity_leak, leak_fixture,
                            masking_projector, secure_kernel, select_mask, smm_protocol)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def as_dict(self):
        return asdict(self)


def transport_check(slices, spec, params, protocol, mode, seed=0, rounds=2):
    tr = AuditingTransport()
    fed = federation_from_slices(slices, spec, params, protocol, seed, tr)
    train_ensemble(fed, mode, rounds)
    kinds = sorted({k for (m, k) in tr.kind_counts})
    if tr.violations:
        v = tr.violations[0]
        detail = f"{len(tr.violations)} violations, first: round {v['round']} {v['kind']}: " \
                 f"{v['violation']}"
    else:
        detail = f"{len(tr.history)} messages audited, kinds {kinds}"
    return Check(f"transport-{mode}", not tr.violations, detail), tr


def no_hessian_check(tr):
    bad = [v for v in tr.violations if "hessian" in v["violation"] or "gradient" in v["violation"]]
    sent_h = any(k == "secure-response" for (_, k) in tr.kind_counts)
    ok = not bad and not sent_h
    return Check("ldp-no-hessian-or-raw-gradient", ok,
                 "no hessian field and no unperturbed gradient transmitted" if ok
                 else f"{len(bad)} offending messages")


def sparsity_fixture_check(l2, seeds=50, n=40, l=8):
    """Canonical-basis fixtures with all-zero and all-one rows.

    Expectation: every seed flags rows when ``l2 == 0``; none does when
    ``l2 >= 1``.
    """
    flagged = 0
    for s in range(seeds):
        rng = np.random.default_rng([s, 7])
        M = leak_fixture(n, l, 2, 2, rng)
        _, basis = secure_kernel(M, 0, l2, r=default_r(n), rng=rng, mix=False)
        Z = select_mask(basis, default_r_prime(basis.r), rng)
        flagged += bool(detect_sparsity_leak(basis, masking_projector(Z)))
    ok = flagged == seeds if l2 == 0 else flagged == 0
    return Check(f"sparsity-fixture-l2={l2}", ok,
                 f"detector flagged {flagged}/{seeds} seeds")


def sparsity_refusal_check(l2, n=40, l=8, seed=0):
    """Live round on a one-feature PP whose matrix has all-zero rows."""
    ids = np.arange(n)
    rng = np.random.default_rng(seed)
    labels = (rng.random(n) < 0.5).astype(float)
    ap = ActiveParty(0, ids, labels)
    pp = PassiveParty(1, ids, {"x": np.arange(n, dtype=float)})
    params = Hyperparams(n_candidates=l, min_bucket=2)
    proto = ProtocolParams(l1=0, l2=l2, mix=False, max_retries=0)
    fed = Federation(ap, [pp], params, proto, seed)
    ap.refresh_gradients()
    try:
        run_smm2_round(fed, 0, ids.tolist())
        aborted = False
    except LeakRefusal:
        aborted = True
    refusals = [e for e in fed.events if e["event"] == "refusal"]
    ok = bool(refusals) if l2 == 0 else not refusals
    return Check(f"sparsity-refusal-l2={l2}", ok,
                 f"{len(refusals)} refusal events, aborted={aborted}")


def ldp_ratio_check(budget, mechanism, grid=201):
    """Worst output-probability ratio over an input grid against ``e^eps``."""
    C, eps = budget.clip, budget.epsilon
    v = np.linspace(-C, C, grid)
    if mechanism == "duchi":
        p = ldp.duchi_plus_probability(v / C, eps)
        p = np.stack([p, 1.0 - p])
        worst = float(np.max(np.log(p.max(axis=1)) - np.log(p.min(axis=1))))
    else:
        b = ldp.laplace_scale(budget)
        y = np.linspace(-3 * C, 3 * C, grid)
        logd = -np.abs(y[:, None] - v[None, :]) / b
        worst = float(np.max(logd.max(axis=1) - logd.min(axis=1)))
    ok = worst <= eps * (1 + 1e-12)
    return Check(f"ldp-ratio-{mechanism}", ok,
                 f"max log-ratio {worst:.6g} vs epsilon {eps:g} (ratio bound e^eps)")


def smm_check(instances=20, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(6, 50))
        a = int(rng.integers(1, max(2, n // 3)))
        b = int(rng.integers(1, 6))
        A, B = rng.standard_normal((n, a)), rng.standard_normal((n, b))
        r = n - a
        got = smm_protocol(A, B, r, max(1, math.ceil(r / 2)), rng)
        worst = max(worst, float(np.abs(got - A.T @ B).max()))
    return Check("smm-product", worst <= 1e-8, f"max error {worst:.3g} over {instances} instances")


def run_audit(slices, spec, params, protocol, seed=0, rounds=2):
    checks = []
    for mode in ("smm1", "smm2", "ldp"):
        chk, tr = transport_check(slices, spec, params, protocol, mode, seed, rounds)
        checks.append(chk)
        if mode == "ldp":
            checks.append(no_hessian_check(tr))
    l2 = 2 if protocol.l2 is None else protocol.l2
    checks.append(sparsity_fixture_check(l2))
    checks.append(sparsity_refusal_check(l2))
    checks.append(ldp_ratio_check(protocol.budget, protocol.mechanism))
    checks.append(smm_check())
    return checks
