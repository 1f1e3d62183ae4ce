"""Split candidate proposal, the splitting operator and per-candidate aggregation.

A passive party turns a feature column into a binary *splitting matrix*: one
column per threshold, entry ``1`` when the user falls in the left child
(``x <= threshold``).  Gradient sums for every candidate are then a single
matrix-vector product, which is what the secure protocols compute remotely.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class SplitCandidateSet:
    feature_id: object
    thresholds: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float).reshape(-1)
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ParameterError("thresholds must be strictly increasing")
        object.__setattr__(self, "thresholds", t)

    @property
    def l(self):
        return int(self.thresholds.size)

    def __len__(self):
        return self.l

    @property
    def empty(self):
        return self.l == 0


@dataclass
class SplittingMatrix:
    """Binary ``n x l`` left-membership matrix plus column provenance.

    ``column_meta[j]`` is ``(feature_id, threshold)`` of column ``j``;
    ``user_ids`` labels the rows.
    """

    entries: np.ndarray
    column_meta: list = field(default_factory=list)
    user_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim == 1:
            e = e.reshape(-1, 1)
        if e.ndim != 2:
            raise DimensionError("splitting matrix must be 2-D")
        if not np.all((e == 0) | (e == 1)):
            raise ParameterError("splitting matrix entries must be 0 or 1")
        self.entries = e
        if len(self.column_meta) != e.shape[1]:
            raise DimensionError(
                f"{len(self.column_meta)} column labels for {e.shape[1]} columns")
        if self.user_ids is None:
            self.user_ids = np.arange(e.shape[0])
        else:
            self.user_ids = np.asarray(self.user_ids)
        if self.user_ids.shape[0] != e.shape[0]:
            raise DimensionError("user_ids do not match the row count")

    @property
    def n(self):
        return self.entries.shape[0]

    @property
    def l(self):
        return self.entries.shape[1]

    def left_ids(self, j):
        return self.user_ids[self.entries[:, j] == 1]

    def right_ids(self, j):
        return self.user_ids[self.entries[:, j] == 0]


class Aggregates(NamedTuple):
    GL: np.ndarray
    HL: np.ndarray
    GR: np.ndarray
    HR: np.ndarray


def propose_candidates(feature_values, l, feature_id=None, min_bucket=1):
    """Propose up to ``l`` thresholds at evenly spaced quantiles.

    Quantile ranks are taken over the sorted *unique* values; each threshold
    sits at the midpoint between the two unique values around its rank.
    ``min_bucket`` drops cuts that would leave fewer than that many
    instances between two consecutive thresholds (or on either outer side).
    A constant feature yields an empty set.
    """
    if l < 1:
        raise ParameterError("l must be >= 1")
    if min_bucket < 1:
        raise ParameterError("min_bucket must be >= 1")
    x = np.asarray(feature_values, dtype=float).reshape(-1)
    if x.size < 2:
        return SplitCandidateSet(feature_id, np.empty(0))
    uniq = np.unique(x)
    m = uniq.size
    if m < 2:
        return SplitCandidateSet(feature_id, np.empty(0))

    ranks = sorted({min(max((k * m) // (l + 1), 1), m - 1) for k in range(1, l + 1)})
    # instances at or below each unique value
    counts_le = np.searchsorted(np.sort(x), uniq, side="right")
    n = x.size
    kept = []
    prev_left = 0
    for c in ranks:
        left = counts_le[c - 1]
        if left - prev_left >= min_bucket and n - left >= min_bucket:
            kept.append(c)
            prev_left = left
    thresholds = np.array([(uniq[c - 1] + uniq[c]) / 2.0 for c in kept])
    return SplitCandidateSet(feature_id, thresholds)


def split_operator(feature_values, candidates, user_ids=None):
    """Apply the candidate thresholds: ``M[i, j] = 1`` iff ``x_i <= s_j``.

    ``candidates`` is a :class:`SplitCandidateSet` or a plain sequence of
    thresholds, used in the order given.
    """
    x = np.asarray(feature_values, dtype=float).reshape(-1)
    if x.size < 1:
        raise DimensionError("need at least one instance")
    if isinstance(candidates, SplitCandidateSet):
        fid, s = candidates.feature_id, candidates.thresholds
    else:
        fid, s = None, np.asarray(candidates, dtype=float).reshape(-1)
    entries = (x[:, None] <= s[None, :]).astype(float)
    meta = [(fid, float(t)) for t in s]
    return SplittingMatrix(entries, meta, user_ids)


def merge_feature_matrices(matrices: Sequence[SplittingMatrix]):
    """Concatenate per-feature splitting matrices column-wise."""
    if not matrices:
        raise DimensionError("nothing to merge")
    first = matrices[0]
    for m in matrices[1:]:
        if m.n != first.n or not np.array_equal(m.user_ids, first.user_ids):
            raise DimensionError("splitting matrices disagree on user rows")
    entries = np.hstack([m.entries for m in matrices]) if any(m.l for m in matrices) \
        else np.zeros((first.n, 0))
    meta = [c for m in matrices for c in m.column_meta]
    return SplittingMatrix(entries, meta, first.user_ids.copy())


def aggregate(M, g, h, G=None, H=None):
    """Left/right gradient and hessian sums for every column of ``M``.

    ``G`` and ``H`` default to the totals of ``g`` and ``h``.
    """
    entries = M.entries if isinstance(M, SplittingMatrix) else np.asarray(M, dtype=float)
    g = np.asarray(g, dtype=float).reshape(-1)
    h = np.asarray(h, dtype=float).reshape(-1)
    if entries.shape[0] != g.size or g.size != h.size:
        raise DimensionError(
            f"matrix has {entries.shape[0]} rows, g has {g.size}, h has {h.size}")
    G = g.sum() if G is None else float(G)
    H = h.sum() if H is None else float(H)
    GL = entries.T @ g
    HL = entries.T @ h
    return Aggregates(GL, HL, G - GL, H - HL)


def degenerate_columns(M):
    """Mask of columns that send every user to one side."""
    entries = M.entries if isinstance(M, SplittingMatrix) else np.asarray(M)
    s = entries.sum(axis=0)
    return (s == 0) | (s == entries.shape[0])


def build_party_matrix(columns, l, user_ids=None, min_bucket=1):
    """Propose candidates for each named column and merge the results.

    ``columns`` maps feature id to the values of the users in the node, in
    row order.  Features without candidates contribute no columns.
    """
    mats = []
    for fid, values in columns.items():
        values = np.asarray(values, dtype=float)
        cand = propose_candidates(values, l, feature_id=fid, min_bucket=min_bucket)
        mats.append(split_operator(values, cand, user_ids))
    if not mats:
        rows = 0 if user_ids is None else len(user_ids)
        return SplittingMatrix(np.zeros((rows, 0)), [], user_ids)
    return merge_feature_matrices(mats)
