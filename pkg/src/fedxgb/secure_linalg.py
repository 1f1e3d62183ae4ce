"""Null-space masking for two-party matrix products.

Party A publishes orthonormal vectors ``U`` with ``A^T U = 0``; party B
answers ``W = (I - Z Z^T) X`` for a random subset ``Z`` of ``U``.  Then
``A^T W = A^T X`` while ``W`` alone does not determine ``X`` because the
projector is singular.

The quasi-secure variant pads a binary splitting matrix with random binary
and Gaussian columns before the kernel is taken, and
:func:`detect_sparsity_leak` spots masks that would copy rows of ``X``
verbatim into ``W``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .candidates import SplittingMatrix
from .errors import CapacityError, DimensionError, ParameterError

RANK_RTOL = 1e-10
LEAK_TOL = 1e-6


@dataclass
class KernelBasis:
    """``n x r`` matrix with orthonormal columns spanning part of ``ker(D^T)``."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2:
            raise DimensionError("kernel basis must be 2-D")
        self.vectors = v

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def r(self):
        return self.vectors.shape[1]


@dataclass
class QuasiSecureMatrix:
    m_star: np.ndarray
    true_index: np.ndarray
    column_meta: list = field(default_factory=list)
    l1: int = 0
    l2: int = 0

    @property
    def l(self):
        return int(self.true_index.size)

    @property
    def l_prime(self):
        return self.m_star.shape[1]

    def genuine(self):
        return self.m_star[:, self.true_index]


def numerical_rank(D, rtol=RANK_RTOL):
    D = np.asarray(D, dtype=float)
    if D.size == 0:
        return 0
    s = np.linalg.svd(D, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def kernel_dimension(D, rtol=RANK_RTOL):
    D = _as_2d(D)
    return D.shape[0] - numerical_rank(D, rtol)


def kernel_basis(D, r, rng=None, mix=True, rtol=RANK_RTOL):
    """``r`` orthonormal vectors ``u`` with ``D^T u = 0``.

    The full kernel comes from a column-pivoted Householder QR of ``D``.
    With ``mix`` the kernel is rotated by a Haar-random orthogonal matrix
    before ``r`` columns are drawn, so no canonical basis is exposed.
    Without it the columns are drawn from the canonical factorization,
    which keeps any exact zeros the structure of ``D`` produces.
    """
    D = _as_2d(D)
    n = D.shape[0]
    if r < 1:
        raise ParameterError("r must be >= 1")
    rank = numerical_rank(D, rtol)
    dim = n - rank
    if r > dim:
        raise CapacityError(f"kernel has dimension {dim}, {r} vectors requested")
    rng = np.random.default_rng(rng)
    if D.shape[1] == 0 or rank == 0:
        full = np.eye(n)
    else:
        Q, _, _ = scipy.linalg.qr(D, mode="full", pivoting=True)
        full = Q[:, rank:]
    if mix:
        # first r columns of a Haar rotation suffice
        full = full @ random_orthogonal(dim, rng, cols=r)
        chosen = np.arange(r)
    else:
        chosen = np.sort(rng.choice(dim, size=r, replace=False))
    return KernelBasis(full[:, chosen].copy())


def random_orthogonal(k, rng, cols=None):
    """Haar-distributed ``k x k`` orthogonal matrix, or its first ``cols`` columns."""
    A = rng.standard_normal((k, k if cols is None else cols))
    Q, R = np.linalg.qr(A)
    return Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))


def select_mask(basis, r_prime, rng=None):
    """Draw ``r_prime`` basis columns uniformly without replacement."""
    if r_prime < 1:
        raise ParameterError("r_prime must be >= 1; an empty mask returns the data in the clear")
    if r_prime > basis.r:
        raise ParameterError(f"r_prime={r_prime} exceeds basis size {basis.r}")
    rng = np.random.default_rng(rng)
    idx = np.sort(rng.choice(basis.r, size=r_prime, replace=False))
    return basis.vectors[:, idx]


def masking_projector(Z):
    Z = _as_2d(Z)
    return np.eye(Z.shape[0]) - Z @ Z.T


def apply_mask(X, Z):
    """``(I - Z Z^T) X`` without forming the ``n x n`` projector."""
    X = np.asarray(X, dtype=float)
    return X - Z @ (Z.T @ X)


def secure_response(X, basis, r_prime, rng=None):
    """Mask private ``X`` with ``r_prime`` randomly chosen kernel vectors."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] != basis.n:
        raise DimensionError(f"X has {X.shape[0]} rows, basis has {basis.n}")
    return apply_mask(X, select_mask(basis, r_prime, rng))


def smm_protocol(D_A, D_B, r, r_prime, seed=None):
    """Two-party ``D_A^T D_B`` via null-space masking (reference protocol)."""
    D_A, D_B = _as_2d(D_A), _as_2d(D_B)
    if D_A.shape[0] != D_B.shape[0]:
        raise DimensionError("D_A and D_B must share the row dimension")
    if not 1 <= r_prime <= r:
        raise ParameterError("need 1 <= r_prime <= r")
    rng = np.random.default_rng(seed)
    basis = kernel_basis(D_A, r, rng)
    W = secure_response(D_B, basis, r_prime, rng)
    return D_A.T @ W


def fake_split_columns(n, count, rng, left_sizes=None):
    """Random binary columns shaped like genuine threshold columns.

    Each column thresholds an independent random ranking of the users; the
    left-set size is drawn from ``left_sizes`` (the genuine columns'
    sizes) when given, else uniformly from ``1..n-1``.
    """
    cols = np.zeros((n, count))
    if count == 0 or n < 2:
        return cols
    sizes = np.asarray(left_sizes if left_sizes is not None and len(left_sizes) else
                       np.arange(1, n), dtype=int)
    for j in range(count):
        rank = rng.permutation(n)
        k = int(rng.choice(sizes))
        cols[:, j] = rank < k
    return cols


def secure_kernel(M, l1, l2, mu=0.0, sigma=1.0, r=None, rng=None, mix=True):
    """Pad ``M`` to ``[M | M' | Y]`` and return it with ``r`` kernel vectors.

    ``M'`` holds ``l1`` fake binary split columns and ``Y`` holds ``l2``
    columns of ``Normal(mu, sigma)`` noise.  The genuine columns keep their
    positions ``0..l-1``.
    """
    if l1 < 0 or l2 < 0:
        raise ParameterError("l1 and l2 must be >= 0")
    if sigma <= 0 and l2 > 0:
        raise ParameterError("sigma must be positive")
    if isinstance(M, SplittingMatrix):
        entries, meta = M.entries, list(M.column_meta)
    else:
        entries = _as_2d(M)
        meta = [None] * entries.shape[1]
    n, l = entries.shape
    rng = np.random.default_rng(rng)
    fake = fake_split_columns(n, l1, rng, entries.sum(axis=0).astype(int) if l else None)
    noise = rng.normal(mu, sigma, size=(n, l2))
    m_star = np.hstack([entries, fake, noise])
    if r is None:
        r = default_r(n)
    dim = kernel_dimension(m_star)
    if dim < r:
        raise CapacityError(
            f"quasi-secure matrix {n}x{m_star.shape[1]} leaves a kernel of {dim} < r={r}")
    qsm = QuasiSecureMatrix(m_star, np.arange(l), meta, l1, l2)
    return qsm, kernel_basis(m_star, r, rng, mix=mix)


def detect_sparsity_leak(basis, projector, tol=LEAK_TOL):
    """Rows ``i`` where the projector row equals ``+-e_i``.

    Such a row makes ``W_i`` a verbatim copy of the masked party's row
    ``i``.  The answering party must refuse when anything is flagged.
    """
    P = _as_2d(projector)
    n = P.shape[0]
    if P.shape != (n, n) or (basis is not None and basis.n != n):
        raise DimensionError("projector must be n x n and match the basis")
    off = P - np.diag(np.diag(P))
    off_ok = np.abs(off).max(axis=1) <= tol if n > 1 else np.ones(1, bool)
    diag_ok = np.abs(np.abs(np.diag(P)) - 1.0) <= tol
    return [int(i) for i in np.flatnonzero(off_ok & diag_ok)]


def leak_fixture(n, l, n_zero=2, n_one=2, rng=None, min_gap=2):
    """Threshold splitting matrix whose last rows are all-zero and first rows all-one.

    Users are sorted by a single feature; the ``n_one`` smallest sit left of
    every threshold and the ``n_zero`` largest right of every threshold.
    Consecutive cuts are at least ``min_gap`` users apart, so no bucket
    isolates a single user.
    """
    if min(n_zero, n_one) < 0 or min_gap < 1:
        raise ParameterError("n_zero, n_one >= 0 and min_gap >= 1 required")
    inner = n - n_zero - n_one
    slack = inner - min_gap * (l - 1) - 1
    if l < 1 or slack < 0:
        raise ParameterError(f"cannot place {l} cuts {min_gap} apart in {n} rows")
    rng = np.random.default_rng(rng)
    # stars and bars: l cut offsets with the required spacing
    offs = np.sort(rng.choice(slack + l, size=l, replace=False)) - np.arange(l)
    cuts = n_one + 1 + offs + min_gap * np.arange(l)
    rows = np.arange(n)[:, None]
    return (rows < cuts[None, :]).astype(float)


def default_r(n):
    return max(2, n // 4)


def default_r_prime(r):
    return max(1, math.ceil(r / 2))


def default_l2(l):
    return max(2, math.ceil(l / 4))


def _as_2d(A):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.ndim != 2:
        raise DimensionError("expected a matrix")
    return A
