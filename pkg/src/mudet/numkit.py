"""Dense complex linear-algebra kernels shared by every detector.

Householder QR with an optional greedy weakest-column-first pivot order,
Cholesky factorization, the inverse-square-root whitener, and Hermitian
solves. Matrices and vectors are plain complex ``numpy`` arrays; the
factorization results are small frozen dataclasses.

Conventions
-----------
* Thin QR: for an ``n x m`` input with ``n >= m``, ``q`` is ``n x m`` with
  orthonormal columns and ``r`` is ``m x m`` upper triangular.
* The diagonal of ``r`` is forced real and positive by absorbing phases
  into ``q``, which makes factorizations unique and regression tests
  deterministic.
* Permutations are index arrays: ``perm[j]`` is the original column that
  ended up at position ``j`` of the factorized matrix, so
  ``q @ r == a[:, perm]``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefiniteError, RankDeficientError

# Pivots below RANK_TOL * ||a||_F mean a numerically singular input: fail
# loudly instead of producing garbage triangular factors.
RANK_TOL = 1e-12

# Residual column norms within this relative distance are treated as tied;
# ties resolve to the lowest original column index.
SORT_TIE_REL = 1e-12

HERMITIAN_TOL = 1e-10


@dataclass(frozen=True)
class SortedQR:
    """Result of :func:`sorted_qr`: ``q @ r == a[:, perm]``."""

    q: np.ndarray
    r: np.ndarray
    perm: np.ndarray


def as_complex_matrix(a, name: str = "a") -> np.ndarray:
    """Validate and convert ``a`` to a 2-D complex array with finite entries."""
    arr = np.asarray(a, dtype=complex)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_complex_vector(v, name: str = "v") -> np.ndarray:
    """Validate and convert ``v`` to a 1-D complex array with finite entries."""
    arr = np.asarray(v, dtype=complex)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def invert_permutation(perm: np.ndarray) -> np.ndarray:
    """Return ``inv`` with ``inv[perm[j]] == j``."""
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def _householder_qr(a: np.ndarray, pivot: bool):
    """Shared Householder elimination; returns ``(q, r, perm)``.

    With ``pivot=True``, each step brings forward the remaining column with
    the smallest residual norm (the norm of its rows at and below the
    current elimination row, i.e. after projecting out all previously
    selected columns).
    """
    n, m = a.shape
    if n < m:
        raise ValueError(f"need rows >= cols, got {n} x {m}")
    anorm = np.linalg.norm(a)
    threshold = RANK_TOL * anorm
    r = a.astype(complex, copy=True)
    perm = np.arange(m)
    reflectors: list[np.ndarray] = []
    for k in range(m):
        if pivot:
            norms = np.linalg.norm(r[k:, k:], axis=0)
            lead = norms.min()
            tied = np.flatnonzero(norms <= lead * (1.0 + SORT_TIE_REL))
            j = k + tied[np.argmin(perm[k + tied])]
            if j != k:
                r[:, [k, j]] = r[:, [j, k]]
                perm[[k, j]] = perm[[j, k]]
        x = r[k:, k].copy()
        xnorm = np.linalg.norm(x)
        if xnorm <= threshold:
            raise RankDeficientError(
                f"pivot {k} has magnitude {xnorm:.3e} <= {threshold:.3e}"
            )
        phase = x[0] / abs(x[0]) if abs(x[0]) > 0 else 1.0 + 0.0j
        v = x
        v[0] += phase * xnorm
        v /= np.linalg.norm(v)
        r[k:, k:] -= 2.0 * np.outer(v, v.conj() @ r[k:, k:])
        r[k + 1 :, k] = 0.0
        reflectors.append(v)
    q = np.eye(n, m, dtype=complex)
    for k in range(m - 1, -1, -1):
        v = reflectors[k]
        q[k:, :] -= 2.0 * np.outer(v, v.conj() @ q[k:, :])
    # Absorb diagonal phases into q so diag(r) is real positive.
    rt = r[:m, :].copy()
    diag = rt[np.arange(m), np.arange(m)]
    phases = diag / np.abs(diag)
    rt *= phases.conj()[:, None]
    q *= phases[None, :]
    rt[np.arange(m), np.arange(m)] = np.abs(diag)
    return q, rt, perm


def qr_decompose(a) -> tuple[np.ndarray, np.ndarray]:
    """Thin Householder QR with real positive diagonal.

    Parameters
    ----------
    a : array_like
        Complex matrix with at least as many rows as columns and full
        column rank.

    Returns
    -------
    (q, r) : tuple of ndarray
        ``q`` orthonormal columns, ``r`` upper triangular, ``q @ r == a``.

    Raises
    ------
    RankDeficientError
        If a pivot magnitude falls below ``RANK_TOL * ||a||_F``.
    """
    a = as_complex_matrix(a)
    q, r, _ = _householder_qr(a, pivot=False)
    return q, r


def sorted_qr(a) -> SortedQR:
    """QR with greedy weakest-column-first ordering.

    At each elimination step the remaining column with minimum residual
    norm is selected next, so the leading diagonal entries of ``r`` are the
    weakest layers and a back-substitution detector resolves the strongest
    layer first. Ties go to the lowest original column index.
    """
    a = as_complex_matrix(a)
    q, r, perm = _householder_qr(a, pivot=True)
    return SortedQR(q=q, r=r, perm=perm)


def cholesky(a) -> np.ndarray:
    """Lower Cholesky factor ``l`` with ``l @ l.conj().T == a``.

    ``a`` must be Hermitian (checked to ``HERMITIAN_TOL`` relative) and
    positive definite. Backed by LAPACK via ``numpy``.

    Raises
    ------
    NotPositiveDefiniteError
        If a pivot is non-positive; callers holding a covariance estimate
        should apply diagonal loading and retry.
    """
    a = as_complex_matrix(a)
    n, m = a.shape
    if n != m:
        raise ValueError(f"matrix must be square, got {n} x {m}")
    scale = np.linalg.norm(a)
    if np.linalg.norm(a - a.conj().T) > HERMITIAN_TOL * max(scale, 1e-300):
        raise ValueError("matrix is not Hermitian")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc


def inv_sqrt(r_uu) -> np.ndarray:
    """Whitening filter ``w`` with ``w @ r_uu @ w.conj().T == I``.

    ``w`` is the inverse of the lower Cholesky factor of ``r_uu``; any
    matrix satisfying the identity whitens, and this one is the cheapest.
    """
    low = cholesky(r_uu)
    return np.linalg.solve(low, np.eye(low.shape[0], dtype=complex))


def solve_hermitian(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` for Hermitian positive-definite ``a``.

    ``b`` may be a vector or a matrix of stacked right-hand sides.
    """
    low = cholesky(a)
    b = np.asarray(b, dtype=complex)
    y = np.linalg.solve(low, b)
    return np.linalg.solve(low.conj().T, y)
