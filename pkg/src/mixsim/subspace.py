"""Orthogonal projections and the subspace angle metrics used for grouping.

Matrices are ``(N, m)`` complex arrays whose columns span a subspace of
``C^N``. A matrix with zero columns is the empty matrix; its orthogonal
complement is the whole space.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

# a column is dependent when its residual after projection is below this
# fraction of its original norm
RANK_TOL = 1e-9


class DegenerateBasisError(ValueError):
    """Raised when the columns of a basis matrix are numerically dependent."""


def as_matrix(A, n: int | None = None) -> np.ndarray:
    """Coerce ``A`` to a 2-D complex array; 1-D input becomes one column."""
    A = np.asarray(A, dtype=complex)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError(f"expected a vector or matrix, got shape {A.shape}")
    if n is not None and A.shape[1] == 0 and A.shape[0] != n:
        A = np.zeros((n, 0), dtype=complex)
    return A


def orth_basis(A, tol: float = RANK_TOL, ref_norms=None) -> np.ndarray:
    """Orthonormal basis of C(A) via Householder QR.

    ``|R_kk|`` is the norm of column k after removing its projection on the
    previous columns, so the rank test is exactly the residual criterion.
    ``ref_norms`` replaces the column norms of ``A`` as the reference scale,
    for columns that were themselves projected beforehand.
    """
    A = as_matrix(A)
    if A.shape[1] == 0:
        return A.copy()
    if A.shape[1] > A.shape[0]:
        raise DegenerateBasisError(
            f"{A.shape[1]} columns cannot be independent in C^{A.shape[0]}")
    Q, R = np.linalg.qr(A)
    col_norms = np.linalg.norm(A, axis=0)
    if ref_norms is not None:
        col_norms = np.maximum(col_norms, np.asarray(ref_norms, dtype=float))
    resid = np.abs(np.diag(R))
    bad = resid <= tol * col_norms
    if np.any(bad) or np.any(col_norms == 0):
        raise DegenerateBasisError(
            f"column(s) {np.flatnonzero(bad | (col_norms == 0)).tolist()} "
            "are linearly dependent on the preceding ones")
    return Q


def span_basis(A, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis of C(A) that drops dependent columns.

    Unlike :func:`orth_basis` this never raises; the span of a set of
    columns is well defined even when they are redundant.
    """
    A = as_matrix(A)
    if A.shape[1] == 0:
        return A.copy()
    scale = np.linalg.norm(A, axis=0).max()
    if scale == 0:
        return A[:, :0].copy()
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    return U[:, s > tol * scale]


def projector(A, n: int | None = None) -> np.ndarray:
    """Projection matrix onto C(A)."""
    A = as_matrix(A, n)
    Q = orth_basis(A)
    return Q @ Q.conj().T


def projector_orth(A, n: int | None = None) -> np.ndarray:
    """Projection matrix onto the orthogonal complement of C(A).

    For an empty ``A`` (zero columns) this is the identity; pass ``n`` when
    ``A`` carries no row information.
    """
    A = as_matrix(A, n)
    N = A.shape[0]
    if A.shape[1] == 0:
        return np.eye(N, dtype=complex)
    Q = orth_basis(A)
    return np.eye(N, dtype=complex) - Q @ Q.conj().T


def project_out(A, X) -> np.ndarray:
    """Apply the complement projector of C(A) to the columns of ``X``."""
    A = as_matrix(A)
    X = np.asarray(X, dtype=complex)
    if A.shape[1] == 0:
        return X.copy()
    Q = orth_basis(A)
    return X - Q @ (Q.conj().T @ X)


def sequential_project(x, stages: Sequence) -> np.ndarray:
    """Project ``x`` onto C^perp([A_1, ..., A_n]) one stage at a time.

    Each stage removes the span of the current (already projected) stage
    matrix, and the later stage matrices are projected along with ``x``.
    The result equals the direct projection onto the complement of the
    concatenated matrix. Stages that are empty are skipped.
    """
    x = np.asarray(x, dtype=complex)
    pending = [as_matrix(S) for S in stages]
    pending = [(S, np.linalg.norm(S, axis=0)) for S in pending if S.shape[1] > 0]
    while pending:
        (head, ref), rest = pending[0], pending[1:]
        Q = orth_basis(head, ref_norms=ref)
        x = x - Q @ (Q.conj().T @ x)
        pending = [(S - Q @ (Q.conj().T @ S), r) for S, r in rest]
    return x


def phi(A, b) -> float:
    """Squared cosine of the angle between vector ``b`` and C(A).

    ``||Pi_A b||^2 / ||b||^2``; for a single column this is
    ``|a^H b|^2 / (||a||^2 ||b||^2)``.
    """
    b = np.asarray(b, dtype=complex).reshape(-1)
    bb = np.vdot(b, b).real
    if not bb > 0:
        raise ValueError("phi is undefined for a zero vector b")
    A = as_matrix(A)
    if A.shape[1] == 0:
        raise ValueError("phi needs a nonempty matrix A")
    Q = span_basis(A)
    c = Q.conj().T @ b
    return float(min(1.0, np.vdot(c, c).real / bb))


def theta(A, B) -> float:
    """Subspace alignment between C(A) and C(B).

    The largest ``phi`` of any column of one matrix against the span of the
    other, and 0 when either matrix is empty. 0 means the subspaces are
    orthogonal; 1 means a column of one lies in the span of the other.
    Zero columns carry no direction and are ignored.
    """
    A = as_matrix(A)
    B = as_matrix(B)
    if A.shape[1] == 0 or B.shape[1] == 0:
        return 0.0
    QA = span_basis(A)
    QB = span_basis(B)
    best = 0.0
    for Q, X in ((QA, B), (QB, A)):
        xx = np.sum(np.abs(X) ** 2, axis=0)
        live = xx > 0
        if not live.any():
            continue
        c = Q.conj().T @ X[:, live]
        ratios = np.sum(np.abs(c) ** 2, axis=0) / xx[live]
        best = max(best, float(ratios.max()))
    return min(best, 1.0)
