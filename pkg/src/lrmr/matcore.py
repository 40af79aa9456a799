"""Dense linear-algebra kernels: thin SVD, thin QR, hard thresholding.

Everything downstream (sensing, tangent-space geometry, the solvers)
is built on the contracts in this module.  Matrices are plain float64
numpy arrays; singular values are always returned in descending order.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import BackendError, ContractViolationError

# absolute floor used when a tolerance relative to a zero operand is needed
ZERO_FLOOR = 1e-14


class ThinSVD(NamedTuple):
    U: np.ndarray  # (m, k), orthonormal columns
    S: np.ndarray  # (k,), nonnegative, descending
    V: np.ndarray  # (n, k), orthonormal columns


class QRFactors(NamedTuple):
    Q: np.ndarray  # (m, k), orthonormal columns
    R: np.ndarray  # (k, k), upper triangular


def check_matrix(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate a dense real matrix: 2-D, float, all entries finite."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ContractViolationError(f"{name} must be 2-D, got ndim={M.ndim}")
    if not np.all(np.isfinite(M)):
        raise ContractViolationError(f"{name} contains non-finite entries")
    return M


def frob(M) -> float:
    """Frobenius norm (works for dense and scipy.sparse inputs)."""
    if hasattr(M, "toarray") and not isinstance(M, np.ndarray):
        data = M.data if hasattr(M, "data") else M.toarray()
        return float(np.linalg.norm(data))
    return float(np.linalg.norm(np.asarray(M)))


def inner(A: np.ndarray, B: np.ndarray) -> float:
    """Canonical matrix inner product <A, B> = trace(A^T B)."""
    return float(np.vdot(np.asarray(A), np.asarray(B)))


def thin_svd(M: np.ndarray, k: int) -> ThinSVD:
    """Top-k singular triplets of M, singular values descending.

    Raises BackendError (carrying the matrix dimensions) if the LAPACK
    backend fails to converge.
    """
    M = check_matrix(M)
    m, n = M.shape
    if not 1 <= k <= min(m, n):
        raise ContractViolationError(
            f"k={k} out of range for a {m}x{n} matrix (need 1 <= k <= {min(m, n)})"
        )
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise BackendError(f"SVD failed to converge on a {m}x{n} matrix") from exc
    return ThinSVD(U[:, :k].copy(), s[:k].copy(), Vt[:k].T.copy())


def hard_threshold(M: np.ndarray, r: int) -> np.ndarray:
    """Best rank-r Frobenius approximation of M.

    Ties among repeated singular values are broken by the backend's
    descending order; any consistent choice yields a valid best
    approximation.
    """
    U, s, V = thin_svd(M, r)
    return (U * s) @ V.T


def qr_thin(M: np.ndarray) -> QRFactors:
    """Thin QR factorization of a tall matrix (rows >= cols).

    Rank-deficient input is accepted: R then carries (near-)zero
    diagonal entries, which downstream retraction code tolerates.
    """
    M = check_matrix(M)
    m, n = M.shape
    if m < n:
        raise ContractViolationError(f"qr_thin needs rows >= cols, got {m}x{n}")
    Q, R = np.linalg.qr(M, mode="reduced")
    return QRFactors(Q, R)
