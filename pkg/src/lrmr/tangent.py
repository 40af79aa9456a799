"""Geometry of the fixed-rank manifold at the current iterate.

At an iterate ``X = U diag(sigma) V^T`` the tangent space of the rank-r
manifold is ``S = {U R^T + L V^T}``; its elements have rank at most 2r
and the orthogonal projection of an ambient matrix Z onto S is

    P(Z) = U U^T Z + Z V V^T - U U^T Z V V^T.

The degenerate column-only (``U U^T Z``) and row-only (``Z V V^T``)
subspace choices are also supported.  They keep every update inside a
fixed rank-r subspace, so the iteration generally stagnates at a local
solution instead of recovering the measured matrix; they exist for
demonstrations and tests, not for production use.

``retract_fast`` maps ``X + P(Z)`` back to the rank-r manifold through
the SVD of a 2r-by-2r core matrix, never forming (or decomposing) an
m-by-n matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ContractViolationError
from .matcore import frob, hard_threshold, qr_thin, thin_svd

# orthonormality drift beyond this triggers re-orthonormalization of the
# retracted factors (guards very long runs against roundoff accumulation)
_DRIFT_TOL = 1e-10


class SubspaceSelection(str, Enum):
    TANGENT = "tangent"
    COLUMN_ONLY = "column"
    ROW_ONLY = "row"


@dataclass(frozen=True)
class TangentSpace:
    """Orthonormal factors (U, V) of the iterate, plus its singular values.

    ``sigma`` is required by the fast retraction and optional elsewhere.
    """

    u: np.ndarray  # (m, r)
    v: np.ndarray  # (n, r)
    sigma: np.ndarray | None = None  # (r,), descending

    @property
    def m(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def r(self) -> int:
        return self.u.shape[1]

    def to_dense(self) -> np.ndarray:
        if self.sigma is None:
            raise ContractViolationError("tangent space carries no singular values")
        return (self.u * self.sigma) @ self.v.T


def space_of(X: np.ndarray, r: int) -> TangentSpace:
    """Tangent space at the best rank-r approximation of X."""
    U, s, V = thin_svd(X, r)
    return TangentSpace(U, V, s)


def _split_products(space: TangentSpace, Z) -> tuple[np.ndarray, np.ndarray]:
    """Return (U^T Z, Z V); Z may be dense or scipy-sparse."""
    if Z.shape != (space.m, space.n):
        raise ContractViolationError(
            f"Z has shape {np.shape(Z)}, expected {space.m}x{space.n}"
        )
    u, v = space.u, space.v
    if isinstance(Z, np.ndarray):
        return u.T @ Z, Z @ v
    # sparse path: U^T Z == (Z^T U)^T keeps the sparse operand on the left
    return np.asarray((Z.T @ u)).T, np.asarray(Z @ v)


def project(
    space: TangentSpace,
    Z,
    selection: SubspaceSelection = SubspaceSelection.TANGENT,
) -> np.ndarray:
    """Orthogonal projection of an ambient matrix onto the chosen subspace."""
    utz, zv = _split_products(space, Z)
    if selection == SubspaceSelection.COLUMN_ONLY:
        return space.u @ utz
    if selection == SubspaceSelection.ROW_ONLY:
        return zv @ space.v.T
    utzv = utz @ space.v
    return space.u @ (utz - utzv @ space.v.T) + zv @ space.v.T


@dataclass(frozen=True)
class TangentVector:
    """Element of a tangent space in factored form ``U c1 + c2 V^T``.

    ``c1`` is r-by-n, ``c2`` is m-by-r with ``U^T c2 = 0`` (canonical
    form), so norms and inner products split over the two blocks and no
    ambient m-by-n array is ever needed.
    """

    space: TangentSpace
    c1: np.ndarray  # (r, n)
    c2: np.ndarray  # (m, r)

    def norm_sq(self) -> float:
        return float(np.vdot(self.c1, self.c1) + np.vdot(self.c2, self.c2))

    def norm(self) -> float:
        return float(np.sqrt(self.norm_sq()))

    def inner(self, other: "TangentVector") -> float:
        return float(np.vdot(self.c1, other.c1) + np.vdot(self.c2, other.c2))

    def scaled(self, a: float) -> "TangentVector":
        return TangentVector(self.space, a * self.c1, a * self.c2)

    def add_scaled(self, a: float, other: "TangentVector") -> "TangentVector":
        return TangentVector(self.space, self.c1 + a * other.c1, self.c2 + a * other.c2)

    def to_ambient(self) -> np.ndarray:
        return self.space.u @ self.c1 + self.c2 @ self.space.v.T

    def outer_factors(self) -> tuple[np.ndarray, np.ndarray]:
        """(L, Rt) with ambient form L @ Rt, L m-by-2r and Rt 2r-by-n."""
        L = np.hstack([self.space.u, self.c2])
        Rt = np.vstack([self.c1, self.space.v.T])
        return L, Rt


def project_to_vector(
    space: TangentSpace,
    Z,
    selection: SubspaceSelection = SubspaceSelection.TANGENT,
) -> TangentVector:
    """Project an ambient (dense or sparse) matrix into factored form."""
    utz, zv = _split_products(space, Z)
    utzv = utz @ space.v
    if selection == SubspaceSelection.COLUMN_ONLY:
        return TangentVector(space, utz, np.zeros_like(zv))
    if selection == SubspaceSelection.ROW_ONLY:
        return TangentVector(space, utzv @ space.v.T, zv - space.u @ utzv)
    return TangentVector(space, utz, zv - space.u @ utzv)


def transport(space: TangentSpace, vec: TangentVector) -> TangentVector:
    """Project a tangent vector from its own space onto ``space``.

    Costs O((m+n) r^2): only r-by-r cross-Gram matrices of the two
    frames are formed, never the ambient matrix.
    """
    u0, v0 = vec.space.u, vec.space.v
    u, v = space.u, space.v
    c1 = (u.T @ u0) @ vec.c1 + (u.T @ vec.c2) @ v0.T
    av = u0 @ (vec.c1 @ v) + vec.c2 @ (v0.T @ v)
    c2 = av - u @ (c1 @ v)
    return TangentVector(space, c1, c2)


def _reorthonormalized(u: np.ndarray, s: np.ndarray, v: np.ndarray):
    qu, ru = np.linalg.qr(u)
    qv, rv = np.linalg.qr(v)
    core_u, core_s, core_v = thin_svd(ru @ np.diag(s) @ rv.T, s.shape[0])
    return qu @ core_u, core_s, qv @ core_v


def retract_factors(
    space: TangentSpace, step: TangentVector, rank: int
) -> TangentSpace:
    """Rank-r truncation of ``X + step`` returned as factored form.

    With ``X = U diag(sigma) V^T`` and ``step = U c1 + c2 V^T`` the sum
    factors through orthonormal bases ``[U Q2]`` and ``[V Q1]`` around a
    2r-by-2r core, whose SVD gives the top singular triplets of the
    full-size sum at O((m+n) r^2 + r^3) cost.
    """
    if space.sigma is None:
        raise ContractViolationError("retraction requires singular values on the space")
    u, v, sigma = space.u, space.v, space.sigma
    c1v = step.c1 @ v  # (r, r)
    y1 = step.c1.T - v @ c1v.T  # (n, r), rows of c1 orthogonal to span(V)
    y2 = step.c2  # already orthogonal to span(U)
    q1, r1 = qr_thin(y1)
    q2, r2 = qr_thin(y2)
    r = space.r
    core = np.zeros((2 * r, 2 * r))
    core[:r, :r] = np.diag(sigma) + c1v
    core[:r, r:] = r1.T
    core[r:, :r] = r2
    cu, cs, cv = np.linalg.svd(core)
    k = min(rank, 2 * r)
    new_u = np.hstack([u, q2]) @ cu[:, :k]
    new_v = np.hstack([v, q1]) @ cv.T[:, :k]
    new_s = cs[:k]
    drift = max(
        float(np.linalg.norm(new_u.T @ new_u - np.eye(k))),
        float(np.linalg.norm(new_v.T @ new_v - np.eye(k))),
    )
    if drift > _DRIFT_TOL:
        new_u, new_s, new_v = _reorthonormalized(new_u, new_s, new_v)
    return TangentSpace(new_u, new_v, new_s)


def retract_fast(space: TangentSpace, Z, rank: int) -> tuple[np.ndarray, TangentSpace]:
    """Hard-threshold ``X + P(Z)`` to rank r without an m-by-n SVD.

    ``Z`` may be an ambient matrix (dense or sparse) or an already
    projected ``TangentVector``.  Returns the new dense iterate and its
    tangent space.
    """
    step = Z if isinstance(Z, TangentVector) else project_to_vector(space, Z)
    new_space = retract_factors(space, step, rank)
    return new_space.to_dense(), new_space


def _exact_rank_svd(X: np.ndarray, rank: int):
    U, s, V = thin_svd(X, min(X.shape))
    if s.shape[0] < rank or s[rank - 1] <= 1e-12 * max(s[0], 1.0):
        raise ContractViolationError(f"matrix does not have full rank {rank}")
    return U[:, :rank], s[:rank], V[:, :rank]


def projection_error_bound_check(
    Xl: np.ndarray, X: np.ndarray, rank: int, slack: float = 1e-10
) -> bool:
    """Check the second-order projection-error bounds between two rank-r points.

    The part of X invisible to the tangent space at Xl is controlled by
    the product of the spectral and Frobenius distances over the smallest
    singular value of X (and, weaker, by the squared Frobenius distance).
    """
    ul, _, vl = _exact_rank_svd(Xl, rank)
    _, sx, _ = _exact_rank_svd(X, rank)
    space = TangentSpace(ul, vl)
    lhs = frob(X - project(space, X))
    diff = Xl - X
    d_spec = float(np.linalg.norm(diff, 2))
    d_frob = frob(diff)
    sigma_min = float(sx[-1])
    bound_mixed = d_spec * d_frob / sigma_min
    bound_frob = d_frob**2 / sigma_min
    ok_mixed = lhs <= bound_mixed * (1.0 + slack) + slack
    ok_frob = lhs <= bound_frob * (1.0 + slack) + slack
    return ok_mixed and ok_frob


def subspace_distance_bound_check(
    Xl: np.ndarray, X: np.ndarray, rank: int, slack: float = 1e-10
) -> bool:
    """Check the singular-subspace perturbation bounds between two rank-r points."""
    ul, _, vl = _exact_rank_svd(Xl, rank)
    u, sx, v = _exact_rank_svd(X, rank)
    diff = Xl - X
    d_spec = float(np.linalg.norm(diff, 2))
    d_frob = frob(diff)
    sigma_min = float(sx[-1])
    checks = []
    for ql, q in ((ul, u), (vl, v)):
        gap = ql @ ql.T - q @ q.T
        checks.append(float(np.linalg.norm(gap, 2)) <= d_spec / sigma_min * (1 + slack) + slack)
        checks.append(frob(gap) <= np.sqrt(2.0) * d_frob / sigma_min * (1 + slack) + slack)
    return all(checks)


def dense_retract(space: TangentSpace, Z, rank: int) -> tuple[np.ndarray, TangentSpace]:
    """Debug-mode retraction: form X + P(Z) densely and SVD it in full."""
    step = Z if isinstance(Z, TangentVector) else project_to_vector(space, Z)
    W = space.to_dense() + step.to_ambient()
    X_new = hard_threshold(W, rank)
    return X_new, space_of(X_new, rank)
