"""Iterative solvers for rank-r recovery from linear measurements.

Six algorithms share one driver:

* ``niht`` / ``cgiht`` -- hard-thresholding iterations whose search
  direction lives in the full ambient space; each step truncates an
  m-by-n matrix with a full SVD.  The stepsize is the exact minimizer of
  the residual along the direction projected onto the current left
  singular subspace.
* ``rgrad`` / ``rcg`` / ``rcg-restarted`` -- the same iterations with
  the search direction projected onto the tangent space of the rank-r
  manifold at the current iterate.  The update then stays inside a
  2r-dimensional-per-side subspace, so the truncation reduces to the
  SVD of a 2r-by-2r core and no full-size matrix is ever formed.
* ``asd`` -- alternating steepest descent on the factorization
  ``X = L R``, one exactly line-searched gradient half-step per factor.

All solvers start from the rank-r truncation of the adjoint applied to
the measurements.  The conjugate-gradient variants choose the mixing
weight beta so the new direction is conjugate-orthogonal to the
previous one under the sensing map; Fletcher-Reeves and Polak-Ribiere
weights are available as alternatives.  The restarted variant drops the
previous direction (beta = 0) whenever it is insufficiently orthogonal
to the projected gradient or too small against it, which is what makes
its recovery guarantee go through while costing at most a couple of
extra iterations in practice.
"""

from __future__ import annotations

import csv
import json
import math
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.sparse.linalg import svds

from .errors import ConfigError, ContractViolationError
from .matcore import frob, thin_svd
from .tangent import (
    SubspaceSelection,
    TangentSpace,
    TangentVector,
    dense_retract,
    project_to_vector,
    retract_factors,
    transport,
)

# denominators below this fraction of the squared direction norm are
# treated as zero: beta falls back to a plain gradient step instead of
# amplifying roundoff (directions shrink with the residual, so the
# threshold must be relative to the direction, not to the measurements)
_TINY_REL = 1e-14


class Algorithm(str, Enum):
    NIHT = "niht"
    CGIHT = "cgiht"
    RGRAD = "rgrad"
    RCG = "rcg"
    RCG_RESTARTED = "rcg-restarted"
    ASD = "asd"


class BetaRule(str, Enum):
    CONJUGATE_ORTHOGONAL = "conjugate-orthogonal"
    FLETCHER_REEVES = "fr"
    POLAK_RIBIERE = "pr"
    POLAK_RIBIERE_PLUS = "pr+"


class Status(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max-iters"
    STALLED = "stalled"


_RCG_FAMILY = (Algorithm.RCG, Algorithm.RCG_RESTARTED)
_RIEMANNIAN = (Algorithm.RGRAD,) + _RCG_FAMILY


class DirectionLostError(RuntimeError):
    """The sensing map annihilated the search direction at nonzero residual."""


@dataclass
class SolverConfig:
    algorithm: Algorithm | str
    rank: int
    beta_rule: BetaRule | str | None = None
    kappa1: float = 0.1
    kappa2: float = 1.0
    max_iters: int = 5000
    rel_residual_tol: float = 1e-9
    warm_start_niht_iters: int = 0
    stall_window: int = 50
    stall_tol: float = 1e-14
    subspace: SubspaceSelection | str = SubspaceSelection.TANGENT
    dense_retraction: bool = False
    seed: int | None = None

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        self.subspace = SubspaceSelection(self.subspace)
        if self.beta_rule is not None:
            self.beta_rule = BetaRule(self.beta_rule)

    def validate(self) -> None:
        if self.rank < 1:
            raise ConfigError("rank must be a positive integer")
        if self.beta_rule is not None and self.algorithm not in _RCG_FAMILY:
            raise ConfigError(
                f"beta_rule is only meaningful for {[a.value for a in _RCG_FAMILY]}, "
                f"not algorithm={self.algorithm.value}"
            )
        # kappa1 = 0 is allowed as a degenerate mode that forces a restart
        # on every iteration (it reproduces plain gradient descent)
        if not 0.0 <= self.kappa1 < 1.0:
            raise ConfigError(f"kappa1={self.kappa1} must lie in [0, 1)")
        if self.kappa2 < 1.0:
            raise ConfigError(f"kappa2={self.kappa2} must be >= 1")
        if self.rel_residual_tol <= 0.0:
            raise ConfigError("rel_residual_tol must be positive")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be nonnegative")
        if self.warm_start_niht_iters < 0:
            raise ConfigError("warm_start_niht_iters must be nonnegative")
        if self.stall_window < 0 or self.stall_tol < 0:
            raise ConfigError("stall_window and stall_tol must be nonnegative")

    def resolved_beta_rule(self) -> BetaRule:
        return self.beta_rule or BetaRule.CONJUGATE_ORTHOGONAL


@dataclass
class IterationRecord:
    iter: int
    rel_residual: float
    alpha: float | None = None
    beta: float | None = None
    restarted: bool = False
    rel_error: float | None = None

    def to_dict(self) -> dict:
        return {
            "iter": self.iter,
            "rel_residual": self.rel_residual,
            "alpha": self.alpha,
            "beta": self.beta,
            "restarted": self.restarted,
            "rel_error": self.rel_error,
        }


TRACE_CSV_HEADER = ["iter", "rel_residual", "alpha", "beta", "restarted", "rel_error"]


@dataclass
class SolverTrace:
    algorithm: Algorithm
    records: list[IterationRecord]
    status: Status
    apply_count: int = 0
    adjoint_count: int = 0
    wall_seconds: float = 0.0

    @property
    def iterations(self) -> int:
        return self.records[-1].iter

    @property
    def final_rel_residual(self) -> float:
        return self.records[-1].rel_residual

    def rel_residuals(self) -> np.ndarray:
        return np.array([r.rel_residual for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_CSV_HEADER)
            for r in self.records:
                w.writerow(
                    [
                        r.iter,
                        f"{r.rel_residual:.17g}",
                        "" if r.alpha is None else f"{r.alpha:.17g}",
                        "" if r.beta is None else f"{r.beta:.17g}",
                        int(r.restarted),
                        "" if r.rel_error is None else f"{r.rel_error:.17g}",
                    ]
                )

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_dict()) + "\n")


@dataclass
class Iterate:
    """Rank-r iterate in factored form ``X = U diag(sigma) V^T``.

    ``p_prev`` holds the previous search direction (a ``TangentVector``
    for the Riemannian solvers, a dense ambient array for ``cgiht``);
    ``pg_prev`` the previous projected gradient, kept for the
    Fletcher-Reeves / Polak-Ribiere weights.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    p_prev: TangentVector | np.ndarray | None = None
    pg_prev: TangentVector | None = None

    @property
    def rank(self) -> int:
        return self.sigma.shape[0]

    def space(self) -> TangentSpace:
        return TangentSpace(self.u, self.v, self.sigma)

    def dense(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


class _CountingOperator:
    """Delegating wrapper that counts forward and adjoint applications."""

    def __init__(self, op):
        self._op = op
        self.apply_count = 0
        self.adjoint_count = 0
        self.m, self.n, self.p = op.m, op.n, op.p

    def apply(self, Z):
        self.apply_count += 1
        return self._op.apply(Z)

    def apply_outer(self, L, Rt):
        self.apply_count += 1
        return self._op.apply_outer(L, Rt)

    def adjoint(self, v):
        self.adjoint_count += 1
        return self._op.adjoint(v)

    @property
    def has_sparse_adjoint(self) -> bool:
        return hasattr(self._op, "adjoint_sparse")

    def adjoint_sparse(self, v):
        self.adjoint_count += 1
        return self._op.adjoint_sparse(v)


def _gradient(op, resid):
    """Adjoint of the residual; sparse when the operator supports it."""
    if hasattr(op, "has_sparse_adjoint"):
        if op.has_sparse_adjoint:
            return op.adjoint_sparse(resid)
        return op.adjoint(resid)
    if hasattr(op, "adjoint_sparse"):
        return op.adjoint_sparse(resid)
    return op.adjoint(resid)


def _apply_vector(op, vec: TangentVector) -> np.ndarray:
    L, Rt = vec.outer_factors()
    return op.apply_outer(L, Rt)


def _apply_iterate(op, it: Iterate) -> np.ndarray:
    return op.apply_outer(it.u * it.sigma, it.v.T)


def init_hard_threshold(op, y: np.ndarray, rank: int) -> Iterate:
    """Rank-r truncation of the adjoint of the measurements.

    For entry sensing on large matrices the adjoint is sparse and the
    truncation uses an iterative partial SVD; otherwise a dense SVD.
    """
    if rank < 1 or rank > min(op.m, op.n):
        raise ContractViolationError(f"rank={rank} out of range for {op.m}x{op.n}")
    small_side = min(op.m, op.n)
    use_sparse = (
        (hasattr(op, "has_sparse_adjoint") and op.has_sparse_adjoint)
        or hasattr(op, "adjoint_sparse")
    ) and small_side >= 400 and rank <= small_side // 4
    if use_sparse:
        G = op.adjoint_sparse(y)
        try:
            u, s, vt = svds(G, k=rank, v0=np.full(small_side, 1.0))
            order = np.argsort(s)[::-1]
            return Iterate(u[:, order], s[order], vt[order].T)
        except Exception:  # ARPACK breakdown: fall through to the dense path
            G = G.toarray()
    else:
        G = op.adjoint(y)
        if not isinstance(G, np.ndarray):
            G = G.toarray()
    u, s, v = thin_svd(G, rank)
    return Iterate(u, s, v)


def restart_check(
    pg: TangentVector, p_prev: TangentVector | None, kappa1: float, kappa2: float
) -> bool:
    """Decide whether the previous direction may be kept (True = keep).

    The direction is kept only if the projected gradient is nearly
    orthogonal to it (cosine at most kappa1) and not larger than kappa2
    times its norm; otherwise the next step restarts with beta = 0.
    """
    if p_prev is None:
        return False
    g_norm = pg.norm()
    p_norm = p_prev.norm()
    if p_norm == 0.0:
        return False
    if g_norm == 0.0:
        return True
    cosine = abs(pg.inner(p_prev)) / (g_norm * p_norm)
    return cosine <= kappa1 and g_norm <= kappa2 * p_norm


def _retract(space, step_vec, rank, dense: bool):
    if dense:
        X_new, new_space = dense_retract(space, step_vec, rank)
        return Iterate(new_space.u, new_space.sigma, new_space.v)
    new_space = retract_factors(space, step_vec, rank)
    return Iterate(new_space.u, new_space.sigma, new_space.v)


def step_rgrad(
    it: Iterate,
    op,
    y: np.ndarray,
    resid: np.ndarray | None = None,
    selection: SubspaceSelection = SubspaceSelection.TANGENT,
    dense_retraction: bool = False,
) -> tuple[Iterate, float]:
    """One projected-gradient step with the exact line-search stepsize.

    alpha minimizes the residual along the projected gradient; it equals
    the ratio of the squared direction norm to the squared norm of its
    image under the sensing map.
    """
    if resid is None:
        resid = y - _apply_iterate(op, it)
    space = it.space()
    pg = project_to_vector(space, _gradient(op, resid), selection)
    a_pg = _apply_vector(op, pg)
    denom = float(a_pg @ a_pg)
    if denom <= _TINY_REL * pg.norm_sq():
        raise DirectionLostError("projected gradient annihilated by the sensing map")
    alpha = pg.norm_sq() / denom
    return _retract(space, pg.scaled(alpha), it.rank, dense_retraction), alpha


def step_rcg(
    it: Iterate,
    op,
    y: np.ndarray,
    beta_rule: BetaRule = BetaRule.CONJUGATE_ORTHOGONAL,
    keep_direction: bool = True,
    resid: np.ndarray | None = None,
    selection: SubspaceSelection = SubspaceSelection.TANGENT,
    dense_retraction: bool = False,
    _pg: TangentVector | None = None,
    _p_prev: TangentVector | None = None,
) -> tuple[Iterate, float, float, bool]:
    """One conjugate-gradient step on the manifold.

    The previous direction is transported onto the current tangent space
    before mixing.  ``keep_direction=False`` (a restart) zeroes beta, as
    does an absent or annihilated previous direction.  Returns
    ``(iterate, alpha, beta, restarted)``.  ``_pg``/``_p_prev`` let the
    driver reuse the projected gradient and transported direction it
    already computed for the restart decision.
    """
    space = it.space()
    if _pg is None:
        if resid is None:
            resid = y - _apply_iterate(op, it)
        pg = project_to_vector(space, _gradient(op, resid), selection)
        p_prev = transport(space, it.p_prev) if it.p_prev is not None else None
    else:
        pg, p_prev = _pg, _p_prev

    beta = 0.0
    restarted = p_prev is not None and not keep_direction
    a_pg = None
    a_pp = None
    if p_prev is not None and keep_direction:
        if beta_rule == BetaRule.CONJUGATE_ORTHOGONAL:
            a_pg = _apply_vector(op, pg)
            a_pp = _apply_vector(op, p_prev)
            denom = float(a_pp @ a_pp)
            if denom > _TINY_REL * p_prev.norm_sq():
                beta = -float(a_pg @ a_pp) / denom
        else:
            prev_sq = it.pg_prev.norm_sq() if it.pg_prev is not None else 0.0
            if prev_sq > 0.0:
                if beta_rule == BetaRule.FLETCHER_REEVES:
                    beta = pg.norm_sq() / prev_sq
                else:
                    moved = transport(space, it.pg_prev)
                    beta = (pg.norm_sq() - pg.inner(moved)) / prev_sq
                    if beta_rule == BetaRule.POLAK_RIBIERE_PLUS:
                        beta = max(beta, 0.0)

    if beta != 0.0:
        direction = pg.add_scaled(beta, p_prev)
        if a_pg is not None and a_pp is not None:
            a_dir = a_pg + beta * a_pp
        else:
            a_dir = _apply_vector(op, direction)
    else:
        direction = pg
        a_dir = a_pg if a_pg is not None else _apply_vector(op, direction)

    denom = float(a_dir @ a_dir)
    if denom <= _TINY_REL * direction.norm_sq():
        raise DirectionLostError("search direction annihilated by the sensing map")
    alpha = pg.inner(direction) / denom
    new_it = _retract(space, direction.scaled(alpha), it.rank, dense_retraction)
    new_it.p_prev = direction
    new_it.pg_prev = pg
    return new_it, alpha, beta, restarted


def step_niht(
    it: Iterate, op, y: np.ndarray, resid: np.ndarray | None = None
) -> tuple[Iterate, float]:
    """One normalized hard-thresholding step.

    The stepsize is exact along the gradient restricted to the current
    left singular subspace, but the update moves along the full ambient
    gradient, so the truncation needs a full-size SVD.
    """
    if resid is None:
        resid = y - _apply_iterate(op, it)
    G = op.adjoint(resid)
    utg = it.u.T @ G
    a_pug = op.apply_outer(it.u, utg)
    denom = float(a_pug @ a_pug)
    if denom <= _TINY_REL * float(np.vdot(utg, utg)):
        raise DirectionLostError("projected gradient annihilated by the sensing map")
    alpha = float(np.vdot(utg, utg)) / denom
    W = it.dense() + alpha * G
    u, s, v = thin_svd(W, it.rank)
    return Iterate(u, s, v), alpha


def step_cgiht(
    it: Iterate, op, y: np.ndarray, resid: np.ndarray | None = None
) -> tuple[Iterate, float, float]:
    """One conjugate-gradient hard-thresholding step (ambient direction).

    beta makes the new direction conjugate-orthogonal to the previous
    one after projection onto the current left singular subspace; the
    directions themselves stay unprojected.
    """
    if resid is None:
        resid = y - _apply_iterate(op, it)
    G = op.adjoint(resid)
    utg = it.u.T @ G
    beta = 0.0
    if it.p_prev is not None:
        utp = it.u.T @ it.p_prev
        a_pug = op.apply_outer(it.u, utg)
        a_pup = op.apply_outer(it.u, utp)
        denom = float(a_pup @ a_pup)
        if denom > _TINY_REL * float(np.vdot(utp, utp)):
            beta = -float(a_pug @ a_pup) / denom
    if beta != 0.0:
        P = G + beta * it.p_prev
        utP = utg + beta * utp
        a_puP = a_pug + beta * a_pup
    else:
        P = G
        utP = utg
        a_puP = op.apply_outer(it.u, utP)
    denom = float(a_puP @ a_puP)
    if denom <= _TINY_REL * float(np.vdot(utP, utP)):
        raise DirectionLostError("search direction annihilated by the sensing map")
    alpha = float(np.vdot(utg, utP)) / denom
    W = it.dense() + alpha * P
    u, s, v = thin_svd(W, it.rank)
    new_it = Iterate(u, s, v)
    new_it.p_prev = P
    return new_it, alpha, beta


def step_asd(
    L: np.ndarray, Rt: np.ndarray, op, y: np.ndarray, resid: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """One alternating steepest-descent sweep: L half-step, then R half-step.

    Each half-step uses the exact line-search stepsize for its quadratic,
    so the data-fit objective cannot increase.  Returns
    ``(L, Rt, stepsize_L, stepsize_R)``.
    """
    if resid is None:
        resid = y - op.apply_outer(L, Rt)
    E = _gradient(op, resid)
    grad_L = -np.asarray(E @ Rt.T)
    t_L = 0.0
    if np.any(grad_L):
        a_gL = op.apply_outer(grad_L, Rt)
        denom = float(a_gL @ a_gL)
        if denom > _TINY_REL * float(np.vdot(grad_L, grad_L)):
            t_L = float(np.vdot(grad_L, grad_L)) / denom
            L = L - t_L * grad_L
            resid = resid + t_L * a_gL
    E2 = _gradient(op, resid)
    if isinstance(E2, np.ndarray):
        grad_R = -(L.T @ E2)
    else:
        grad_R = -np.asarray((E2.T @ L)).T
    t_R = 0.0
    if np.any(grad_R):
        a_gR = op.apply_outer(L, grad_R)
        denom = float(a_gR @ a_gR)
        if denom > _TINY_REL * float(np.vdot(grad_R, grad_R)):
            t_R = float(np.vdot(grad_R, grad_R)) / denom
            Rt = Rt - t_R * grad_R
    return L, Rt, t_L, t_R


def _asd_split(it: Iterate) -> tuple[np.ndarray, np.ndarray]:
    """Balanced factor split L = U sqrt(S), R = sqrt(S) V^T."""
    root = np.sqrt(it.sigma)
    return it.u * root, root[:, None] * it.v.T


def solve(
    op,
    y: np.ndarray,
    config: SolverConfig,
    ground_truth: np.ndarray | None = None,
) -> tuple[np.ndarray, SolverTrace]:
    """Run the configured solver until tolerance, iteration cap, or stall.

    Stall means the relative residual improved by less than the
    fraction ``stall_tol`` of its value over the last ``stall_window``
    iterations (the pseudocode alone would loop forever on stagnating
    instances); ``stall_window=0`` disables the check and the 1e-14
    default fires only at complete stagnation.  When ``ground_truth`` is
    given, the per-iteration relative error against it is recorded in
    the trace.  Returns the final dense estimate and the trace.
    """
    config.validate()
    cop = _CountingOperator(op)
    y = np.asarray(y, dtype=np.float64)
    y_norm = float(np.linalg.norm(y))
    y_div = max(y_norm, 1e-300)
    truth_norm = frob(ground_truth) if ground_truth is not None else None
    alg = config.algorithm
    started = time.perf_counter()

    it = init_hard_threshold(cop, y, config.rank)
    L = Rt = None
    warm_left = config.warm_start_niht_iters
    if alg == Algorithm.ASD and warm_left == 0:
        L, Rt = _asd_split(it)

    def current_dense():
        return L @ Rt if L is not None else it.dense()

    def rel_error():
        if ground_truth is None:
            return None
        return frob(current_dense() - ground_truth) / max(truth_norm, 1e-300)

    def residual():
        if L is not None:
            return y - cop.apply_outer(L, Rt)
        return y - _apply_iterate(cop, it)

    resid = residual()
    rel_res = float(np.linalg.norm(resid)) / y_div
    records = [IterationRecord(0, rel_res, rel_error=rel_error())]
    recent: deque[float] = deque([rel_res], maxlen=config.stall_window + 1)
    status = Status.MAX_ITERS
    l = 0
    while True:
        if rel_res <= config.rel_residual_tol:
            status = Status.CONVERGED
            break
        if l >= config.max_iters:
            status = Status.MAX_ITERS
            break
        if (
            config.stall_window > 0
            and len(recent) == config.stall_window + 1
            and recent[0] - rel_res < config.stall_tol * recent[0]
        ):
            status = Status.STALLED
            break

        alpha = beta = None
        restarted = False
        try:
            if warm_left > 0:
                it, alpha = step_niht(it, cop, y, resid)
                warm_left -= 1
                if warm_left == 0:
                    # the ambient direction history is meaningless to the
                    # projected solvers: start their recursion fresh
                    it.p_prev = None
                    it.pg_prev = None
                    if alg == Algorithm.ASD:
                        L, Rt = _asd_split(it)
            elif alg == Algorithm.NIHT:
                it, alpha = step_niht(it, cop, y, resid)
            elif alg == Algorithm.CGIHT:
                it, alpha, beta = step_cgiht(it, cop, y, resid)
            elif alg == Algorithm.RGRAD:
                it, alpha = step_rgrad(
                    it, cop, y, resid, config.subspace, config.dense_retraction
                )
            elif alg in _RCG_FAMILY:
                space = it.space()
                pg = project_to_vector(space, _gradient(cop, resid), config.subspace)
                p_prev = transport(space, it.p_prev) if it.p_prev is not None else None
                if alg == Algorithm.RCG_RESTARTED:
                    keep = restart_check(pg, p_prev, config.kappa1, config.kappa2)
                else:
                    keep = True
                it, alpha, beta, restarted = step_rcg(
                    it,
                    cop,
                    y,
                    config.resolved_beta_rule(),
                    keep,
                    resid,
                    config.subspace,
                    config.dense_retraction,
                    _pg=pg,
                    _p_prev=p_prev,
                )
            else:  # ASD
                L, Rt, alpha, beta = step_asd(L, Rt, cop, y, resid)
        except DirectionLostError:
            status = Status.STALLED
            break

        l += 1
        resid = residual()
        rel_res = float(np.linalg.norm(resid)) / y_div
        if not math.isfinite(rel_res):
            raise ContractViolationError("relative residual became non-finite")
        records.append(IterationRecord(l, rel_res, alpha, beta, restarted, rel_error()))
        recent.append(rel_res)

    trace = SolverTrace(
        algorithm=alg,
        records=records,
        status=status,
        apply_count=cop.apply_count,
        adjoint_count=cop.adjoint_count,
        wall_seconds=time.perf_counter() - started,
    )
    return current_dense(), trace
