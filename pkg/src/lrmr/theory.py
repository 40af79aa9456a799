"""Closed-form recovery-guarantee constants and the contraction recurrence.

The functions here evaluate the convergence-rate constants for the
Riemannian gradient and restarted conjugate gradient solvers as a
function of the restricted isometry constants ``R_2r, R_3r`` of the
sensing operator and the spectrum of the measured matrix.  True RICs
are NP-hard to compute, so callers supply them (or a sampled *lower
bound*, in which case a satisfied guarantee check is necessary-direction
only and proves nothing).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

from .errors import ContractViolationError


@dataclass(frozen=True)
class GuaranteeInputs:
    """Inputs for the guarantee constants.

    ``r2r``/``r3r`` are the restricted isometry constants at ranks 2r
    and 3r; the remaining fields describe the measured rank-r matrix.
    """

    r2r: float
    r3r: float
    sigma_min: float
    sigma_max: float
    x_frob: float
    rank: int
    kappa1: float = 0.0
    kappa2: float = 0.0

    def validate(self) -> None:
        if not 0.0 <= self.r2r < 1.0:
            raise ContractViolationError(f"r2r={self.r2r} must lie in [0, 1)")
        if self.r3r < self.r2r:
            raise ContractViolationError("r3r must be >= r2r (RIC nesting)")
        if self.sigma_min <= 0 or self.sigma_max < self.sigma_min:
            raise ContractViolationError("need 0 < sigma_min <= sigma_max")
        tol = 1e-12 * self.sigma_max
        if self.x_frob < self.sigma_max - tol:
            raise ContractViolationError("x_frob must be >= sigma_max")
        if self.x_frob > math.sqrt(self.rank) * self.sigma_max + tol:
            raise ContractViolationError("x_frob must be <= sqrt(rank) * sigma_max")
        if self.rank < 1:
            raise ContractViolationError("rank must be positive")


@dataclass(frozen=True)
class GuaranteeReport:
    """Rate constants; ``satisfied`` means the contraction factor is < 1.

    ``gamma`` is the a-priori factor built from the worst-case
    initialization error; ``contraction_base`` is the RIC-only part of
    the per-step recursion, to which ``2 * err / sigma_min`` is added at
    error ``err`` (the two coincide after substituting the
    initialization bound).  ``ric_sufficient`` is the rank-3r RIC level
    below which ``gamma < 1`` is guaranteed.
    """

    gamma: float
    mu: float
    satisfied: bool
    ric_sufficient: float
    contraction_base: float
    epsilon_alpha: float | None = None
    epsilon_beta: float | None = None
    tau1: float | None = None
    tau2: float | None = None

    def to_json(self, **kwargs) -> str:
        return json.dumps(asdict(self), **kwargs)

    def per_step_gamma(self, err_frob: float, sigma_min: float) -> float:
        """Contraction factor of one step at iterate error ``err_frob``."""
        return self.contraction_base + 2.0 * err_frob / sigma_min


def gamma_rgrad(inputs: GuaranteeInputs) -> GuaranteeReport:
    """Rate constant for Riemannian gradient descent with thresholded start."""
    inputs.validate()
    a, b = inputs.r2r, inputs.r3r
    base = (4.0 * a + 2.0 * b) / (1.0 - a)
    gamma = base + 4.0 * a * inputs.x_frob / inputs.sigma_min
    ric = inputs.sigma_min / inputs.sigma_max / (12.0 * math.sqrt(inputs.rank))
    return GuaranteeReport(
        gamma=gamma,
        mu=gamma,
        satisfied=gamma < 1.0,
        ric_sufficient=ric,
        contraction_base=base,
    )


def gamma_rcg(inputs: GuaranteeInputs) -> GuaranteeReport:
    """Rate constants for the restarted conjugate gradient variant.

    Reduces exactly to ``gamma_rgrad`` at ``kappa1 = kappa2 = 0`` and
    tends to ``3 * kappa1 * kappa2`` as both RICs vanish.
    """
    inputs.validate()
    a, b = inputs.r2r, inputs.r3r
    k1, k2 = inputs.kappa1, inputs.kappa2
    denom = (1.0 - a) - k1 * (1.0 + a)
    if denom <= 0.0:
        raise ContractViolationError(
            f"stepsize denominator (1-r2r) - kappa1*(1+r2r) = {denom} must be positive"
        )
    eps_a = a / denom
    eps_b = k2 * a / (1.0 - a) + k1 * k2 / (1.0 - a)
    base = 2.0 * (a + b) * (1.0 + eps_a) + 2.0 * eps_a + eps_b
    tau1 = base + 4.0 * a * inputs.x_frob / inputs.sigma_min
    tau2 = 2.0 * eps_b * (1.0 + eps_a) * (1.0 + a)
    gamma = tau1 + tau2
    mu = 0.5 * (tau1 + math.sqrt(tau1 * tau1 + 4.0 * tau2))
    ric = inputs.sigma_min / inputs.sigma_max / (25.0 * math.sqrt(inputs.rank))
    return GuaranteeReport(
        gamma=gamma,
        mu=mu,
        satisfied=gamma < 1.0,
        ric_sufficient=ric,
        contraction_base=base,
        epsilon_alpha=eps_a,
        epsilon_beta=eps_b,
        tau1=tau1,
        tau2=tau2,
    )


@dataclass(frozen=True)
class RecurrenceResult:
    values: list[float]
    mu: float
    contraction_holds: bool


def recurrence_mu(
    tau1: float, tau2: float, c0: float, c1: float, steps: int
) -> RecurrenceResult:
    """Worst-case two-term error recurrence ``c_l = tau1 c_{l-1} + tau2 c_{l-2}``.

    When ``tau1 + tau2 < 1`` the sequence is verified against the
    geometric envelope ``mu^l c0`` with ``mu = (tau1 +
    sqrt(tau1^2 + 4 tau2)) / 2``; otherwise ``contraction_holds`` is
    reported False (the contraction hypothesis is violated).
    """
    if tau1 < 0 or tau2 < 0:
        raise ContractViolationError("tau1 and tau2 must be nonnegative")
    if c0 < 0:
        raise ContractViolationError("c0 must be nonnegative")
    mu = 0.5 * (tau1 + math.sqrt(tau1 * tau1 + 4.0 * tau2))
    if not 0.0 <= c1 <= mu * c0 + 1e-15 * max(c0, 1.0):
        raise ContractViolationError(f"need 0 <= c1 <= mu*c0 = {mu * c0}")
    values = [c0, c1]
    for _ in range(2, steps + 1):
        values.append(tau1 * values[-1] + tau2 * values[-2])
    holds = tau1 + tau2 < 1.0
    if holds:
        envelope = c0
        for c in values[1:]:
            envelope *= mu
            if c > envelope * (1.0 + 1e-12) + 1e-300:
                holds = False
                break
    return RecurrenceResult(values=values, mu=mu, contraction_holds=holds)


def sample_complexity_estimate(m: int, n: int, rank: int, sigma_max: float, sigma_min: float) -> float:
    """Order-of-magnitude measurement count for the guarantees to kick in.

    Evaluates ``max(m, n) * r * log(cond * sqrt(r))`` with constant 1;
    useful for scaling intuition only, not as a sharp threshold.
    """
    if sigma_min <= 0 or sigma_max < sigma_min:
        raise ContractViolationError("need 0 < sigma_min <= sigma_max")
    cond = sigma_max / sigma_min
    return max(m, n) * rank * math.log(cond * math.sqrt(rank))
