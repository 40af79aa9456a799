import math

import numpy as np
import pytest

from lrmr.errors import ContractViolationError
from lrmr.theory import (
    GuaranteeInputs,
    RecurrenceResult,
    gamma_rcg,
    gamma_rgrad,
    recurrence_mu,
    sample_complexity_estimate,
)


def inputs(r2r, r3r, sigma_min=1.0, sigma_max=1.0, x_frob=1.0, rank=1, k1=0.0, k2=0.0):
    return GuaranteeInputs(
        r2r=r2r, r3r=r3r, sigma_min=sigma_min, sigma_max=sigma_max,
        x_frob=x_frob, rank=rank, kappa1=k1, kappa2=k2,
    )


def test_zero_ric_gives_zero_gamma():
    rep = gamma_rgrad(inputs(0.0, 0.0))
    assert rep.gamma == 0.0
    assert rep.mu == 0.0
    assert rep.satisfied


def test_gamma_rgrad_hand_evaluation():
    # independent evaluation frozen by hand:
    # (4*0.01 + 2*0.01)/(1 - 0.01) + 4*0.01*3/1 = 0.06/0.99 + 0.12
    rep = gamma_rgrad(inputs(0.01, 0.01, sigma_min=1.0, sigma_max=2.0, x_frob=3.0, rank=4))
    assert abs(rep.gamma - (0.06 / 0.99 + 0.12)) <= 1e-15
    assert rep.mu == rep.gamma


def test_sufficient_ric_level_implies_contraction():
    # at the reported sufficient RIC level the rate constant obeys the chain
    # gamma <= 6 R/(1-R) + 4 R sqrt(r) sigma_max/sigma_min < 1
    for rank, smin, smax in [(1, 1.0, 1.0), (4, 0.5, 2.0), (9, 1.0, 5.0)]:
        ric = smin / smax / (12.0 * math.sqrt(rank))
        rep = gamma_rgrad(
            inputs(ric, ric, sigma_min=smin, sigma_max=smax,
                   x_frob=math.sqrt(rank) * smax, rank=rank)
        )
        chain = 6 * ric / (1 - ric) + 4 * ric * math.sqrt(rank) * smax / smin
        assert rep.gamma <= chain + 1e-12
        assert chain < 1.0
        assert rep.satisfied


def test_rcg_reduces_to_rgrad_at_zero_kappa():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a = rng.uniform(0.0, 0.2)
        b = a + rng.uniform(0.0, 0.2)
        smin = rng.uniform(0.5, 2.0)
        smax = smin * rng.uniform(1.0, 3.0)
        rank = int(rng.integers(1, 9))
        xf = rng.uniform(smax, math.sqrt(rank) * smax)
        base = inputs(a, b, smin, smax, xf, rank)
        assert abs(gamma_rcg(base).gamma - gamma_rgrad(base).gamma) <= 1e-14


def test_rcg_limit_small_ric():
    k1, k2 = 0.1, 1.0
    rep = gamma_rcg(inputs(1e-8, 1e-8, k1=k1, k2=k2))
    assert abs(rep.gamma - 3.0 * k1 * k2) <= 1e-6


def test_rcg_constants_recomputed_independently():
    a = b = 0.005
    k1, k2 = 0.1, 1.0
    rep = gamma_rcg(inputs(a, b, sigma_min=1.0, sigma_max=1.5, x_frob=2.0, rank=3, k1=k1, k2=k2))
    eps_a = a / ((1 - a) - k1 * (1 + a))
    eps_b = k2 * a / (1 - a) + k1 * k2 / (1 - a)
    tau1 = 2 * (a + b) * (1 + eps_a) + 2 * eps_a + 4 * a * 2.0 / 1.0 + eps_b
    tau2 = 2 * eps_b * (1 + eps_a) * (1 + a)
    assert abs(rep.epsilon_alpha - eps_a) <= 1e-15
    assert abs(rep.epsilon_beta - eps_b) <= 1e-15
    assert abs(rep.tau1 - tau1) <= 1e-15
    assert abs(rep.tau2 - tau2) <= 1e-15
    assert abs(rep.gamma - (tau1 + tau2)) <= 1e-15
    assert abs(rep.mu - 0.5 * (tau1 + math.sqrt(tau1**2 + 4 * tau2))) <= 1e-15
    assert abs(rep.tau1 + rep.tau2 - rep.gamma) <= 1e-15


def test_epsilon_reductions_at_zero_kappa():
    a = 0.07
    rep = gamma_rcg(inputs(a, a))
    assert abs(rep.epsilon_alpha - a / (1 - a)) <= 1e-15
    assert rep.epsilon_beta == 0.0


def test_rcg_monotone_in_each_parameter():
    a_grid = np.linspace(0.0, 0.25, 20)
    k1_grid = np.linspace(0.0, 0.3, 20)
    k2_grid = np.linspace(0.0, 2.0, 20)
    gam = np.empty((20, 20, 20))
    for i, a in enumerate(a_grid):
        for j, k1 in enumerate(k1_grid):
            for k, k2 in enumerate(k2_grid):
                gam[i, j, k] = gamma_rcg(inputs(a, a, x_frob=1.0, k1=k1, k2=k2)).gamma
    assert np.all(np.diff(gam, axis=0) >= -1e-12)
    assert np.all(np.diff(gam, axis=1) >= -1e-12)
    assert np.all(np.diff(gam, axis=2) >= -1e-12)
    # monotone in r3r alone as well
    g = [gamma_rcg(inputs(0.05, b, k1=0.1, k2=1.0)).gamma for b in np.linspace(0.05, 0.3, 20)]
    assert np.all(np.diff(g) >= -1e-12)


def test_mu_below_one_iff_gamma_below_one():
    rng = np.random.default_rng(2)
    for _ in range(500):
        a = rng.uniform(0.0, 0.3)
        b = a + rng.uniform(0.0, 0.3)
        rep = gamma_rcg(inputs(a, b, x_frob=1.0, k1=rng.uniform(0, 0.3), k2=rng.uniform(0, 2)))
        if abs(rep.gamma - 1.0) > 1e-9:
            assert (rep.mu < 1.0) == (rep.gamma < 1.0)


def test_domain_errors():
    with pytest.raises(ContractViolationError):
        gamma_rgrad(inputs(1.0, 1.0))
    with pytest.raises(ContractViolationError):
        gamma_rgrad(inputs(0.2, 0.1))
    with pytest.raises(ContractViolationError):
        gamma_rgrad(inputs(0.1, 0.1, sigma_min=1.0, sigma_max=2.0, x_frob=1.0, rank=1))
    with pytest.raises(ContractViolationError):
        # stepsize denominator nonpositive
        gamma_rcg(inputs(0.4, 0.4, k1=0.5, k2=1.0))


def test_recurrence_geometric_when_tau2_zero():
    res = recurrence_mu(0.5, 0.0, 1.0, 0.5, steps=30)
    assert abs(res.mu - 0.5) <= 1e-15
    assert np.allclose(res.values, [0.5**l for l in range(31)])
    assert res.contraction_holds


def test_recurrence_bounded_by_mu_envelope():
    tau1 = tau2 = 0.4
    mu = 0.5 * (tau1 + math.sqrt(tau1**2 + 4 * tau2))
    res = recurrence_mu(tau1, tau2, 1.0, mu, steps=100)
    assert res.contraction_holds
    for l, c in enumerate(res.values):
        assert c <= mu**l * (1 + 1e-9)


def test_recurrence_flags_violated_hypothesis():
    res = recurrence_mu(0.7, 0.5, 1.0, 0.5, steps=10)
    assert isinstance(res, RecurrenceResult)
    assert not res.contraction_holds


def test_recurrence_preconditions():
    with pytest.raises(ContractViolationError):
        recurrence_mu(-0.1, 0.0, 1.0, 0.0, steps=5)
    with pytest.raises(ContractViolationError):
        recurrence_mu(0.5, 0.0, 1.0, 0.9, steps=5)


def test_sample_complexity_scaling():
    base = sample_complexity_estimate(100, 100, 5, 2.0, 1.0)
    assert base > 0
    assert sample_complexity_estimate(200, 100, 5, 2.0, 1.0) > base
