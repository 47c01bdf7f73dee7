import math

import numpy as np
import pytest

from pdflow.analysis import (LOG_P, LOG_T, default_window, fit_decay_exponent, perturbation_budget,
                             tail_integral, theoretical_rates)
from pdflow.damping import DampingSchedule, LinearInT, LogPower, PowerLaw, ReciprocalGamma, validate_regime
from pdflow.dynamics import Perturbation
from pdflow.errors import ContractError, InsufficientDataError


def regime(alpha=4.0, r=1.0, beta0=0.6, beta=None, t0=1.0, log=False, r0=None):
    s = DampingSchedule(LogPower(r) if log else PowerLaw(alpha, r), t0)
    c = LinearInT(r0) if r0 is not None else ReciprocalGamma(beta0)
    reg = validate_regime(s, c, beta)
    assert reg.valid, reg.reason
    return reg


def test_exact_power_law_fit():
    t = np.geomspace(1.0, 1e4, 300)
    fit = fit_decay_exponent(t, 3.0 * t ** -2.0)
    assert fit.exponent == pytest.approx(-2.0, abs=1e-10)
    assert fit.r_squared >= 1 - 1e-12
    lo, hi = default_window(t)
    assert lo <= fit.window[0] < fit.window[1] == hi


def test_modulated_power_law_fit():
    t = np.geomspace(1.0, 1e4, 400)
    v = t ** -2.0 * (1 + 0.1 * np.sin(np.log(t)))
    assert fit_decay_exponent(t, v, (1e2, 1e4)).exponent == pytest.approx(-2.0, abs=0.1)


def test_log_p_basis_recovers_p_exponent():
    s = DampingSchedule(LogPower(1.0), math.e)
    t = np.geomspace(math.e, 1e6, 300)
    v = np.exp(-2.0 / 3.0 * s.log_p(t))
    fit = fit_decay_exponent(t, v, basis=LOG_P, schedule=s)
    assert fit.exponent == pytest.approx(-2.0 / 3.0, abs=1e-9)
    with pytest.raises(ContractError):
        fit_decay_exponent(t, v, basis=LOG_P)


def test_clamped_samples_stop_the_fit():
    t = np.geomspace(1.0, 1e4, 200)
    v = t ** -1.0
    v[150:] = 0.0
    fit = fit_decay_exponent(t, v, (1.0, 1e4))
    assert fit.clamped == 50 and fit.samples == 150
    assert fit.exponent == pytest.approx(-1.0, abs=1e-10)
    v[10:] = 0.0
    with pytest.raises(InsufficientDataError) as exc:
        fit_decay_exponent(t, v, (1.0, 1e4))
    assert exc.value.clamped


def test_too_few_samples():
    t = np.geomspace(1.0, 10.0, 19)
    with pytest.raises(InsufficientDataError):
        fit_decay_exponent(t, t ** -1.0, (1.0, 10.0))


def test_theoretical_rate_examples():
    th = theoretical_rates(regime(4.0, beta0=0.6))
    assert (th.gap_exponent, th.feas_exponent, th.speed_exponent, th.basis) == (-2.0, -1.0, -1.0, LOG_T)
    th = theoretical_rates(regime(12.0, r=0.5, r0=1.0))
    assert (th.gap_exponent, th.feas_exponent, th.speed_exponent) == (-1.0, -0.5, -0.5)
    th = theoretical_rates(regime(2.0, beta0=2 / 3))
    assert th.gap_exponent == pytest.approx(-4 / 3) and th.feas_exponent == pytest.approx(-2 / 3)
    assert th.speed_exponent == pytest.approx(-2 / 3) and not th.speed_open
    th = theoretical_rates(regime(4.0, r=-0.5, r0=1.0))
    assert (th.gap_exponent, th.feas_exponent, th.speed_exponent) == (-0.5, -0.25, -0.25)
    th = theoretical_rates(regime(log=True, beta0=2 / 3, t0=math.e))
    assert th.basis == LOG_P and th.gap_exponent == pytest.approx(-2 / 3)
    assert th.speed_open


def test_case_two_speed_is_open_for_large_alpha():
    th = theoretical_rates(regime(3.0, beta0=2 / 3))
    assert th.speed_exponent == pytest.approx(-1.0) and th.speed_open


def test_tau_continuity():
    reg = regime(2.0, beta0=2 / 3)
    s = reg.schedule
    t = np.array([5.0, 50.0])
    near = theoretical_rates(reg, tau=0.33)
    for w in near.integral_weights:
        if w.quantity == "gap":
            # weight p^{2τ}γ: recover 2τ and compare with the β = 1/3 limit 2/3
            expo = np.log(w.weight(t) / s.gamma(t)) / s.log_p(t)
            np.testing.assert_allclose(expo, 2 / 3, atol=0.01)
    with pytest.raises(ContractError):
        theoretical_rates(reg, tau=1 / 3)


def test_invalid_regime_rejected():
    s = DampingSchedule(PowerLaw(1.0, -0.5), 1.0)
    with pytest.raises(ContractError):
        theoretical_rates(validate_regime(s, LinearInT(0.2)))


def test_tail_integral_examples():
    t = np.geomspace(1.0, 1e6, 2000)
    zero = tail_integral(t, np.ones_like(t), np.zeros_like(t))
    assert zero.total == 0.0 and zero.bounded
    harm = tail_integral(t, lambda t: 1 / t, np.ones_like(t))
    assert not harm.bounded
    assert harm.last_decade == pytest.approx(math.log(10), rel=1e-4)
    fast = tail_integral(t, lambda t: t, lambda t: t ** -3.0)
    assert fast.bounded and fast.total == pytest.approx(1.0, rel=1e-3)
    assert np.all(np.diff(fast.cumulative) >= 0)


def test_budget_examples():
    reg = regime(4.0, beta0=0.6)
    assert perturbation_budget(Perturbation.null(2, 2), reg).value == 0.0
    fin = perturbation_budget(Perturbation.broadcast(lambda t: t ** -3.0, 2, 2, "t^-3"), reg)
    # ∫₁^∞ t·2t^{−3} dt = 2 (norm of the all-ones 4-vector is 2)
    assert fin.finite and fin.value == pytest.approx(2.0, rel=1e-3)
    inf = perturbation_budget(Perturbation.broadcast(lambda t: 1 / t, 2, 2, "t^-1"), reg)
    assert not inf.finite and inf.value == math.inf


def test_budget_weights_for_power_regimes():
    neg = regime(4.0, r=-0.5, r0=1.0)
    # weight t^{1/4}; ε = t^{−2} gives ∫ 2 t^{−7/4} = 8/3
    b = perturbation_budget(Perturbation.broadcast(lambda t: t ** -2.0, 2, 2, "t^-2"), neg)
    assert b.finite and b.value == pytest.approx(8 / 3, rel=2e-3)
    pos = regime(12.0, r=0.5, r0=1.0)
    # weight t^{1/2}; ε = t^{−1.5} gives ∫ 2/t, divergent
    b = perturbation_budget(Perturbation.broadcast(lambda t: t ** -1.5, 2, 2, "t^-1.5"), pos)
    assert not b.finite
