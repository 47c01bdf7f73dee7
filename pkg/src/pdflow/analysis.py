"""Decay-exponent fits, tail integrals and the theoretical rates per regime."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .damping import DampingSchedule, PowerLaw, RegimeDescriptor, gamma_eval
from .dynamics import Perturbation
from .errors import ContractError, InsufficientDataError

LOG_T = "logt"
LOG_P = "logp"
MIN_FIT_SAMPLES = 20
CLAMP_FLOOR = 1e-16
TAIL_FRACTION = 0.01
DEFAULT_TAU = 0.30


@dataclass(frozen=True)
class RateFit:
    exponent: float
    intercept: float
    r_squared: float
    window: tuple[float, float]
    basis: str
    samples: int
    clamped: int = 0


def default_window(t) -> tuple[float, float]:
    """Latter half of the sampled span in log t."""
    t = np.asarray(t, dtype=float)
    return float(math.sqrt(t[0] * t[-1])), float(t[-1])


def fit_decay_exponent(t, values, window: Optional[tuple[float, float]] = None, basis: str = LOG_T,
                       schedule: Optional[DampingSchedule] = None) -> RateFit:
    """OLS slope of log(value) against log t (``LOG_T``) or log p(t) (``LOG_P``).

    Inside the window, samples are used up to the first one at or below 1e−16;
    that one and all later ones are dropped and counted in ``clamped``.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise ContractError("times and values must have the same shape")
    lo, hi = default_window(t) if window is None else window
    if not lo < hi:
        raise ContractError(f"empty window ({lo}, {hi})")
    sel = (t >= lo) & (t <= hi)
    t, v = t[sel], v[sel]
    small = np.flatnonzero(~(v > CLAMP_FLOOR))
    clamped = 0
    if small.size:
        clamped = t.size - small[0]
        t, v = t[:small[0]], v[:small[0]]
    if t.size < MIN_FIT_SAMPLES:
        raise InsufficientDataError(
            f"{t.size} usable samples in window [{lo:g}, {hi:g}] (need {MIN_FIT_SAMPLES})",
            usable=int(t.size), clamped=clamped > 0)
    if basis == LOG_T:
        x = np.log(t)
    elif basis == LOG_P:
        if schedule is None:
            raise ContractError("log-p basis needs the damping schedule")
        x = np.asarray(schedule.log_p(t), dtype=float)
    else:
        raise ContractError(f"unknown basis {basis!r}")
    y = np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), min(1.0, max(0.0, r2)),
                   (float(t[0]), float(t[-1])), basis, int(t.size), int(clamped))


# -- theoretical rates -------------------------------------------------------------


@dataclass(frozen=True)
class TailWeight:
    """A weighted integral ∫ w(t)·quantity(t) dt claimed finite."""

    label: str
    quantity: str  # feasibility_sq | gap | speed_sq
    weight: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TheoreticalRates:
    gap_exponent: float
    feas_exponent: float
    speed_exponent: Optional[float]
    basis: str
    speed_open: bool = False
    integral_weights: tuple[TailWeight, ...] = ()

    def exponent(self, quantity: str) -> Optional[float]:
        return {"gap": self.gap_exponent, "feasibility": self.feas_exponent,
                "speed": self.speed_exponent}[quantity]


def _general_weights(s: DampingSchedule, beta: float, case: str, tau: float):
    def pw(b):
        return lambda t: np.exp(2 * b * np.asarray(s.log_p(t))) * np.asarray(gamma_eval(s, t)[0])
    out = [TailWeight(f"p^{2 * beta:.4g}*gamma", "feasibility_sq", pw(beta))]
    if case == "I":
        out += [TailWeight(f"p^{2 * beta:.4g}*gamma", "gap", pw(beta)),
                TailWeight(f"p^{2 * beta:.4g}*gamma", "speed_sq", pw(beta))]
    elif case == "II":
        out += [TailWeight(f"p^{2 * tau:.4g}*gamma", "gap", pw(tau)),
                TailWeight(f"p^{2 * tau:.4g}*gamma", "speed_sq", pw(tau))]
    return tuple(out)


def theoretical_rates(regime: RegimeDescriptor, tau: Optional[float] = None) -> TheoreticalRates:
    """Claimed decay exponents (upper bounds) and finite weighted integrals.

    Power damping α/t reports exponents in log t, other general schedules in
    log p(t). In Case II the speed exponent is an open bound (any τ < 1/3);
    ``tau`` picks the sampled τ for the weighted integrals.
    """
    if not regime.valid:
        raise ContractError(f"invalid regime: {regime.reason}")
    s = regime.schedule
    if regime.kind == "power_neg":
        r = regime.r
        return TheoreticalRates(-(r + 1), -(r + 1) / 2, -(r + 1) / 2, LOG_T, False, (
            TailWeight(f"t^{r:g}", "feasibility_sq", lambda t: t ** r),
            TailWeight(f"t^{r:g}", "gap", lambda t: t ** r),
            TailWeight("t", "speed_sq", lambda t: np.asarray(t, dtype=float))))
    if regime.kind == "power_pos":
        r = regime.r
        return TheoreticalRates(-2 * r, -r, -r, LOG_T, False, (
            TailWeight(f"t^{2 * r - 1:g}", "feasibility_sq", lambda t: t ** (2 * r - 1)),
            TailWeight(f"t^{r:g}", "speed_sq", lambda t: t ** r),
            TailWeight(f"t^{2 * r - 1:g}", "gap", lambda t: t ** (2 * r - 1))))
    beta, case = regime.beta, regime.case
    tau = DEFAULT_TAU if tau is None else float(tau)
    if case == "II" and not 0.0 < tau < 1.0 / 3.0:
        raise ContractError(f"tau must lie in (0, 1/3), got {tau}")
    weights = _general_weights(s, beta, case, tau)
    fam = s.family
    if case == "I":
        speed, speed_open = -beta, False
    elif case == "II":
        speed, speed_open = -1.0 / 3.0, True
    else:
        speed, speed_open = None, False
    gap, feas = -2 * beta, -beta
    if isinstance(fam, PowerLaw) and fam.r == 1.0:
        a = fam.alpha
        if case == "II" and a < 3.0:
            speed_open = False
        scale = lambda e: None if e is None else a * e
        return TheoreticalRates(scale(gap), scale(feas), scale(speed), LOG_T, speed_open, weights)
    return TheoreticalRates(gap, feas, speed, LOG_P, speed_open, weights)


# -- improper integrals ------------------------------------------------------------


@dataclass(frozen=True)
class TailIntegral:
    t: np.ndarray
    cumulative: np.ndarray
    total: float
    last_decade: float
    bounded: bool
    heuristic: bool = True


def tail_integral(t, w, q) -> TailIntegral:
    """Trapezoid ∫ w·q with the last-decade boundedness heuristic.

    ``w`` and ``q`` are arrays on ``t`` or callables of t. Bounded iff the
    increment over [t_end/10, t_end] is at most 1% of the total.
    """
    t = np.asarray(t, dtype=float)
    wv = np.asarray(w(t) if callable(w) else w, dtype=float)
    qv = np.asarray(q(t) if callable(q) else q, dtype=float)
    cum = cumulative_trapezoid(wv * qv, t, initial=0.0)
    total = float(cum[-1])
    cut = t[-1] / 10.0
    if cut <= t[0]:
        last = total
    else:
        last = total - float(np.interp(cut, t, cum))
    bounded = total == 0.0 or abs(last) <= TAIL_FRACTION * abs(total)
    return TailIntegral(t, cum, total, last, bool(bounded))


@dataclass(frozen=True)
class Budget:
    value: float
    finite: bool
    last_decade_fraction: float

    def to_dict(self) -> dict:
        return {"value": self.value, "finite": self.finite,
                "last_decade_fraction": self.last_decade_fraction}


def budget_weight(regime: RegimeDescriptor) -> Callable[[np.ndarray], np.ndarray]:
    """p^β for general damping, t^{(r+1)/2} or t^r for the power regimes."""
    if regime.kind == "general":
        s, b = regime.schedule, regime.beta
        return lambda t: np.exp(b * np.asarray(s.log_p(t)))
    if regime.kind == "power_neg":
        return lambda t: t ** ((regime.r + 1) / 2)
    if regime.kind == "power_pos":
        return lambda t: t ** regime.r
    raise ContractError(f"invalid regime: {regime.reason}")


def perturbation_budget(pert: Perturbation, regime: RegimeDescriptor, decades: float = 4.0,
                        points: int = 8001) -> Budget:
    """∫ w(t)‖ε(t)‖ dt over [t0, 10^decades·t0]; ∞ unless the last decade adds ≤ 1%."""
    t0 = regime.schedule.t0
    if pert.is_null:
        return Budget(0.0, True, 0.0)
    u = np.linspace(0.0, decades * math.log(10.0), points)
    t = t0 * np.exp(u)
    t[-1] = t0 * 10.0 ** decades
    f = budget_weight(regime)(t) * pert.norm(t) * t
    cum = cumulative_trapezoid(f, u, initial=0.0)
    total = float(cum[-1])
    last = total - float(np.interp(math.log(10.0) * (decades - 1), u, cum))
    frac = last / total if total > 0 else 0.0
    finite = frac <= TAIL_FRACTION
    return Budget(total if finite else math.inf, bool(finite), float(frac))
