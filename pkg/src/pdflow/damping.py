"""Damping schedules γ(t), the integrating factor p(t) = exp ∫γ, coupling rules δ(t),
and classification of (schedule, coupling, β) configurations into convergence regimes.
"""

from __future__ import annotations

import bisect
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import ContractError, DomainError, NumericError

GROWTH_TOL = 1e-14
SIMPSON_ABS_TOL = 1e-12
SIMPSON_REL_TOL = 1e-13
SIMPSON_REL_FAIL = 1e-10
# configs carry beta0 = 2/3 as a 10-digit decimal
BETA0_TOL = 1e-9


@dataclass(frozen=True)
class PowerLaw:
    """γ(t) = α / t^r."""

    alpha: float
    r: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ContractError(f"PowerLaw needs alpha > 0, got {self.alpha}")
        if not -1.0 < self.r <= 1.0:
            raise ContractError(f"PowerLaw needs r in (-1, 1], got {self.r}")


@dataclass(frozen=True)
class LogPower:
    """γ(t) = 1 / (t (ln t)^r)."""

    r: float

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ContractError(f"LogPower needs r in [0, 1], got {self.r}")


@dataclass(frozen=True, eq=False)
class Custom:
    """User-supplied γ with its first and second derivatives."""

    gamma: Callable[[float], float]
    dgamma: Callable[[float], float]
    ddgamma: Callable[[float], float]
    nonincreasing: bool = True
    label: str = "custom"


Family = Union[PowerLaw, LogPower, Custom]


class _QuadratureCache:
    """Checkpointed ∫_{t0}^t γ for schedules without a closed form.

    Queries at increasing times reuse the nearest checkpoint below, so a sweep
    over trajectory sample times costs one incremental panel per query.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._times: list[float] = []
        self._values: list[float] = []

    def integral(self, fn, t0: float, t: float) -> float:
        with self._lock:
            if not self._times:
                self._times.append(t0)
                self._values.append(0.0)
            i = bisect.bisect_right(self._times, t) - 1
            base_t, base_v = self._times[i], self._values[i]
            if base_t == t:
                return base_v
            value = base_v + adaptive_simpson(fn, base_t, t)
            self._times.insert(i + 1, t)
            self._values.insert(i + 1, value)
            return value


def adaptive_simpson(fn, a: float, b: float, abs_tol: float = SIMPSON_ABS_TOL,
                     max_depth: int = 60) -> float:
    """∫_a^b fn, integrated in u = ln t for a > 0 (power-law integrands become smooth)."""
    if b == a:
        return 0.0
    if a > 0:
        def g(u):
            t = math.exp(u)
            return fn(t) * t
        lo, hi = math.log(a), math.log(b)
    else:
        g, lo, hi = fn, a, b

    def simpson(x0, f0, x2, f2):
        x1 = 0.5 * (x0 + x2)
        f1 = g(x1)
        if not math.isfinite(f1):
            raise NumericError(f"gamma is not finite near t={math.exp(x1) if a > 0 else x1}")
        return x1, f1, (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    f_lo, f_hi = g(lo), g(hi)
    if not (math.isfinite(f_lo) and math.isfinite(f_hi)):
        raise NumericError(f"gamma is not finite on [{a}, {b}]")
    m, f_m, whole = simpson(lo, f_lo, hi, f_hi)
    # mixed tolerance: large integrals cannot meet a fixed absolute target
    abs_tol = max(abs_tol, SIMPSON_REL_TOL * abs(whole))
    total = 0.0
    worst_excess = 0.0
    stack = [(lo, f_lo, m, f_m, hi, f_hi, whole, abs_tol, 0)]
    while stack:
        x0, f0, x1, f1, x2, f2, est, tol, depth = stack.pop()
        lm, f_lm, left = simpson(x0, f0, x1, f1)
        rm, f_rm, right = simpson(x1, f1, x2, f2)
        delta = left + right - est
        if abs(delta) <= 15.0 * tol or depth >= max_depth:
            if abs(delta) > 15.0 * tol:
                worst_excess = max(worst_excess, abs(delta) / 15.0)
            total += left + right + delta / 15.0
        else:
            stack.append((x0, f0, lm, f_lm, x1, f1, left, tol / 2.0, depth + 1))
            stack.append((x1, f1, rm, f_rm, x2, f2, right, tol / 2.0, depth + 1))
    if not math.isfinite(total) or worst_excess > SIMPSON_REL_FAIL * max(abs(total), 1.0):
        raise NumericError(f"quadrature of gamma on [{a}, {b}] failed to converge")
    return total


@dataclass(frozen=True, eq=False)
class DampingSchedule:
    family: Family
    t0: float
    _cache: _QuadratureCache = field(default_factory=_QuadratureCache, repr=False, compare=False)

    def __post_init__(self):
        t0 = float(self.t0)
        object.__setattr__(self, "t0", t0)
        if isinstance(self.family, PowerLaw):
            if not t0 > 0:
                raise DomainError(f"PowerLaw schedules need t0 > 0, got {t0}")
        elif isinstance(self.family, LogPower):
            if not t0 > 1:
                raise DomainError(f"LogPower schedules need t0 > 1, got {t0}")
        elif not isinstance(self.family, Custom):
            raise ContractError(f"unknown damping family {self.family!r}")

    # vectorized closed forms; scalars in, scalars out
    def _check_t(self, t):
        arr = np.asarray(t, dtype=float)
        if np.any(arr < self.t0):
            raise DomainError(f"t={np.min(arr)} precedes schedule start t0={self.t0}")
        return arr

    def gamma(self, t):
        return gamma_eval(self, t)[0]

    def log_p(self, t):
        """∫_{t0}^t γ(s) ds."""
        arr = self._check_t(t)
        fam, t0 = self.family, self.t0
        if isinstance(fam, PowerLaw):
            if fam.r == 1.0:
                out = fam.alpha * np.log(arr / t0)
            else:
                e = 1.0 - fam.r
                out = fam.alpha * (arr ** e - t0 ** e) / e
        elif isinstance(fam, LogPower):
            L, L0 = np.log(arr), math.log(t0)
            if fam.r == 1.0:
                out = np.log(L / L0)
            else:
                e = 1.0 - fam.r
                out = (L ** e - L0 ** e) / e
        else:
            out = self.log_p_quadrature(arr)
        return float(out) if np.ndim(out) == 0 else out

    def log_p_quadrature(self, t):
        arr = self._check_t(t)
        fn = self._gamma_scalar
        vals = [self._cache.integral(fn, self.t0, float(ti)) for ti in np.ravel(arr)]
        out = np.asarray(vals).reshape(arr.shape)
        return float(out) if out.ndim == 0 else out

    def _gamma_scalar(self, t: float) -> float:
        fam = self.family
        if isinstance(fam, Custom):
            return float(fam.gamma(t))
        return float(_closed_gamma(fam, np.asarray(t, dtype=float))[0])


def _closed_gamma(fam, t):
    if isinstance(fam, PowerLaw):
        a, r = fam.alpha, fam.r
        g = a * t ** (-r)
        return g, -a * r * t ** (-r - 1.0), a * r * (r + 1.0) * t ** (-r - 2.0)
    L = np.log(t)
    r = fam.r
    g = 1.0 / (t * L ** r)
    dg = -(L + r) / (t ** 2 * L ** (r + 1.0))
    ddg = (2.0 * L ** 2 + 3.0 * r * L + r * (r + 1.0)) / (t ** 3 * L ** (r + 2.0))
    return g, dg, ddg


def gamma_eval(s: DampingSchedule, t):
    """(γ, γ̇, γ̈) at t (scalar or array)."""
    arr = s._check_t(t)
    fam = s.family
    if isinstance(fam, Custom):
        flat = np.ravel(arr)
        out = [np.array([f(float(ti)) for ti in flat], dtype=float).reshape(arr.shape)
               for f in (fam.gamma, fam.dgamma, fam.ddgamma)]
    else:
        out = list(_closed_gamma(fam, arr))
    if arr.ndim == 0:
        return tuple(float(v) for v in out)
    return tuple(out)


def p_factor(s: DampingSchedule, t):
    """p(t) = exp(∫_{t0}^t γ); exactly 1 at t0."""
    lp = s.log_p(t)
    return float(np.exp(lp)) if np.ndim(lp) == 0 else np.exp(lp)


def log_grid(t0: float, n: int, decades: float = 6.0) -> np.ndarray:
    """n log-spaced points over [t0, 10^decades · t0], endpoints exact."""
    g = t0 * np.logspace(0.0, decades, n)
    g[0], g[-1] = t0, t0 * 10.0 ** decades
    return g


def check_nonincreasing(s: DampingSchedule, n: int = 64) -> bool:
    """γ̇ ≤ 0 spot check on a log grid (exact for the closed-form families)."""
    fam = s.family
    if isinstance(fam, PowerLaw):
        return fam.r >= 0.0
    if isinstance(fam, LogPower):
        return True
    _, dg, _ = gamma_eval(s, log_grid(s.t0, n))
    return bool(np.all(dg <= GROWTH_TOL))


def integral_diverges(s: DampingSchedule) -> tuple[bool, bool]:
    """Whether ∫_{t0}^∞ γ = ∞, as (verdict, heuristic)."""
    if isinstance(s.family, (PowerLaw, LogPower)):
        return True, False
    return bool(s.log_p(s.t0 * 1e6) > math.log(1e3)), True


@dataclass(frozen=True)
class GrowthCertificate:
    beta: float
    holds: bool
    worst_margin: float
    exact: bool = False


def check_growth(s: DampingSchedule, beta: float, grid_size: int = 256) -> GrowthCertificate:
    """Check γ̈ ≥ 2β²γ³ on a log grid over [t0, 10⁶ t0]."""
    if not 0.0 < beta <= 1.0 / 3.0 + 1e-15:
        raise ContractError(f"beta must lie in (0, 1/3], got {beta}")
    g, _, ddg = gamma_eval(s, log_grid(s.t0, grid_size))
    margin = float(np.min(ddg - 2.0 * beta ** 2 * g ** 3))
    fam = s.family
    if isinstance(fam, PowerLaw) and fam.r == 1.0:
        holds = fam.alpha * beta <= 1.0 + 1e-12
        margin = max(margin, 0.0) if holds else min(margin, -np.finfo(float).tiny)
        return GrowthCertificate(beta=beta, holds=holds, worst_margin=margin, exact=True)
    if isinstance(fam, PowerLaw) and fam.r < 1.0:
        # γ̈/γ³ ∝ t^{2r−2} → 0, so every β > 0 fails eventually, possibly past the grid
        return GrowthCertificate(beta=beta, holds=False, worst_margin=min(margin, -np.finfo(float).tiny),
                                 exact=True)
    if -GROWTH_TOL <= margin < 0.0:
        margin = 0.0
    return GrowthCertificate(beta=beta, holds=margin >= 0.0, worst_margin=margin)


def lemma_a1_check(s: DampingSchedule, beta: float, grid=None) -> bool:
    """γ̇ + βγ² ≤ 0 on the grid (consequence of the growth condition)."""
    if not check_growth(s, beta).holds:
        raise ContractError(f"growth condition does not hold for beta={beta}")
    t = log_grid(s.t0, 256) if grid is None else np.asarray(grid, dtype=float)
    g, dg, _ = gamma_eval(s, t)
    return bool(np.all(dg + beta * g ** 2 <= GROWTH_TOL))


def max_growth_beta(s: DampingSchedule, grid_size: int = 256) -> Optional[float]:
    """Largest β ≤ 1/3 with the growth condition, or None if none exists."""
    fam = s.family
    if isinstance(fam, PowerLaw) and fam.r == 1.0:
        return min(1.0 / 3.0, 1.0 / fam.alpha)
    if check_growth(s, 1.0 / 3.0, grid_size).holds:
        return 1.0 / 3.0
    lo, hi = 0.0, 1.0 / 3.0
    if not check_growth(s, 1e-6, grid_size).holds:
        return None
    lo = 1e-6
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if check_growth(s, mid, grid_size).holds:
            lo = mid
        else:
            hi = mid
    return lo


# -- coupling ------------------------------------------------------------------------


@dataclass(frozen=True)
class ReciprocalGamma:
    """δ(t) = 1 / (β₀ γ(t))."""

    beta0: float

    def __post_init__(self):
        if not 0.0 < self.beta0 < 1.0:
            raise ContractError(f"beta0 must lie in (0, 1), got {self.beta0}")


@dataclass(frozen=True)
class LinearInT:
    """δ(t) = t / (2 r₀)."""

    r0: float

    def __post_init__(self):
        if not self.r0 > 0:
            raise ContractError(f"r0 must be positive, got {self.r0}")


CouplingRule = Union[ReciprocalGamma, LinearInT]


def delta_eval(c: CouplingRule, s: DampingSchedule, t):
    arr = s._check_t(t)
    if isinstance(c, ReciprocalGamma):
        g = gamma_eval(s, arr)[0]
        if np.any(np.asarray(g) <= 0) or not np.all(np.isfinite(g)):
            raise NumericError("gamma vanished or is non-finite; reciprocal coupling undefined")
        out = 1.0 / (c.beta0 * np.asarray(g))
    elif isinstance(c, LinearInT):
        out = arr / (2.0 * c.r0)
    else:
        raise ContractError(f"unknown coupling rule {c!r}")
    return float(out) if np.ndim(out) == 0 else out


# -- regimes ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RegimeDescriptor:
    """Which convergence theory applies to a configuration.

    ``kind`` is one of ``general``, ``power_neg``, ``power_pos`` or ``invalid``.
    For ``general``, ``case`` is ``I``, ``II`` or ``closed`` (only the basic
    rates hold, β₀ on the boundary of the admissible interval).
    """

    kind: str
    schedule: DampingSchedule
    coupling: CouplingRule
    case: Optional[str] = None
    beta: Optional[float] = None
    reason: str = ""
    t1: Optional[float] = None
    alpha_bound_at_t0: Optional[bool] = None
    notes: tuple = ()

    @property
    def valid(self) -> bool:
        return self.kind != "invalid"

    @property
    def beta0(self) -> Optional[float]:
        return self.coupling.beta0 if isinstance(self.coupling, ReciprocalGamma) else None

    @property
    def r0(self) -> Optional[float]:
        return self.coupling.r0 if isinstance(self.coupling, LinearInT) else None

    @property
    def alpha(self) -> Optional[float]:
        fam = self.schedule.family
        return fam.alpha if isinstance(fam, PowerLaw) else None

    @property
    def r(self) -> Optional[float]:
        fam = self.schedule.family
        return getattr(fam, "r", None)

    def summary(self) -> dict:
        out = {"kind": self.kind, "case": self.case, "beta": self.beta, "beta0": self.beta0,
               "r": self.r, "r0": self.r0, "alpha": self.alpha, "t1": self.t1,
               "alpha_bound_at_t0": self.alpha_bound_at_t0, "reason": self.reason,
               "notes": list(self.notes)}
        return {k: v for k, v in out.items() if v is not None}


def power_alpha_bound_coef(r: float, r0: float) -> float:
    """Coefficient c in the requirement α > c·t^{r−1} for the power-law regimes."""
    return 4.0 * r0 + r + 1.0 if r <= 0.0 else 4.0 * r0 + 2.0 * r


def _first_time_bound_holds(alpha: float, coef: float, r: float, t0: float) -> float:
    """inf{t ≥ t0 : α > coef·t^{r−1}} by bisection (the bound decreases in t)."""
    holds = lambda t: alpha > coef * t ** (r - 1.0)
    if holds(t0):
        return t0
    lo, hi = t0, 2.0 * t0
    while not holds(hi):
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if holds(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    return hi


def validate_regime(s: DampingSchedule, c: CouplingRule, beta: Optional[float] = None) -> RegimeDescriptor:
    """Classify a configuration; never raises, invalid ones carry a reason."""
    fam = s.family

    def invalid(reason, **kw):
        return RegimeDescriptor(kind="invalid", schedule=s, coupling=c, reason=reason, **kw)

    if isinstance(c, LinearInT):
        if not isinstance(fam, PowerLaw) or fam.r >= 1.0:
            return invalid("linear coupling t/(2 r0) requires power damping alpha/t^r with r in (-1, 1)")
        r, r0, alpha = fam.r, c.r0, fam.alpha
        if s.t0 < 1.0:
            return invalid(f"power damping with r < 1 requires t0 >= 1, got t0={s.t0}")
        if r <= 0.0:
            if not r0 > (1.0 + r) / 2.0:
                return invalid(f"r0={r0} must exceed (1+r)/2={(1.0 + r) / 2.0} for r in (-1, 0]")
            kind = "power_neg"
        else:
            if not r0 > r:
                return invalid(f"r0={r0} must exceed r={r} for r in (0, 1)")
            kind = "power_pos"
        coef = power_alpha_bound_coef(r, r0)
        at_t0 = alpha > coef * s.t0 ** (r - 1.0)
        t1 = _first_time_bound_holds(alpha, coef, r, s.t0)
        notes = () if at_t0 else (f"alpha bound alpha > {coef:g} t^(r-1) first holds at t1={t1:.6g}",)
        return RegimeDescriptor(kind=kind, schedule=s, coupling=c, t1=t1,
                                alpha_bound_at_t0=at_t0, notes=notes)

    if not isinstance(c, ReciprocalGamma):
        return invalid(f"unknown coupling rule {c!r}")
    if isinstance(fam, LogPower) and s.t0 < math.e:
        return invalid(f"log damping requires t0 >= e, got t0={s.t0}")
    if not check_nonincreasing(s):
        return invalid("gamma must be nonincreasing for reciprocal coupling")
    best = max_growth_beta(s)
    if beta is None:
        if best is None:
            return invalid("no beta in (0, 1/3] satisfies gamma'' >= 2 beta^2 gamma^3")
        beta = best
    if not 0.0 < beta <= 1.0 / 3.0 + 1e-15:
        return invalid(f"beta must lie in (0, 1/3], got {beta}")
    cert = check_growth(s, beta)
    if not cert.holds:
        hint = f"; largest admissible beta is {best:.6g}" if best is not None else ""
        return invalid(f"growth condition gamma'' >= 2 beta^2 gamma^3 fails for beta={beta:.6g}{hint}",
                       beta=beta)
    b0 = c.beta0
    eps = BETA0_TOL
    if not (2 * beta - eps <= b0 <= 1 - beta + eps):
        return invalid(f"beta0={b0} outside [2 beta, 1 - beta] = [{2 * beta:.6g}, {1 - beta:.6g}]", beta=beta)
    notes = []
    diverges, heuristic = integral_diverges(s)
    if not diverges:
        return invalid("integral of gamma appears finite (p(t) bounded)", beta=beta)
    if heuristic:
        notes.append("divergence of the gamma integral checked heuristically (p(1e6 t0) > 1e3)")
    if abs(b0 - (1 - beta)) <= eps:
        notes.append("beta0 = 1 - beta: velocity dissipation coefficient 1 - beta - beta0 is zero")
    if abs(beta - 1.0 / 3.0) <= 1e-12 and abs(b0 - 2.0 / 3.0) <= eps:
        case = "II"
    elif beta < 1.0 / 3.0 - 1e-12 and 2 * beta + eps < b0 < 1 - beta - eps:
        case = "I"
    else:
        case = "closed"
    return RegimeDescriptor(kind="general", schedule=s, coupling=c, case=case, beta=beta,
                            notes=tuple(notes))
