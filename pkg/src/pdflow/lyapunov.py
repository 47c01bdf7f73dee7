"""Lyapunov energies, their coefficient functions and audits.

Every energy has the shape ::

    E = w² · gap + Σ_{z ∈ (x, y, λ)} [ ½‖θ (z − z*) + w ż‖² + η/2 ‖z − z*‖² ]

with weight ``w = p(t)^β`` for general damping and ``w = t^ρ`` for the power
regimes under linear coupling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .damping import (CouplingRule, DampingSchedule, LinearInT, PowerLaw, ReciprocalGamma,
                      RegimeDescriptor, _first_time_bound_holds, delta_eval, gamma_eval,
                      power_alpha_bound_coef)
from .dynamics import Perturbation, SystemState
from .errors import ContractError
from .integrate import Trajectory, trajectory_diagnostics
from .problem import KktPoint, SeparableProblem

# relative tolerance below which a sign margin counts as zero
SIGN_TOL = 1e-12


@dataclass(frozen=True)
class GeneralGamma:
    beta: float
    beta0: float

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0 / 3.0 + 1e-15:
            raise ContractError(f"beta must lie in (0, 1/3], got {self.beta}")
        if not 2 * self.beta - 1e-9 <= self.beta0 <= 1 - self.beta + 1e-9:
            raise ContractError(f"beta0={self.beta0} outside [2 beta, 1 - beta]")


@dataclass(frozen=True)
class PowerNeg:
    r: float
    r0: float
    alpha: float

    def __post_init__(self):
        if not -1.0 < self.r <= 0.0:
            raise ContractError(f"PowerNeg needs r in (-1, 0], got {self.r}")
        if not self.r0 > (1.0 + self.r) / 2.0:
            raise ContractError(f"PowerNeg needs r0 > (1+r)/2, got r0={self.r0}")

    @property
    def rho(self) -> float:
        return (self.r + 1.0) / 2.0


@dataclass(frozen=True)
class PowerPos:
    r: float
    r0: float
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise ContractError(f"PowerPos needs r in (0, 1), got {self.r}")
        if not self.r0 > self.r:
            raise ContractError(f"PowerPos needs r0 > r, got r0={self.r0}")

    @property
    def rho(self) -> float:
        return self.r


EnergyParams = Union[GeneralGamma, PowerNeg, PowerPos]


def energy_params(regime: RegimeDescriptor, beta: Optional[float] = None) -> EnergyParams:
    """Energy parameters matching a validated regime (``beta`` overrides the regime's β)."""
    if regime.kind == "general":
        return GeneralGamma(regime.beta if beta is None else beta, regime.beta0)
    if regime.kind == "power_neg":
        return PowerNeg(regime.r, regime.r0, regime.alpha)
    if regime.kind == "power_pos":
        return PowerPos(regime.r, regime.r0, regime.alpha)
    raise ContractError(f"no energy for invalid regime: {regime.reason}")


def _power_family(ep, s: DampingSchedule):
    fam = s.family
    if not isinstance(fam, PowerLaw) or fam.r != ep.r or fam.alpha != ep.alpha:
        raise ContractError(f"{type(ep).__name__}(r={ep.r}, alpha={ep.alpha}) does not match "
                            f"schedule {fam!r}")


def weight(ep: EnergyParams, s: DampingSchedule, t):
    """w(t): p(t)^β or t^ρ."""
    t = s._check_t(t)
    if isinstance(ep, GeneralGamma):
        return np.exp(ep.beta * np.asarray(s.log_p(t)))
    return t ** ep.rho


def coefficients(ep: EnergyParams, s: DampingSchedule, t) -> tuple[np.ndarray, ...]:
    """(θ, η, θ̇, η̇) at t."""
    t = s._check_t(t)
    if isinstance(ep, GeneralGamma):
        b, b0 = ep.beta, ep.beta0
        g, dg, ddg = (np.asarray(v) for v in gamma_eval(s, t))
        pb = np.exp(b * np.asarray(s.log_p(t)))
        p2b = pb * pb
        k = b0 + 2 * b - 1
        th = b0 * pb * g
        eta = -b0 * p2b * (k * g ** 2 + dg)
        dth = b0 * pb * (b * g ** 2 + dg)
        deta = -b0 * p2b * (2 * b * k * g ** 3 + (6 * b + 2 * b0 - 2) * g * dg + ddg)
        return th, eta, dth, deta
    _power_family(ep, s)
    r, r0, a = ep.r, ep.r0, ep.alpha
    if isinstance(ep, PowerNeg):
        th = 2 * r0 * t ** ((r - 1) / 2)
        eta = 2 * r0 * (a - (2 * r0 + r) * t ** (r - 1))
        dth = r0 * (r - 1) * t ** ((r - 3) / 2)
        deta = -(4 * r0 ** 2 + 2 * r0 * r) * (r - 1) * t ** (r - 2)
        return th, eta, dth, deta
    th = 2 * r0 * t ** (r - 1)
    eta = 2 * r0 * t ** (r - 1) * ((1 - 2 * r - 2 * r0) * t ** (r - 1) + a)
    dth = 2 * r0 * (r - 1) * t ** (r - 2)
    deta = 2 * r0 * (r - 1) * t ** (r - 2) * ((2 - 4 * r - 4 * r0) * t ** (r - 1) + a)
    return th, eta, dth, deta


def theta_eta(ep: EnergyParams, s: DampingSchedule, t):
    th, eta, _, _ = coefficients(ep, s, t)
    if np.ndim(th) == 0:
        return float(th), float(eta)
    return th, eta


def eta_lower_bound(ep: EnergyParams, s: DampingSchedule, t):
    """The guaranteed lower bound on η (valid beyond the regime's t1)."""
    t = s._check_t(t)
    if isinstance(ep, GeneralGamma):
        g = np.asarray(gamma_eval(s, t)[0])
        return ep.beta0 * (1 - ep.beta - ep.beta0) * np.exp(2 * ep.beta * np.asarray(s.log_p(t))) * g ** 2
    if isinstance(ep, PowerNeg):
        return ep.r0 * ep.alpha * np.ones_like(t)
    return ep.r0 * ep.alpha * t ** (ep.r - 1)


def regime_t1(ep: EnergyParams, s: DampingSchedule) -> float:
    if isinstance(ep, GeneralGamma):
        return s.t0
    return _first_time_bound_holds(ep.alpha, power_alpha_bound_coef(ep.r, ep.r0), ep.r, s.t0)


# -- energies ----------------------------------------------------------------------


def _energy_terms(ep, s, k: KktPoint, t, gap, blocks):
    th, eta, _, _ = coefficients(ep, s, t)
    w = weight(ep, s, t)
    th, eta, w = (np.atleast_1d(v)[:, None] for v in (th, eta, w))
    total = (w[:, 0] ** 2) * gap
    x, y, lam, vx, vy, vl = blocks
    for z, v, zs in ((x, vx, k.x_star), (y, vy, k.y_star), (lam, vl, k.lambda_star)):
        d = z - zs
        u = th * d + w * v
        total = total + 0.5 * np.sum(u * u, axis=1) + 0.5 * eta[:, 0] * np.sum(d * d, axis=1)
    return total


def energy(ep: EnergyParams, p: SeparableProblem, k: KktPoint, s: DampingSchedule,
           st: SystemState) -> float:
    from .problem import gap_and_feasibility

    gap = gap_and_feasibility(p, k, st.x, st.y).gap
    blocks = [np.atleast_2d(getattr(st, n)) for n in ("x", "y", "lam", "vx", "vy", "vlam")]
    return float(_energy_terms(ep, s, k, np.array([st.t]), np.array([gap]), blocks)[0])


def energy_series(ep: EnergyParams, p: SeparableProblem, k: KktPoint, s: DampingSchedule,
                  traj: Trajectory) -> np.ndarray:
    """Energy at every sample of ``traj``."""
    gap = trajectory_diagnostics(p, k, traj).gap
    return _energy_terms(ep, s, k, traj.t, gap, traj.blocks())


def perturbation_correction(ep: EnergyParams, s: DampingSchedule, k: KktPoint, traj: Trajectory,
                            pert: Perturbation) -> np.ndarray:
    """Cumulative ∫⟨θ(x−x*) + w ẋ, w εx⟩ + ⟨θ(y−y*) + w ẏ, w εy⟩ (trapezoid on the samples)."""
    if traj.perturbation_key != pert.key:
        raise ContractError(f"trajectory was integrated with perturbation {traj.perturbation_key!r}, "
                            f"not {pert.key!r}")
    if pert.is_null:
        return np.zeros(traj.t.size)
    th, _, _, _ = coefficients(ep, s, traj.t)
    w = weight(ep, s, traj.t)
    x, y, _, vx, vy, _ = traj.blocks()
    ex = np.array([pert.eps_x(float(t)) for t in traj.t])
    ey = np.array([pert.eps_y(float(t)) for t in traj.t])
    integrand = (np.sum((th[:, None] * (x - k.x_star) + w[:, None] * vx) * (w[:, None] * ex), axis=1)
                 + np.sum((th[:, None] * (y - k.y_star) + w[:, None] * vy) * (w[:, None] * ey), axis=1))
    return cumulative_trapezoid(integrand, traj.t, initial=0.0)


def perturbed_energy(ep: EnergyParams, p: SeparableProblem, traj: Trajectory, pert: Perturbation,
                     k: KktPoint, s: DampingSchedule) -> np.ndarray:
    return energy_series(ep, p, k, s, traj) - perturbation_correction(ep, s, k, traj, pert)


# -- audits ------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityReport:
    """Relative equality residuals, sign-condition and η-bound margins over a grid.

    Residuals are normalized by the sum of absolute term magnitudes, so 0 is
    exact cancellation. Margins are relative too; negative means violated.
    """

    identity_residuals: dict
    sign_margin: float
    eta_lower_bound_margin: float
    t1: float
    grid: tuple[float, float, int]
    notes: tuple = ()

    def passes(self, tol: float = 1e-11) -> bool:
        return (max(self.identity_residuals.values()) <= tol
                and self.sign_margin >= -SIGN_TOL and self.eta_lower_bound_margin >= -SIGN_TOL)

    def to_dict(self) -> dict:
        return {"identity_residuals": dict(self.identity_residuals),
                "sign_margin": self.sign_margin,
                "eta_lower_bound_margin": self.eta_lower_bound_margin,
                "t1": self.t1, "notes": list(self.notes)}


def _rel(terms) -> float:
    terms = [np.asarray(v, dtype=float) for v in terms]
    num = np.abs(sum(terms))
    den = sum(np.abs(v) for v in terms)
    return float(np.max(np.where(den > 0, num / np.where(den > 0, den, 1.0), num)))


def _signed_rel(terms) -> float:
    """Largest value of Σ terms / Σ |terms| over the grid (0 where all terms vanish)."""
    terms = [np.asarray(v, dtype=float) for v in terms]
    num = sum(terms)
    den = sum(np.abs(v) for v in terms)
    return float(np.max(np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)))


def _clamp_margin(m: float) -> float:
    # equality cases (e.g. γ̇ + βγ² ≡ 0) land within roundoff of zero
    return 0.0 if -SIGN_TOL <= m < 0.0 else m


def _sign_terms(ep, s, grid, th, dth, deta):
    """θθ̇ + η̇/2 split into its elementary summands."""
    if not isinstance(ep, GeneralGamma):
        return (th * dth, 0.5 * deta)
    b, b0 = ep.beta, ep.beta0
    g, dg, ddg = (np.asarray(v) for v in gamma_eval(s, grid))
    pb = np.exp(b * np.asarray(s.log_p(grid)))
    c = b0 * pb * pb
    return (th * b0 * pb * b * g ** 2, th * b0 * pb * dg,
            -c * b * (b0 + 2 * b - 1) * g ** 3, -0.5 * c * (6 * b + 2 * b0 - 2) * g * dg, -0.5 * c * ddg)


def _eta_margin_terms(ep, s, grid):
    """η − (its lower bound), split into elementary summands."""
    lb = np.asarray(eta_lower_bound(ep, s, grid))
    if isinstance(ep, GeneralGamma):
        b0 = ep.beta0
        g, dg, _ = (np.asarray(v) for v in gamma_eval(s, grid))
        c = b0 * np.exp(2 * ep.beta * np.asarray(s.log_p(grid)))
        return (-c * (b0 + 2 * ep.beta - 1) * g ** 2, -c * dg, -lb)
    r, r0, a = ep.r, ep.r0, ep.alpha
    if isinstance(ep, PowerNeg):
        return (2 * r0 * a * np.ones_like(grid), -2 * r0 * (2 * r0 + r) * grid ** (r - 1), -lb)
    return (2 * r0 * (1 - 2 * r - 2 * r0) * grid ** (2 * r - 2), 2 * r0 * a * grid ** (r - 1), -lb)


def identity_audit(ep: EnergyParams, s: DampingSchedule, c: CouplingRule, grid) -> IdentityReport:
    grid = np.asarray(grid, dtype=float)
    general = isinstance(ep, GeneralGamma)
    if general != isinstance(c, ReciprocalGamma) or (not general and not isinstance(c, LinearInT)):
        raise ContractError(f"coupling {type(c).__name__} does not match energy {type(ep).__name__}")
    th, eta, dth, deta = coefficients(ep, s, grid)
    d = np.asarray(delta_eval(c, s, grid))
    w = np.asarray(weight(ep, s, grid))
    if general:
        g = np.asarray(gamma_eval(s, grid)[0])
        coupling_terms = (w ** 2, -th * w * d)
        v2_terms = (th * th, (ep.beta - 1) * th * w * g, dth * w, eta)
        names = ("coupling", "velocity_cross")
    else:
        rho, a, r = ep.rho, ep.alpha, ep.r
        coupling_terms = (grid ** (2 * rho), -th * d * grid ** rho)
        v2_terms = (th * th, rho * th * grid ** (rho - 1), -a * th * grid ** (rho - r), eta, grid ** rho * dth)
        names = ("coupling", "velocity_cross")
    residuals = {names[0]: _rel(coupling_terms), names[1]: _rel(v2_terms)}
    sign_margin = -_signed_rel(_sign_terms(ep, s, grid, th, dth, deta))
    t1 = regime_t1(ep, s)
    mask = grid >= t1
    notes = []
    if mask.any():
        em = _clamp_margin(-_signed_rel([-v for v in _eta_margin_terms(ep, s, grid[mask])]))
    else:
        em = float("nan")
        notes.append("grid lies entirely before t1")
    if t1 > s.t0:
        notes.append(f"eta bound checked from t1={t1:.6g}")
    return IdentityReport(residuals, _clamp_margin(sign_margin), em, t1, (float(grid[0]), float(grid[-1]), grid.size),
                          tuple(notes))


@dataclass(frozen=True)
class MonotonicityReport:
    monotone: bool
    first_violation: Optional[int] = None
    first_violation_t: Optional[float] = None
    worst_excess: float = 0.0


def monotonicity_audit(values, rel_slack: float = 1e-6, times=None,
                       abs_slack: Optional[float] = None) -> MonotonicityReport:
    """Check E[k+1] ≤ E[k]·(1 + rel_slack) + abs_slack for all k.

    ``abs_slack`` defaults to 1e−12·|E[0]|.
    """
    e = np.asarray(values, dtype=float)
    if e.size == 0:
        raise ContractError("monotonicity audit needs a nonempty sequence")
    if abs_slack is None:
        abs_slack = 1e-12 * abs(e[0])
    allowed = e[:-1] + np.abs(e[:-1]) * rel_slack + abs_slack
    excess = e[1:] - allowed
    bad = np.flatnonzero(excess > 0)
    worst = float(excess.max()) if excess.size else 0.0
    if bad.size == 0:
        return MonotonicityReport(True, worst_excess=worst)
    i = int(bad[0]) + 1
    return MonotonicityReport(False, i, None if times is None else float(np.asarray(times)[i]), worst)
