"""Numerical integration of the flow into sampled trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from . import _kernels as kn
from .dynamics import FlowField, SystemState
from .errors import ContractError
from .problem import Diagnostics, KktPoint, clamp_gap


@dataclass(frozen=True)
class RK4Fixed:
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise ContractError(f"RK4 step must be positive, got {self.h}")


@dataclass(frozen=True)
class AdaptiveRK45:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    h_init: float = 1e-3
    h_min: float = 1e-12
    h_max: float = 1.0

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ContractError("tolerances must be positive")
        if not 0 < self.h_min <= self.h_init <= self.h_max:
            raise ContractError("need 0 < h_min <= h_init <= h_max")

    def scaled(self, factor: float) -> "AdaptiveRK45":
        return replace(self, rel_tol=self.rel_tol * factor, abs_tol=self.abs_tol * factor)


@dataclass(frozen=True)
class Linear:
    n: int


@dataclass(frozen=True)
class Logarithmic:
    n: int = 200


@dataclass(frozen=True)
class Explicit:
    times: tuple[float, ...]


Method = Union[RK4Fixed, AdaptiveRK45]
Spacing = Union[Linear, Logarithmic, Explicit]


@dataclass(frozen=True)
class IntegratorConfig:
    t_end: float
    method: Method = field(default_factory=AdaptiveRK45)
    spacing: Spacing = field(default_factory=Logarithmic)
    # cap h at min(0.1 t, h_max) to follow the growing coupling
    time_cap: bool = True
    compiled: bool = True

    def sample_times(self, t0: float) -> np.ndarray:
        t0, t1 = float(t0), float(self.t_end)
        if not t1 > t0:
            raise ContractError(f"t_end={t1} must exceed t0={t0}")
        sp = self.spacing
        if isinstance(sp, Explicit):
            ts = np.asarray(sp.times, dtype=float)
            if ts.size < 2 or ts[0] != t0 or ts[-1] != t1 or np.any(np.diff(ts) <= 0):
                raise ContractError("explicit sample times must increase from t0 to t_end")
            return ts.copy()
        if sp.n < 2:
            raise ContractError("at least two samples are required")
        if isinstance(sp, Linear):
            ts = t0 + np.arange(sp.n) * ((t1 - t0) / (sp.n - 1))
        else:
            if not t0 > 0:
                raise ContractError("logarithmic sampling needs t0 > 0")
            ts = t0 * np.exp(np.linspace(0.0, math.log(t1 / t0), sp.n))
            ts = np.maximum.accumulate(ts)
        ts[0], ts[-1] = t0, t1
        return ts

    def with_tolerance_scale(self, factor: float) -> "IntegratorConfig":
        m = self.method
        if isinstance(m, AdaptiveRK45):
            m = m.scaled(factor)
        else:
            # RK4 error scales like h⁴
            m = RK4Fixed(m.h * factor ** 0.25)
        return replace(self, method=m)


@dataclass(frozen=True)
class Termination:
    kind: str  # Completed | StepUnderflow | NonFinite
    t: Optional[float] = None

    @property
    def completed(self) -> bool:
        return self.kind == "Completed"

    def __str__(self):
        return self.kind if self.t is None else f"{self.kind}({self.t!r})"


_STATUS = {kn.COMPLETED: "Completed", kn.STEP_UNDERFLOW: "StepUnderflow", kn.NON_FINITE: "NonFinite"}


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled solution. ``z[k]`` is the flat state at ``t[k]``."""

    t: np.ndarray
    z: np.ndarray
    dims: tuple[int, int, int]
    config: IntegratorConfig
    termination: Termination
    perturbation_key: str = "none"
    steps: int = 0
    rejected: int = 0
    evaluations: int = 0
    compiled: bool = False

    def __post_init__(self):
        for arr in (self.t, self.z):
            arr.setflags(write=False)

    def __len__(self):
        return self.t.size

    def state(self, k: int) -> SystemState:
        return SystemState.from_vector(self.t[k], self.z[k], self.dims)

    def blocks(self):
        """Views (x, y, λ, vx, vy, vλ), each of shape (samples, dim)."""
        n1, n2, m = self.dims
        cut = np.cumsum([n1, n2, m, n1, n2])
        return np.split(self.z, cut, axis=1)

    def window(self, lo: float, hi: float) -> np.ndarray:
        return (self.t >= lo) & (self.t <= hi)


def _python_rhs(fn: Callable[[float, np.ndarray], np.ndarray]):
    def rhs(t, z, prm, out):
        out[:] = fn(t, z)
    return rhs


def integrate(fld: Callable[[float, np.ndarray], np.ndarray], init: SystemState,
              cfg: IntegratorConfig) -> Trajectory:
    """Integrate ``fld`` from ``init`` over ``[init.t, cfg.t_end]``.

    ``fld`` is a :class:`FlowField` or any ``f(t, z) -> dz/dt`` on flat
    vectors. A failed integration returns the samples reached so far with the
    failure recorded in ``termination``.
    """
    ts = cfg.sample_times(init.t)
    z0 = init.to_vector()
    if isinstance(fld, FlowField) and fld.size != z0.size:
        raise ContractError(f"state size {z0.size} does not match field size {fld.size}")
    prm = fld.affine_data() if (cfg.compiled and isinstance(fld, FlowField)) else None
    compiled = prm is not None
    if compiled:
        rhs, dp45, rk4 = kn.affine_rhs_jit, kn.dp45_jit, kn.rk4_jit
    else:
        rhs, dp45, rk4 = _python_rhs(fld), kn._dp45, kn._rk4
        prm = 0
    out = np.zeros((ts.size, z0.size))
    stats = np.zeros(3, dtype=np.int64)
    m = cfg.method
    if isinstance(m, AdaptiveRK45):
        status, t_stop, filled = dp45(rhs, prm, z0, ts, m.rel_tol, m.abs_tol, m.h_init,
                                      m.h_min, m.h_max, cfg.time_cap, out, stats)
    else:
        status, t_stop, filled = rk4(rhs, prm, z0, ts, m.h, out, stats)
    status = int(status)
    term = Termination("Completed") if status == kn.COMPLETED else Termination(_STATUS[status], float(t_stop))
    filled = int(filled)
    keep = filled
    while keep > 0 and not np.isfinite(out[keep - 1]).all():
        keep -= 1
    key = fld.perturbation.key if isinstance(fld, FlowField) else "none"
    return Trajectory(ts[:keep].copy(), out[:keep].copy(), _dims_of(fld, init), cfg, term, key,
                      int(stats[0]), int(stats[1]), int(stats[2]), compiled)


def _dims_of(fld, init: SystemState) -> tuple[int, int, int]:
    return fld.dims if isinstance(fld, FlowField) else init.dims


def richardson_check(fld, init: SystemState, cfg: IntegratorConfig,
                     base: Optional[Trajectory] = None) -> float:
    """Max over samples of ‖z_tight − z‖ with tolerances ×1 and ×0.01.

    ``base`` reuses an already computed run at the nominal tolerance.
    """
    a = base if base is not None else integrate(fld, init, cfg)
    b = integrate(fld, init, cfg.with_tolerance_scale(0.01))
    for tr in (a, b):
        if not tr.termination.completed:
            raise ContractError(f"richardson check needs completed runs, got {tr.termination}")
    return float(np.max(np.linalg.norm(a.z - b.z, axis=1)))


@dataclass(frozen=True)
class TrajectoryDiagnostics:
    t: np.ndarray
    gap: np.ndarray
    feasibility: np.ndarray
    speed_x: np.ndarray
    speed_y: np.ndarray
    speed_lambda: np.ndarray

    def at(self, k: int) -> Diagnostics:
        return Diagnostics(gap=float(self.gap[k]), feasibility=float(self.feasibility[k]))

    @property
    def speed(self) -> np.ndarray:
        """‖ẋ‖ + ‖ẏ‖ + ‖λ̇‖."""
        return self.speed_x + self.speed_y + self.speed_lambda

    @property
    def speed_sq(self) -> np.ndarray:
        """‖ẋ‖² + ‖ẏ‖² + ‖λ̇‖²."""
        return self.speed_x ** 2 + self.speed_y ** 2 + self.speed_lambda ** 2


def trajectory_diagnostics(p, k: KktPoint, traj: Trajectory) -> TrajectoryDiagnostics:
    """Lagrangian gap, feasibility residual and block speeds at every sample."""
    x, y, _, vx, vy, vl = traj.blocks()
    k.verify(p)
    r = x @ p.A.T + y @ p.B.T - p.b
    feas = np.linalg.norm(r, axis=1)
    lam = k.lambda_star
    ref = p.f_val(k.x_star) + p.g_val(k.y_star)
    vals = np.array([p.f_val(xi) + p.g_val(yi) for xi, yi in zip(x, y)], dtype=float)
    gap = vals + r @ lam + 0.5 * feas ** 2 - ref
    return TrajectoryDiagnostics(traj.t, clamp_gap(np.atleast_1d(gap)), feas,
                                 np.linalg.norm(vx, axis=1), np.linalg.norm(vy, axis=1),
                                 np.linalg.norm(vl, axis=1))
