"""Second-order primal-dual flow reduced to a first-order system.

State layout is fixed as ``(x, y, λ, vx, vy, vλ)``::

    ẍ = −γẋ − ∇f(x) − Aᵀ(λ + δλ̇) − Aᵀ(Ax + By − b) + εx
    ÿ = −γẏ − ∇g(y) − Bᵀ(λ + δλ̇) − Bᵀ(Ax + By − b) + εy
    λ̈ = −γλ̇ + A(x + δẋ) + B(y + δẏ) − b
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .damping import (Custom, CouplingRule, DampingSchedule, LinearInT, LogPower, PowerLaw,
                      ReciprocalGamma, delta_eval, gamma_eval)
from .errors import ContractError, DomainError, NumericError
from .problem import SeparableProblem


@dataclass(frozen=True)
class SystemState:
    t: float
    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    vlam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        for name in ("x", "y", "lam", "vx", "vy", "vlam"):
            arr = np.array(getattr(self, name), dtype=float, ndmin=1)
            if arr.ndim != 1:
                raise ContractError(f"state component {name} must be a vector")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.vx.shape != self.x.shape or self.vy.shape != self.y.shape \
                or self.vlam.shape != self.lam.shape:
            raise ContractError("velocity shapes must match their positions")
        if not math.isfinite(self.t) or not np.isfinite(self.to_vector()).all():
            raise NumericError(f"non-finite state at t={self.t}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.x.size, self.y.size, self.lam.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.y, self.lam, self.vx, self.vy, self.vlam])

    @classmethod
    def from_vector(cls, t: float, z, dims: tuple[int, int, int]) -> "SystemState":
        n1, n2, m = dims
        z = np.asarray(z, dtype=float)
        h = n1 + n2 + m
        if z.shape != (2 * h,):
            raise ContractError(f"state vector has shape {z.shape}, expected ({2 * h},)")
        cut = np.cumsum([n1, n2, m, n1, n2])
        return cls(t, *np.split(z, cut))

    @classmethod
    def at_rest(cls, t: float, x, y, lam) -> "SystemState":
        x, y, lam = (np.asarray(v, dtype=float) for v in (x, y, lam))
        return cls(t, x, y, lam, np.zeros_like(x), np.zeros_like(y), np.zeros_like(lam))


def zero_state(p: SeparableProblem, t0: float) -> SystemState:
    return SystemState.at_rest(t0, np.zeros(p.n1), np.zeros(p.n2), np.zeros(p.m))


@dataclass(frozen=True, eq=False)
class Perturbation:
    """Forcing ε(t) = (εx(t), εy(t)) on the primal acceleration rows.

    ``key`` identifies the perturbation; trajectories and perturbed energies
    are matched on it. ``power`` holds ``(c, q)`` when ε = c(1+t)^{−q}·ones,
    which lets the compiled path evaluate it directly.
    """

    eps_x: Callable[[float], np.ndarray]
    eps_y: Callable[[float], np.ndarray]
    key: str
    power: Optional[tuple[float, float]] = None
    is_null: bool = False

    def norm(self, t) -> float | np.ndarray:
        if np.ndim(t):
            return np.array([self.norm(float(ti)) for ti in np.ravel(t)]).reshape(np.shape(t))
        if self.is_null:
            return 0.0
        ex, ey = self.eps_x(t), self.eps_y(t)
        return float(math.sqrt(ex @ ex + ey @ ey))

    @classmethod
    def null(cls, n1: int, n2: int) -> "Perturbation":
        zx, zy = np.zeros(n1), np.zeros(n2)
        return cls(lambda t: zx, lambda t: zy, "none", is_null=True)

    @classmethod
    def broadcast(cls, fn: Callable[[float], float], n1: int, n2: int, key: str) -> "Perturbation":
        """Scalar forcing applied to every primal component."""
        ox, oy = np.ones(n1), np.ones(n2)
        return cls(lambda t: fn(t) * ox, lambda t: fn(t) * oy, key)

    @classmethod
    def power_law(cls, c: float, q: float, n1: int, n2: int) -> "Perturbation":
        c, q = float(c), float(q)
        pert = cls.broadcast(lambda t: c * (1.0 + t) ** (-q), n1, n2, f"power(c={c!r},q={q!r})")
        return cls(pert.eps_x, pert.eps_y, pert.key, power=(c, q))

    @classmethod
    def table(cls, times, values, n1: int, n2: int) -> "Perturbation":
        """Piecewise-linear scalar forcing through (times, values), zero outside the table."""
        ts = np.asarray(times, dtype=float)
        vs = np.asarray(values, dtype=float)
        if ts.ndim != 1 or ts.shape != vs.shape or ts.size < 2:
            raise ContractError("perturbation table needs matching 1-D times/values with ≥ 2 rows")
        if np.any(np.diff(ts) <= 0) or not np.isfinite(vs).all():
            raise ContractError("perturbation table times must increase and values be finite")
        key = "table(" + ",".join(f"{a!r}:{b!r}" for a, b in zip(ts, vs)) + ")"
        return cls.broadcast(lambda t: float(np.interp(t, ts, vs, left=0.0, right=0.0)), n1, n2, key)


def _check_dims(p: SeparableProblem, st: SystemState) -> None:
    if st.dims != (p.n1, p.n2, p.m):
        raise ContractError(f"state dims {st.dims} do not match problem ({p.n1}, {p.n2}, {p.m})")


def _finite(name: str, v, t: float) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite {name} at t={t}")
    return arr


def _accelerations(p, g, d, ex, ey, t, x, y, lam, vx, vy, vl):
    r = _finite("constraint residual", p.residual(x, y), t)
    gf = _finite("grad_f", p.grad_f(x), t)
    gg = _finite("grad_g", p.grad_g(y), t)
    dual = lam + d * vl
    ax = -g * vx - gf - p.A.T @ dual - p.A.T @ r + ex
    ay = -g * vy - gg - p.B.T @ dual - p.B.T @ r + ey
    al = -g * vl + p.A @ (x + d * vx) + p.B @ (y + d * vy) - p.b
    return ax, ay, al


def _schedule_terms(s: DampingSchedule, c: CouplingRule, t: float) -> tuple[float, float]:
    g = _finite("gamma", gamma_eval(s, t)[0], t)
    d = _finite("delta", delta_eval(c, s, t), t)
    return float(g), float(d)


def vector_field(p: SeparableProblem, s: DampingSchedule, c: CouplingRule,
                 pert: Optional[Perturbation], st: SystemState) -> SystemState:
    """Time derivative of ``st``, returned in the same layout (its ``t`` is ``st.t``)."""
    _check_dims(p, st)
    if st.t < s.t0:
        raise DomainError(f"state time {st.t} precedes schedule start {s.t0}")
    t = st.t
    g, d = _schedule_terms(s, c, t)
    if pert is None or pert.is_null:
        ex, ey = 0.0, 0.0
    else:
        ex = _finite("eps_x", pert.eps_x(t), t)
        ey = _finite("eps_y", pert.eps_y(t), t)
    ax, ay, al = _accelerations(p, g, d, ex, ey, t, st.x, st.y, st.lam, st.vx, st.vy, st.vlam)
    return SystemState(t, st.vx, st.vy, st.vlam, ax, ay, al)


class FlowField:
    """The flow as a callable on flat state vectors, ``field(t, z) -> dz/dt``.

    Quadratic problems under closed-form damping expose :meth:`affine_data`,
    which the integrator uses to run the compiled kernel.
    """

    def __init__(self, p: SeparableProblem, s: DampingSchedule, c: CouplingRule,
                 pert: Optional[Perturbation] = None):
        self.problem, self.schedule, self.coupling = p, s, c
        self.perturbation = pert if pert is not None else Perturbation.null(p.n1, p.n2)
        self.dims = (p.n1, p.n2, p.m)
        self._h = sum(self.dims)

    @property
    def size(self) -> int:
        return 2 * self._h

    def __call__(self, t: float, z: np.ndarray) -> np.ndarray:
        p, (n1, n2, m) = self.problem, self.dims
        h = self._h
        if t < self.schedule.t0:
            raise DomainError(f"t={t} precedes schedule start {self.schedule.t0}")
        x, y, lam = z[:n1], z[n1:n1 + n2], z[n1 + n2:h]
        vx, vy, vl = z[h:h + n1], z[h + n1:h + n1 + n2], z[h + n1 + n2:]
        g, d = _schedule_terms(self.schedule, self.coupling, t)
        pert = self.perturbation
        if pert.is_null:
            ex = ey = 0.0
        else:
            ex, ey = _finite("eps_x", pert.eps_x(t), t), _finite("eps_y", pert.eps_y(t), t)
        ax, ay, al = _accelerations(p, g, d, ex, ey, t, x, y, lam, vx, vy, vl)
        return np.concatenate([vx, vy, vl, ax, ay, al])

    def affine_data(self):
        """Packed parameters for the compiled right-hand side, or ``None``.

        Available when f, g are quadratic, γ is PowerLaw or LogPower and the
        perturbation is null or a power law.
        """
        q = self.problem.quadratic
        fam = self.schedule.family
        pert = self.perturbation
        if q is None or isinstance(fam, Custom):
            return None
        if not (pert.is_null or pert.power is not None):
            return None
        p, (n1, n2, m) = self.problem, self.dims
        h, N = self._h, self.size
        A, B, b = p.A, p.B, p.b
        ix, iy, il = slice(0, n1), slice(n1, n1 + n2), slice(n1 + n2, h)
        jx, jy, jl = (slice(h + sl.start, h + sl.stop) for sl in (ix, iy, il))
        M0 = np.zeros((N, N))
        Md = np.zeros((N, N))
        cvec = np.zeros(N)
        M0[:h, h:] = np.eye(h)
        M0[jx, ix] = -q.P - A.T @ A
        M0[jx, iy] = -A.T @ B
        M0[jx, il] = -A.T
        M0[jy, ix] = -B.T @ A
        M0[jy, iy] = -q.R - B.T @ B
        M0[jy, il] = -B.T
        M0[jl, ix] = A
        M0[jl, iy] = B
        Md[jx, jl] = -A.T
        Md[jy, jl] = -B.T
        Md[jl, jx] = A
        Md[jl, jy] = B
        cvec[jx] = -q.q + A.T @ b
        cvec[jy] = -q.s + B.T @ b
        cvec[jl] = -b
        S0, Sd = sp.csr_matrix(M0), sp.csr_matrix(Md)
        if isinstance(fam, PowerLaw):
            fcode, alpha, r = 0, float(fam.alpha), float(fam.r)
        elif isinstance(fam, LogPower):
            fcode, alpha, r = 1, 1.0, float(fam.r)
        else:  # pragma: no cover - guarded above
            return None
        if isinstance(self.coupling, ReciprocalGamma):
            ccode, cpar = 0, float(self.coupling.beta0)
        elif isinstance(self.coupling, LinearInT):
            ccode, cpar = 1, float(self.coupling.r0)
        else:
            return None
        pcode, pc, pq = (0, 0.0, 0.0) if pert.is_null else (1, *pert.power)

        def csr(S):
            return (S.indptr.astype(np.int64), S.indices.astype(np.int64), S.data.astype(float))

        return (*csr(S0), *csr(Sd), cvec, fcode, alpha, r, ccode, cpar,
                h, pcode, float(pc), float(pq), n1 + n2)
