"""Separable equality-constrained convex problems and their KKT certificates.

A problem is ``min f(x) + g(y)  s.t.  A x + B y = b`` given by gradient and
value oracles for ``f`` and ``g``. Quadratic instances additionally carry their
data so they can be serialized and simulated on the compiled fast path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import CertificateError, ContractError, FactoryError

Oracle = Callable[[np.ndarray], np.ndarray]
ValueOracle = Callable[[np.ndarray], float]

FACTORY_KKT_TOL = 1e-10
GAP_CLAMP = 1e-12


def _as_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ContractError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


def _as_matrix(M, name: str) -> np.ndarray:
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class QuadraticData:
    """Coefficients of f(x) = ½xᵀPx + qᵀx and g(y) = ½yᵀRy + sᵀy."""

    P: np.ndarray
    q: np.ndarray
    R: np.ndarray
    s: np.ndarray


@dataclass(frozen=True, eq=False)
class SeparableProblem:
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    grad_f: Oracle
    f_val: ValueOracle
    grad_g: Oracle
    g_val: ValueOracle
    quadratic: Optional[QuadraticData] = None
    name: str = "custom"

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        b = _as_vector(self.b, "b")
        if A.shape[0] != b.size or B.shape[0] != b.size:
            raise ContractError(
                f"A has {A.shape[0]} rows and B has {B.shape[0]} rows but b has {b.size} entries"
            )
        for arr in (A, B, b):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "b", b)

    @property
    def n1(self) -> int:
        return self.A.shape[1]

    @property
    def n2(self) -> int:
        return self.B.shape[1]

    @property
    def m(self) -> int:
        return self.b.size

    def check_point(self, x, y, lam=None):
        """Validate shapes of a primal(-dual) point and return float arrays."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != (self.n1,):
            raise ContractError(f"x has shape {x.shape}, expected ({self.n1},)")
        if y.shape != (self.n2,):
            raise ContractError(f"y has shape {y.shape}, expected ({self.n2},)")
        if lam is None:
            return x, y
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.m,):
            raise ContractError(f"lambda has shape {lam.shape}, expected ({self.m},)")
        return x, y, lam

    def residual(self, x, y) -> np.ndarray:
        return self.A @ x + self.B @ y - self.b


@dataclass(frozen=True)
class KktPoint:
    x_star: np.ndarray
    y_star: np.ndarray
    lambda_star: np.ndarray

    def residual_norms(self, p: SeparableProblem) -> tuple[float, float, float]:
        d = kkt_residuals(p, self.x_star, self.y_star, self.lambda_star)
        return d.stationarity_x, d.stationarity_y, d.primal_residual

    def verify(self, p: SeparableProblem, tol: float = FACTORY_KKT_TOL) -> None:
        """Raise :class:`CertificateError` unless every KKT residual is ≤ tol."""
        norms = self.residual_norms(p)
        if not all(np.isfinite(norms)) or max(norms) > tol:
            raise CertificateError(
                "KKT certificate rejected: residuals (stat_x, stat_y, primal) = "
                f"({norms[0]:.3e}, {norms[1]:.3e}, {norms[2]:.3e}) exceed tol {tol:.1e}"
            )


@dataclass(frozen=True)
class Diagnostics:
    """Optimality measures of a point; fields not computed are ``None``."""

    gap: Optional[float] = None
    feasibility: Optional[float] = None
    stationarity_x: Optional[float] = None
    stationarity_y: Optional[float] = None
    primal_residual: Optional[float] = None

    def merged(self, other: "Diagnostics") -> "Diagnostics":
        vals = {}
        for name in self.__dataclass_fields__:
            a, b = getattr(self, name), getattr(other, name)
            vals[name] = a if a is not None else b
        return Diagnostics(**vals)


def augmented_lagrangian(p: SeparableProblem, x, y, lam) -> float:
    x, y, lam = p.check_point(x, y, lam)
    r = p.residual(x, y)
    return float(p.f_val(x) + p.g_val(y) + lam @ r + 0.5 * (r @ r))


def kkt_residuals(p: SeparableProblem, x, y, lam) -> Diagnostics:
    x, y, lam = p.check_point(x, y, lam)
    sx = np.linalg.norm(p.grad_f(x) + p.A.T @ lam)
    sy = np.linalg.norm(p.grad_g(y) + p.B.T @ lam)
    pr = np.linalg.norm(p.residual(x, y))
    return Diagnostics(stationarity_x=float(sx), stationarity_y=float(sy), primal_residual=float(pr))


def clamp_gap(gap):
    """Zero out values within GAP_CLAMP below zero (floating-point noise at the saddle)."""
    g = np.asarray(gap, dtype=float)
    g = np.where((g < 0.0) & (g >= -GAP_CLAMP), 0.0, g)
    return float(g) if g.ndim == 0 else g


def gap_and_feasibility(p: SeparableProblem, k: KktPoint, x, y, *, tol: float = FACTORY_KKT_TOL,
                        verify: bool = True) -> Diagnostics:
    if verify:
        k.verify(p, tol)
    x, y = p.check_point(x, y)
    gap = augmented_lagrangian(p, x, y, k.lambda_star) - augmented_lagrangian(
        p, k.x_star, k.y_star, k.lambda_star
    )
    return Diagnostics(gap=clamp_gap(gap), feasibility=float(np.linalg.norm(p.residual(x, y))))


def diagnose(p: SeparableProblem, k: KktPoint, x, y, lam) -> Diagnostics:
    """All five diagnostic fields at one point (certificate assumed verified)."""
    return gap_and_feasibility(p, k, x, y, verify=False).merged(kkt_residuals(p, x, y, lam))


# -- quadratic factory ------------------------------------------------------------


def _check_psd(M: np.ndarray, name: str) -> None:
    if M.shape[0] != M.shape[1]:
        raise FactoryError(f"{name} must be square, got {M.shape}")
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(M).max(initial=0.0))):
        raise FactoryError(f"{name} is not symmetric")
    if M.size and np.linalg.eigvalsh(M).min() < -1e-12 * max(1.0, np.abs(M).max()):
        raise FactoryError(f"{name} is not positive semidefinite")


def quadratic_problem(P, q, R, s, A, B, b, name: str = "quadratic") -> SeparableProblem:
    """Build the problem object for quadratic f, g without solving for a KKT point."""
    P, R = _as_matrix(P, "P"), _as_matrix(R, "R")
    q, s = _as_vector(q, "q"), _as_vector(s, "s")
    A, B, b = _as_matrix(A, "A"), _as_matrix(B, "B"), _as_vector(b, "b")
    if P.shape != (A.shape[1], A.shape[1]) or q.size != A.shape[1]:
        raise ContractError(f"P {P.shape} / q {q.shape} inconsistent with A {A.shape}")
    if R.shape != (B.shape[1], B.shape[1]) or s.size != B.shape[1]:
        raise ContractError(f"R {R.shape} / s {s.shape} inconsistent with B {B.shape}")
    _check_psd(P, "P")
    _check_psd(R, "R")
    for arr in (P, q, R, s):
        arr.setflags(write=False)
    return SeparableProblem(
        A=A, B=B, b=b,
        grad_f=lambda x: P @ x + q,
        f_val=lambda x: 0.5 * float(x @ P @ x) + float(q @ x),
        grad_g=lambda y: R @ y + s,
        g_val=lambda y: 0.5 * float(y @ R @ y) + float(s @ y),
        quadratic=QuadraticData(P=P, q=q, R=R, s=s),
        name=name,
    )


def kkt_matrix(p: SeparableProblem) -> tuple[np.ndarray, np.ndarray]:
    """The linear KKT system K z = rhs for a quadratic problem, z = (x, y, λ)."""
    qd = p.quadratic
    if qd is None:
        raise ContractError("KKT linear system only exists for quadratic problems")
    n1, n2, m = p.n1, p.n2, p.m
    K = np.zeros((n1 + n2 + m, n1 + n2 + m))
    K[:n1, :n1] = qd.P
    K[:n1, n1 + n2:] = p.A.T
    K[n1:n1 + n2, n1:n1 + n2] = qd.R
    K[n1:n1 + n2, n1 + n2:] = p.B.T
    K[n1 + n2:, :n1] = p.A
    K[n1 + n2:, n1:n1 + n2] = p.B
    rhs = np.concatenate([-qd.q, -qd.s, p.b])
    return K, rhs


def make_quadratic_problem(P, q, R, s, A, B, b, *, name: str = "quadratic",
                           tol: float = FACTORY_KKT_TOL) -> tuple[SeparableProblem, KktPoint]:
    """Quadratic test problem plus its KKT point from a dense LU solve."""
    prob = quadratic_problem(P, q, R, s, A, B, b, name=name)
    K, rhs = kkt_matrix(prob)
    if np.linalg.cond(K) > 1e12:
        raise FactoryError("KKT system is singular or too ill-conditioned for a unique certificate")
    try:
        z = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise FactoryError(f"KKT system is singular: {exc}") from None
    n1, n2 = prob.n1, prob.n2
    kkt = KktPoint(x_star=z[:n1], y_star=z[n1:n1 + n2], lambda_star=z[n1 + n2:])
    try:
        kkt.verify(prob, tol)
    except CertificateError as exc:
        raise FactoryError(f"KKT solve inaccurate: {exc}") from None
    return prob, kkt


def builtin_problem(name: str) -> tuple[SeparableProblem, KktPoint]:
    """The named reference instances ``P1`` and ``P2``."""
    key = name.upper()
    if key == "P1":
        I2 = np.eye(2)
        return make_quadratic_problem(I2, np.zeros(2), I2, np.zeros(2), I2, I2, np.ones(2), name="P1")
    if key == "P2":
        return make_quadratic_problem(
            np.diag([1.0, 2.0]), [1.0, 0.0], np.eye(2), np.zeros(2),
            np.eye(2), [[1.0, 1.0], [0.0, 1.0]], [1.0, 2.0], name="P2",
        )
    raise ContractError(f"unknown built-in problem {name!r} (known: P1, P2)")


def validate_gradients(p: SeparableProblem, *, seed: int = 0x5EED, probes: int = 8,
                       step: float = 1e-5) -> float:
    """Max relative error between gradient oracles and central differences of the values."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for grad, val, n in ((p.grad_f, p.f_val, p.n1), (p.grad_g, p.g_val, p.n2)):
        for _ in range(probes):
            z = rng.standard_normal(n)
            g = np.asarray(grad(z), dtype=float)
            fd = np.empty(n)
            for i in range(n):
                e = np.zeros(n)
                e[i] = step
                fd[i] = (val(z + e) - val(z - e)) / (2 * step)
            worst = max(worst, float(np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(g))))
    return worst


# -- JSON ---------------------------------------------------------------------------


def problem_to_dict(p: SeparableProblem) -> dict:
    if p.quadratic is None:
        raise ContractError("only quadratic problems can be serialized")
    qd = p.quadratic
    return {
        "n1": p.n1, "n2": p.n2, "m": p.m,
        "A": p.A.tolist(), "B": p.B.tolist(), "b": p.b.tolist(),
        "quadratic": {"P": qd.P.tolist(), "q": qd.q.tolist(), "R": qd.R.tolist(), "s": qd.s.tolist()},
    }


def problem_from_dict(doc: dict, *, name: str = "quadratic") -> tuple[SeparableProblem, KktPoint]:
    try:
        quad = doc["quadratic"]
        prob, kkt = make_quadratic_problem(
            quad["P"], quad["q"], quad["R"], quad["s"], doc["A"], doc["B"], doc["b"], name=name
        )
    except KeyError as exc:
        raise ContractError(f"problem document missing key {exc}") from None
    declared = (doc.get("n1", prob.n1), doc.get("n2", prob.n2), doc.get("m", prob.m))
    if declared != (prob.n1, prob.n2, prob.m):
        raise ContractError(f"declared dimensions {declared} disagree with matrices "
                            f"{(prob.n1, prob.n2, prob.m)}")
    return prob, kkt


def problem_to_json(p: SeparableProblem) -> str:
    return json.dumps(problem_to_dict(p))


def problem_from_json(text: str) -> tuple[SeparableProblem, KktPoint]:
    return problem_from_dict(json.loads(text))
