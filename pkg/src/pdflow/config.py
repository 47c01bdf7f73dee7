"""Run and sweep configuration files (JSON), validated with pydantic."""

from __future__ import annotations

import copy
import itertools
import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .damping import (CouplingRule, DampingSchedule, LinearInT, LogPower, PowerLaw, ReciprocalGamma)
from .dynamics import Perturbation
from .errors import ConfigError, PdflowError
from .integrate import AdaptiveRK45, IntegratorConfig, Linear, Logarithmic, RK4Fixed
from .problem import KktPoint, SeparableProblem, builtin_problem, problem_from_dict

MAX_SWEEP_CELLS = 10_000


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PowerGamma(_Strict):
    family: Literal["power"]
    alpha: float = Field(gt=0)
    r: float = 1.0


class LogGamma(_Strict):
    family: Literal["log"]
    r: float = 1.0


GammaSpec = Annotated[Union[PowerGamma, LogGamma], Field(discriminator="family")]


class ReciprocalDelta(_Strict):
    kind: Literal["reciprocal"]
    beta0: float


class LinearDelta(_Strict):
    kind: Literal["linear"]
    r0: float


DeltaSpec = Annotated[Union[ReciprocalDelta, LinearDelta], Field(discriminator="kind")]


class NoPerturbation(_Strict):
    family: Literal["none"] = "none"


class PowerPerturbation(_Strict):
    """ε(t) = c(1+t)^{−q} on every primal component."""

    family: Literal["power"]
    c: float
    q: float


class TablePerturbation(_Strict):
    family: Literal["custom-table"]
    times: list[float]
    values: list[float]


PerturbationSpec = Annotated[Union[NoPerturbation, PowerPerturbation, TablePerturbation],
                             Field(discriminator="family")]


class QuadraticBlock(_Strict):
    P: list[list[float]]
    q: list[float]
    R: list[list[float]]
    s: list[float]


class InlineProblem(_Strict):
    A: list[list[float]]
    B: list[list[float]]
    b: list[float]
    quadratic: QuadraticBlock
    n1: Optional[int] = None
    n2: Optional[int] = None
    m: Optional[int] = None


class ProblemRef(_Strict):
    builtin: Optional[Literal["P1", "P2"]] = None
    file: Optional[str] = None
    inline: Optional[InlineProblem] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if sum(v is not None for v in (self.builtin, self.file, self.inline)) != 1:
            raise ValueError("problem needs exactly one of builtin, file, inline")
        return self


class IntegratorSpec(_Strict):
    method: Literal["rk45", "rk4"] = "rk45"
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    h_init: float = 1e-3
    h_min: float = 1e-12
    h_max: float = 1.0
    h: Optional[float] = None
    samples: int = Field(200, ge=2)
    spacing: Literal["log", "linear"] = "log"


class InitialSpec(_Strict):
    start: Literal["zero", "kkt", "custom"] = "zero"
    x: Optional[list[float]] = None
    y: Optional[list[float]] = None
    lam: Optional[list[float]] = Field(None, alias="lambda")

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class AuditSpec(_Strict):
    identity: bool = True
    monotonicity: bool = True
    rates: bool = True
    richardson: bool = False
    rel_slack: float = 1e-6
    rate_window: Optional[tuple[float, float]] = None
    gap_slack: float = 0.3
    feas_slack: float = 0.2
    speed_slack: float = 0.2
    tau: Optional[float] = None
    richardson_tol: float = 1e-5


class RunConfig(_Strict):
    problem: Union[Literal["P1", "P2"], ProblemRef] = "P1"
    gamma: GammaSpec
    delta: DeltaSpec
    beta: Optional[float] = None
    t0: float = 1.0
    horizon: Optional[float] = Field(None, description="t_end; default 500·t0")
    perturbation: PerturbationSpec = NoPerturbation()
    integrator: IntegratorSpec = IntegratorSpec()
    initial: InitialSpec = InitialSpec()
    audits: AuditSpec = AuditSpec()
    outputs: Optional[str] = None

    @property
    def t_end(self) -> float:
        return self.horizon if self.horizon is not None else 500.0 * self.t0


class SweepConfig(_Strict):
    base: dict
    grid: dict[str, list]


def _load_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return doc


def parse_run(doc: dict, base_dir: Optional[Path] = None) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"invalid run config: {exc}") from None
    ref = cfg.problem
    if isinstance(ref, ProblemRef) and ref.file is not None and base_dir is not None:
        path = Path(ref.file)
        if not path.is_absolute():
            cfg = cfg.model_copy(update={"problem": ProblemRef(file=str(base_dir / path))})
    return cfg


def load_run(path) -> RunConfig:
    return parse_run(_load_json(path), Path(path).resolve().parent)


def load_sweep(path) -> tuple[list[dict], list[RunConfig]]:
    """Expand a sweep file into (overrides, configs), one per grid cell."""
    doc = _load_json(path)
    try:
        sw = SweepConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"invalid sweep config: {exc}") from None
    if not sw.grid or any(len(v) == 0 for v in sw.grid.values()):
        raise ConfigError("sweep grid is empty")
    keys = sorted(sw.grid)
    n = 1
    for k in keys:
        n *= len(sw.grid[k])
    if n > MAX_SWEEP_CELLS:
        raise ConfigError(f"sweep grid has {n} cells (limit {MAX_SWEEP_CELLS})")
    overrides, cfgs = [], []
    base_dir = Path(path).resolve().parent
    for combo in itertools.product(*(sw.grid[k] for k in keys)):
        cell = dict(zip(keys, combo))
        doc_i = copy.deepcopy(sw.base)
        for dotted, val in cell.items():
            _set_dotted(doc_i, dotted, val)
        overrides.append(cell)
        cfgs.append(parse_run(doc_i, base_dir))
    return overrides, cfgs


def _set_dotted(doc: dict, dotted: str, val) -> None:
    parts = dotted.split(".")
    cur = doc
    for p in parts[:-1]:
        nxt = cur.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"grid key {dotted!r} descends into a non-object")
        cur = nxt
    cur[parts[-1]] = val


# -- conversion to library objects ---------------------------------------------------


def build_problem(cfg: RunConfig) -> tuple[SeparableProblem, KktPoint]:
    ref = cfg.problem
    try:
        if isinstance(ref, str):
            return builtin_problem(ref)
        if ref.builtin is not None:
            return builtin_problem(ref.builtin)
        if ref.file is not None:
            return problem_from_dict(_load_json(ref.file), name=Path(ref.file).stem)
        return problem_from_dict(ref.inline.model_dump(exclude_none=True), name="inline")
    except PdflowError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"problem: {exc}") from None


def build_schedule(cfg: RunConfig) -> tuple[DampingSchedule, CouplingRule]:
    """Raises library contract/domain errors for out-of-range parameters."""
    g = cfg.gamma
    fam = PowerLaw(g.alpha, g.r) if isinstance(g, PowerGamma) else LogPower(g.r)
    s = DampingSchedule(fam, cfg.t0)
    d = cfg.delta
    c = ReciprocalGamma(d.beta0) if isinstance(d, ReciprocalDelta) else LinearInT(d.r0)
    return s, c


def build_perturbation(cfg: RunConfig, p: SeparableProblem) -> Perturbation:
    e = cfg.perturbation
    if isinstance(e, PowerPerturbation):
        return Perturbation.power_law(e.c, e.q, p.n1, p.n2)
    if isinstance(e, TablePerturbation):
        try:
            return Perturbation.table(e.times, e.values, p.n1, p.n2)
        except PdflowError as exc:
            raise ConfigError(f"perturbation: {exc}") from None
    return Perturbation.null(p.n1, p.n2)


def build_integrator(cfg: RunConfig, tol_scale: float = 1.0) -> IntegratorConfig:
    it = cfg.integrator
    spacing = Logarithmic(it.samples) if it.spacing == "log" else Linear(it.samples)
    try:
        if it.method == "rk4":
            if it.h is None:
                raise ConfigError("rk4 integrator needs a step h")
            method = RK4Fixed(it.h)
        else:
            method = AdaptiveRK45(it.rel_tol, it.abs_tol, it.h_init, it.h_min, it.h_max)
        out = IntegratorConfig(cfg.t_end, method, spacing)
        if tol_scale != 1.0:
            out = out.with_tolerance_scale(tol_scale)
        out.sample_times(cfg.t0)
    except PdflowError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"integrator: {exc}") from None
    return out
