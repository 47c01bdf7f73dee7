"""End-to-end runs: config → trajectory → audits → files.

Exit codes: 0 success, 1 an enabled audit failed, 2 config error,
3 invalid regime, 4 integration failure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import (default_window, fit_decay_exponent, perturbation_budget,
                       theoretical_rates)
from .config import (RunConfig, build_integrator, build_perturbation, build_problem,
                     build_schedule)
from .damping import ReciprocalGamma, check_growth, log_grid, max_growth_beta, validate_regime
from .dynamics import FlowField, SystemState
from .errors import ConfigError, ContractError, DomainError, InsufficientDataError
from .integrate import integrate, richardson_check, trajectory_diagnostics
from .lyapunov import (energy_params, energy_series, identity_audit, monotonicity_audit,
                       perturbation_correction)
from .problem import validate_gradients

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_REGIME, EXIT_INTEGRATION = 0, 1, 2, 3, 4
SEED = 0x5EED
SADDLE_TOL = 1e-9
GRADIENT_TOL = 1e-6
TRAJECTORY_HEADER = ("t", "feasibility", "gap", "energy", "speed_x", "speed_y", "speed_lambda")
RATES_HEADER = ("quantity", "basis", "window_lo", "window_hi", "fitted", "theoretical", "pass")


@dataclass
class RunOutcome:
    exit_code: int
    message: str
    audit: dict = field(default_factory=dict)
    rates: list = field(default_factory=list)


def fmt(v) -> str:
    """Shortest round-trip decimal for floats; plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    return obj


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(jsonable(doc), indent=2, sort_keys=True) + "\n")


def initial_state(cfg: RunConfig, p, k) -> SystemState:
    ini = cfg.initial
    if ini.start == "kkt":
        return SystemState.at_rest(cfg.t0, k.x_star, k.y_star, k.lambda_star)
    if ini.start == "custom":
        x = ini.x if ini.x is not None else np.zeros(p.n1)
        y = ini.y if ini.y is not None else np.zeros(p.n2)
        lam = ini.lam if ini.lam is not None else np.zeros(p.m)
        st = SystemState.at_rest(cfg.t0, x, y, lam)
        if st.dims != (p.n1, p.n2, p.m):
            raise ConfigError(f"initial point dims {st.dims} do not match problem")
        return st
    return SystemState.at_rest(cfg.t0, np.zeros(p.n1), np.zeros(p.n2), np.zeros(p.m))


def resolve_regime(cfg: RunConfig):
    """(schedule, coupling, regime) or raise; invalid configurations give ``ContractError``."""
    try:
        s, c = build_schedule(cfg)
    except (ContractError, DomainError) as exc:
        raise ContractError(str(exc)) from None
    regime = validate_regime(s, c, cfg.beta)
    if not regime.valid:
        raise ContractError(regime.reason)
    return s, c, regime


def rate_rows(cfg: RunConfig, regime, diag, s) -> list:
    au = cfg.audits
    th = theoretical_rates(regime, au.tau)
    window = au.rate_window if au.rate_window is not None else default_window(diag.t)
    rows = []
    slack = {"gap": au.gap_slack, "feasibility": au.feas_slack, "speed": au.speed_slack}
    series = {"gap": diag.gap, "feasibility": diag.feasibility, "speed": diag.speed}
    for q in ("gap", "feasibility", "speed"):
        theo = th.exponent(q)
        if theo is None:
            continue
        try:
            fit = fit_decay_exponent(diag.t, series[q], window, th.basis, s)
            fitted, ok, lo, hi = fit.exponent, fit.exponent <= theo + slack[q], fit.window[0], fit.window[1]
        except InsufficientDataError as exc:
            # decayed below the measurable floor: upper-bound semantics auto-pass
            fitted, ok, lo, hi = float("nan"), bool(exc.clamped), window[0], window[1]
        rows.append((q, th.basis, float(lo), float(hi), float(fitted), float(theo), bool(ok)))
    return rows


def execute(cfg: RunConfig, out_dir: Optional[Path], tol_scale: float = 1.0) -> RunOutcome:
    try:
        p, k = build_problem(cfg)
        icfg = build_integrator(cfg, tol_scale)
    except ConfigError as exc:
        return RunOutcome(EXIT_CONFIG, str(exc))
    try:
        s, c, regime = resolve_regime(cfg)
    except ContractError as exc:
        return RunOutcome(EXIT_REGIME, f"invalid regime: {exc}")
    try:
        pert = build_perturbation(cfg, p)
        init = initial_state(cfg, p, k)
    except ConfigError as exc:
        return RunOutcome(EXIT_CONFIG, str(exc))
    fld = FlowField(p, s, c, pert)
    traj = integrate(fld, init, icfg)
    ep = energy_params(regime)
    diag = trajectory_diagnostics(p, k, traj)
    energy = energy_series(ep, p, k, s, traj) - perturbation_correction(ep, s, k, traj, pert)
    au = cfg.audits
    audit = {
        "regime": regime.summary(),
        "seed": SEED,
        "termination": str(traj.termination),
        "steps": traj.steps, "rejected_steps": traj.rejected,
        "samples": len(traj),
        "perturbation": pert.key,
        "tol_scale": tol_scale,
    }
    checks = {}
    grad_err = validate_gradients(p, seed=SEED)
    audit["gradient_check_error"] = grad_err
    checks["gradients"] = grad_err <= GRADIENT_TOL
    saddle = float(np.min(diag.gap - 0.5 * diag.feasibility ** 2)) if len(traj) else 0.0
    audit["saddle_margin"] = saddle
    checks["saddle"] = saddle >= -SADDLE_TOL
    if au.identity:
        rep = identity_audit(ep, s, c, log_grid(s.t0, 256, 4))
        audit.update(rep.to_dict())
        checks["identity"] = rep.passes()
    if au.monotonicity:
        t1 = regime.t1 if regime.t1 is not None else s.t0
        sel = traj.t >= t1
        mono = monotonicity_audit(energy[sel], au.rel_slack, traj.t[sel])
        audit["monotone"] = mono.monotone
        audit["first_violation"] = mono.first_violation_t
        audit["monotonicity_from"] = float(t1)
        checks["monotonicity"] = mono.monotone
    if not pert.is_null:
        budget = perturbation_budget(pert, regime)
        audit["perturbation_budget"] = budget.to_dict()
        checks["perturbation_budget"] = budget.finite
    rows = []
    if traj.termination.completed:
        if au.rates:
            rows = rate_rows(cfg, regime, diag, s)
            checks["rates"] = all(r[-1] for r in rows)
        if au.richardson:
            rc = richardson_check(fld, init, icfg, base=traj)
            audit["richardson"] = rc
            checks["richardson"] = rc <= au.richardson_tol
    audit["checks"] = checks
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(out_dir / "trajectory.csv", TRAJECTORY_HEADER,
                  zip(traj.t, diag.feasibility, diag.gap, energy, diag.speed_x, diag.speed_y,
                      diag.speed_lambda))
        write_json(out_dir / "audit.json", audit)
        write_csv(out_dir / "rates.csv", RATES_HEADER, rows)
    if not traj.termination.completed:
        return RunOutcome(EXIT_INTEGRATION, f"integration failed: {traj.termination}", audit, rows)
    failed = sorted(name for name, ok in checks.items() if not ok)
    if failed:
        return RunOutcome(EXIT_AUDIT, "failed audits: " + ", ".join(failed), audit, rows)
    return RunOutcome(EXIT_OK, "ok", audit, rows)


def check_report(cfg: RunConfig) -> tuple[int, dict]:
    """Classification, growth certificate, η margins and perturbation budget, no integration."""
    try:
        p, k = build_problem(cfg)
    except ConfigError as exc:
        return EXIT_CONFIG, {"error": str(exc)}
    try:
        s, c = build_schedule(cfg)
    except (ContractError, DomainError) as exc:
        return EXIT_REGIME, {"regime": "invalid", "reason": str(exc)}
    regime = validate_regime(s, c, cfg.beta)
    report = {"regime": regime.summary()}
    if isinstance(c, ReciprocalGamma):
        best = max_growth_beta(s)
        report["suggested_beta"] = best
        if cfg.beta is not None or regime.beta is not None:
            b = cfg.beta if cfg.beta is not None else regime.beta
            if 0 < b <= 1 / 3 + 1e-15:
                cert = check_growth(s, b)
                report["growth"] = {"beta": b, "holds": cert.holds, "worst_margin": cert.worst_margin,
                                    "exact": cert.exact}
    if not regime.valid:
        return EXIT_REGIME, report
    ep = energy_params(regime)
    rep = identity_audit(ep, s, c, log_grid(s.t0, 256, 4))
    report.update(rep.to_dict())
    ok = rep.passes()
    pert = build_perturbation(cfg, p)
    if not pert.is_null:
        budget = perturbation_budget(pert, regime)
        report["perturbation_budget"] = budget.to_dict()
        ok = ok and budget.finite
    return (EXIT_OK if ok else EXIT_AUDIT), report
