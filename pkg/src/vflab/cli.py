"""Command-line driver.

Usage::

    vflab <command> --config <path> [--out <dir>] [--seed N]

Config files are flat ``section.key = value`` lines with ``#`` comments.
Exit codes: 0 success, 1 config error, 2 numerical failure, 3 a check or
acceptance threshold was not met.  On failure one ``key=value`` line goes to
stderr.
"""

from __future__ import annotations

import argparse
import csv
import math
import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .compat import (
    MONITORS,
    PERIODIC_ONLY,
    DisplacementSpec,
    InvertibilityError,
    Mode,
    check_conserved,
    compute_diagnostics,
    gen_initial_from_displacement,
    initial_sigma,
    standard_displacement,
    write_records_csv,
)
from .dynamics import FlowState, MaterialParams, NonPhysicalStateError, Scheme, TimeStepperConfig, simulate, stable_dt
from .fields import Boundary, GridSpec, VectorField, lq_norm, write_binary
from .mms import CASES, convergence_study, get_case
from .operators import ConvergenceError, EllipticSolveOptions, Realization, lame_apply, lame_solve

COMMANDS = ("simulate", "check-invariants", "mms-convergence", "lame-test", "stability-probe")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_THRESHOLD = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, errors: list[tuple[int | None, str]]):
        self.errors = errors
        super().__init__("; ".join(_fmt_err(e) for e in errors))


def _fmt_err(e: tuple[int | None, str]) -> str:
    line, msg = e
    return f"line {line}: {msg}" if line else msg


@dataclass(frozen=True)
class RunConfig:
    command: str
    grid: GridSpec
    params: MaterialParams
    stepper: TimeStepperConfig
    initial: str = "displacement"  # equilibrium | displacement | random | mms
    epsilon: float = 1e-2
    velocity_amplitude: float | None = None
    modes: str = "standard"
    mms_case: str = "smooth2d"
    monitors: tuple[str, ...] = ("intrinsic", "trace", "mass", "rhoF", "norms")
    q: float = 4.0
    out: Path = Path("out")
    seed: int = 0
    mms_grids: tuple[int, ...] = (32, 64, 128)
    mms_expected_order: float = 2.0
    mms_tolerance: float = 0.3
    mms_dt_scaling: str = "h"
    check_tolerance: float = 1e-4
    check_drift: float | None = None
    check_evolve: bool = False
    lame_spectral_tol: float = 1e-10
    lame_residual_tol: float = 1e-8
    probe_factor: float = 10.0
    probe_steps: int = 500
    elliptic: EllipticSolveOptions | None = None


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

_NUM = re.compile(r"^\s*([-+]?(?:\d+\.?\d*(?:[eE][-+]?\d+)?)?)\s*\*?\s*(pi)?\s*$")


def _real(text: str) -> float:
    """Float literal, optionally times ``pi`` (``2pi``, ``2*pi``, ``pi``)."""
    m = _NUM.match(text)
    if not m or (not m.group(1) and not m.group(2)):
        raise ValueError(f"expected a number, got {text!r}")
    coef = float(m.group(1)) if m.group(1) not in ("", None) else 1.0
    val = coef * math.pi if m.group(2) else coef
    if not math.isfinite(val):
        raise ValueError(f"expected a finite number, got {text!r}")
    return val


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"expected an integer, got {text!r}") from None


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _list(conv):
    return lambda text: tuple(conv(p.strip()) for p in text.split(",") if p.strip())


def _choice(*options):
    def conv(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return conv


KEYS = {
    "command": _choice(*COMMANDS),
    "run.command": _choice(*COMMANDS),
    "run.seed": _int,
    "output.dir": str,
    "grid.dim": _int,
    "grid.n": _int,
    "grid.cells": _list(_int),
    "grid.length": _real,
    "grid.lengths": _list(_real),
    "grid.boundary": Boundary.parse,
    "material.mu": _real,
    "material.lambda": _real,
    "material.pressure_a": _real,
    "material.pressure_gamma": _real,
    "stepper.scheme": lambda s: Scheme(s.lower()),
    "stepper.dt": _real,
    "stepper.cfl": _list(_real),
    "stepper.t_end": _real,
    "stepper.sample_every": _int,
    "initial.type": _choice("equilibrium", "displacement", "random", "mms"),
    "initial.epsilon": _real,
    "initial.velocity_amplitude": _real,
    "initial.modes": _choice("standard", "shear", "compression"),
    "initial.mms_case": str,
    "diagnostics.monitors": _list(str),
    "diagnostics.q": _real,
    "elliptic.realization": lambda s: Realization[s.upper()],
    "elliptic.tolerance": _real,
    "elliptic.max_iterations": _int,
    "mms.grids": _list(_int),
    "mms.expected_order": _real,
    "mms.tolerance": _real,
    "mms.dt_scaling": _choice("h", "h2"),
    "check.tolerance": _real,
    "check.drift_bound": _real,
    "check.evolve": _bool,
    "lame.spectral_tolerance": _real,
    "lame.residual_tolerance": _real,
    "probe.factor": _real,
    "probe.steps": _int,
}


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Parse and validate; raises ``ConfigError`` listing every problem with its line."""
    errors: list[tuple[int | None, str]] = []
    values: dict[str, object] = {}
    where: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append((lineno, f"syntax error: expected 'section.key = value', got {line!r}"))
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            errors.append((lineno, f"unknown key {key!r}"))
            continue
        if key in where:
            errors.append((lineno, f"duplicate key {key!r} (first set on line {where[key]})"))
            continue
        if not value:
            errors.append((lineno, f"empty value for {key!r}"))
            continue
        try:
            values[key] = KEYS[key](value)
        except (ValueError, KeyError) as exc:
            errors.append((lineno, f"{key}: {exc}"))
            continue
        where[key] = lineno
    if "command" in values and "run.command" in values:
        errors.append((where["run.command"], "command given twice"))
    cmd = command or values.get("command") or values.get("run.command")
    if cmd is None:
        errors.append((None, "missing command"))
    elif cmd not in COMMANDS:
        errors.append((None, f"unknown command {cmd!r}"))
    if errors:
        raise ConfigError(errors)
    return _build(cmd, values, where)


def _build(cmd: str, v: dict, where: dict) -> RunConfig:
    errors: list[tuple[int | None, str]] = []

    def err(key, msg):
        errors.append((where.get(key), msg))

    initial = v.get("initial.type", "mms" if cmd == "mms-convergence" else "displacement")
    case = None
    if initial == "mms" or cmd == "mms-convergence":
        name = v.get("initial.mms_case", "smooth2d")
        if name not in CASES:
            err("initial.mms_case", f"unknown manufactured case {name!r}; available: {', '.join(CASES)}")
        else:
            case = get_case(name)

    dim = v.get("grid.dim", case.dim if case else 2)
    if dim not in (2, 3):
        err("grid.dim", f"dim must be 2 or 3, got {dim}")
        dim = 2
    if case is not None and case.dim != dim:
        err("grid.dim", f"manufactured case {case.name!r} is {case.dim}D")
    boundary = v.get("grid.boundary", case.boundary if case else Boundary.PERIODIC)
    cells = v.get("grid.cells") or (v.get("grid.n", 64),) * dim
    lengths = v.get("grid.lengths") or (v.get("grid.length", case.length if case else 2.0 * math.pi),) * dim
    grid = None
    try:
        grid = GridSpec(dim, tuple(cells), tuple(lengths), boundary)
    except ValueError as exc:
        err("grid.cells" if "grid.cells" in v else "grid.n", str(exc))
    if case is not None and boundary is not case.boundary:
        err("grid.boundary", f"manufactured case {case.name!r} needs a {case.boundary.name.lower()} grid")

    base = case.params if case is not None else MaterialParams(mu=0.1, lam=0.1)
    mu = v.get("material.mu", base.mu)
    lam = v.get("material.lambda", base.lam)
    params = base
    if not mu > 0:
        err("material.mu", f"ellipticity violated: µ ≤ 0 (mu = {mu:g})")
    elif not 2 * mu + dim * lam > 0:
        key = "material.lambda" if "material.lambda" in where else "material.mu"
        err(key, f"ellipticity violated: 2µ+{dim}λ ≤ 0 (2*{mu:g}+{dim}*({lam:g}) = {2 * mu + dim * lam:g})")
    else:
        try:
            params = MaterialParams(mu, lam, v.get("material.pressure_a", base.pressure_a),
                                    v.get("material.pressure_gamma", base.pressure_gamma))
        except ValueError as exc:
            err("material.pressure_a", str(exc))

    stepper = None
    cfl = v.get("stepper.cfl")
    if cfl is not None and len(cfl) != 2:
        err("stepper.cfl", "cfl takes two numbers: advective, viscous")
        cfl = None
    default_t = 0.25 if cmd == "mms-convergence" else 1.0
    try:
        stepper = TimeStepperConfig(v.get("stepper.scheme", Scheme.RK4), v.get("stepper.dt"),
                                    tuple(cfl) if cfl else None, v.get("stepper.t_end", default_t),
                                    v.get("stepper.sample_every", 1))
    except ValueError as exc:
        err("stepper.dt" if "stepper.dt" in where else "stepper.t_end", str(exc))

    monitors = tuple(v.get("diagnostics.monitors", RunConfig.monitors))
    for m in monitors:
        if m not in MONITORS:
            err("diagnostics.monitors", f"unknown monitor {m!r}; choose from {', '.join(MONITORS)}")
        elif m in PERIODIC_ONLY and boundary is not Boundary.PERIODIC:
            err("diagnostics.monitors", f"monitor {m!r} needs a periodic grid")
    q = v.get("diagnostics.q", 4.0)
    if not q > 1:
        err("diagnostics.q", f"q must exceed 1, got {q}")

    eps = v.get("initial.epsilon", 1e-2)
    if eps < 0:
        err("initial.epsilon", "epsilon must be non-negative")
    vel = v.get("initial.velocity_amplitude")
    if vel is not None and vel < 0:
        err("initial.velocity_amplitude", "velocity amplitude must be non-negative")

    grids = v.get("mms.grids", (32, 64, 128))
    if cmd == "mms-convergence":
        if len(grids) < 3:
            err("mms.grids", "a convergence study needs at least three grids")
        elif any(b != 2 * a for a, b in zip(grids[:-1], grids[1:])):
            err("mms.grids", "each grid must double the previous one")

    elliptic = None
    if any(k.startswith("elliptic.") for k in v):
        try:
            realization = v.get("elliptic.realization",
                                Realization.SPECTRAL if boundary is Boundary.PERIODIC else Realization.ITERATIVE)
            elliptic = EllipticSolveOptions(v.get("elliptic.tolerance", 1e-10), v.get("elliptic.max_iterations"),
                                            realization)
            if grid is not None:
                elliptic.check_grid(grid)
        except ValueError as exc:
            err("elliptic.realization", str(exc))

    factor = v.get("probe.factor", 10.0)
    if not factor > 0:
        err("probe.factor", "probe factor must be positive")
    if v.get("probe.steps", 1) < 1:
        err("probe.steps", "probe needs at least one step")

    if errors:
        raise ConfigError(errors)
    return RunConfig(
        command=cmd, grid=grid, params=params, stepper=stepper, initial=initial, epsilon=eps,
        velocity_amplitude=vel, modes=v.get("initial.modes", "standard"),
        mms_case=case.name if case else v.get("initial.mms_case", "smooth2d"),
        monitors=monitors, q=q, out=Path(v.get("output.dir", "out")), seed=v.get("run.seed", 0),
        mms_grids=tuple(grids), mms_expected_order=v.get("mms.expected_order", 2.0),
        mms_tolerance=v.get("mms.tolerance", 0.3), mms_dt_scaling=v.get("mms.dt_scaling", "h"),
        check_tolerance=v.get("check.tolerance", 1e-4), check_drift=v.get("check.drift_bound"),
        check_evolve=v.get("check.evolve", False), lame_spectral_tol=v.get("lame.spectral_tolerance", 1e-10),
        lame_residual_tol=v.get("lame.residual_tolerance", 1e-8), probe_factor=factor, probe_steps=v.get("probe.steps", 500),
        elliptic=elliptic,
    )


# --------------------------------------------------------------------------
# orchestration
# --------------------------------------------------------------------------

class _Failure(Exception):
    def __init__(self, code: int, reason: str, **extra):
        super().__init__(reason)
        self.code = code
        self.reason = reason
        self.extra = extra


def _displacement(cfg: RunConfig) -> DisplacementSpec:
    g = cfg.grid
    box = not g.periodic
    if cfg.initial == "random":
        rng = np.random.default_rng(cfg.seed)
        kind = "product" if box else "wave"
        modes, vmodes = [], []
        for _ in range(3):
            k = tuple(int(n) for n in rng.integers(1, 3, size=g.dim))
            coeffs = tuple(float(c) for c in rng.uniform(-1, 1, size=g.dim))
            phase = 0.0 if box else float(rng.uniform(0, 2 * math.pi))
            modes.append(Mode(k, coeffs, phase, kind))
            k = tuple(int(n) for n in rng.integers(1, 3, size=g.dim))
            coeffs = tuple(float(c) for c in rng.uniform(-1, 1, size=g.dim))
            vmodes.append(Mode(k, coeffs, 0.0 if box else float(rng.uniform(0, 2 * math.pi)), kind))
        vel = cfg.epsilon if cfg.velocity_amplitude is None else cfg.velocity_amplitude
        return DisplacementSpec(cfg.epsilon / 3.0, tuple(modes), vel / 3.0, tuple(vmodes))
    if cfg.modes == "standard":
        return standard_displacement(cfg.epsilon, g.dim, cfg.velocity_amplitude, box=box)
    kind = "product" if box else "wave"
    axis = 1 if cfg.modes == "shear" else 0
    k = tuple(1 if j == axis else (1 if box else 0) for j in range(g.dim))
    coeffs = tuple(1.0 if j == 0 else 0.0 for j in range(g.dim))
    vel = 0.0 if cfg.velocity_amplitude is None else cfg.velocity_amplitude
    return DisplacementSpec(cfg.epsilon, (Mode(k, coeffs, kind=kind),), vel, (Mode(k, coeffs, kind=kind),))


def initial_state(cfg: RunConfig) -> FlowState:
    if cfg.initial == "equilibrium":
        return FlowState.equilibrium(cfg.grid)
    if cfg.initial == "mms":
        return get_case(cfg.mms_case).exact_state(cfg.grid, 0.0)
    try:
        return gen_initial_from_displacement(_displacement(cfg), cfg.grid)
    except InvertibilityError as exc:
        raise _Failure(EXIT_CONFIG, str(exc), max_grad=f"{exc.max_grad:.6g}") from exc


def _forcing(cfg: RunConfig):
    if cfg.initial != "mms":
        return None
    return get_case(cfg.mms_case).forcing_on(cfg.grid)


def _write_state(out: Path, s: FlowState) -> None:
    for name, f in (("rho", s.rho), ("u", s.u), ("F", s.F)):
        with open(out / f"{name}.bin", "wb") as fh:
            write_binary(f, fh)


def _run_series(cfg: RunConfig, init: FlowState, stepper: TimeStepperConfig, path: Path):
    """Simulate while streaming records to ``path`` so a partial series survives a crash."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header: list[str] = []

        def on_record(rec):
            if not header:
                header.extend(rec.columns())
                writer.writerow(header)
            writer.writerow([f"{x:.17g}" for x in rec.row()])
            fh.flush()

        return simulate(init, stepper, cfg.params, cfg.monitors, forcing=_forcing(cfg), q=cfg.q,
                        opts=cfg.elliptic, on_record=on_record)


def cmd_simulate(cfg: RunConfig) -> dict:
    init = initial_state(cfg)
    result = _run_series(cfg, init, cfg.stepper, cfg.out / "diagnostics.csv")
    if not result.ok:
        raise _Failure(EXIT_NUMERICAL, result.error, step=result.steps)
    _write_state(cfg.out, result.final)
    return {"steps": result.steps, "t": f"{result.final.t:.17g}"}


_RESIDUAL_COLUMNS = ("det_residual", "piola_residual", "curl_residual", "trace_residual", "q1_residual")


def cmd_check(cfg: RunConfig) -> dict:
    init = initial_state(cfg)
    sigma = initial_sigma(init) if "sigma" in cfg.monitors else None
    rec = compute_diagnostics(init, cfg.params, cfg.monitors, cfg.q, sigma=sigma, opts=cfg.elliptic)
    with open(cfg.out / "check.csv", "w", newline="") as fh:
        write_records_csv([rec], fh)
    worst = max((getattr(rec, c) for c in _RESIDUAL_COLUMNS if getattr(rec, c) is not None), default=0.0)
    info = {"max_residual": f"{worst:.6g}"}
    if worst > cfg.check_tolerance:
        raise _Failure(EXIT_THRESHOLD, "residual above tolerance", **info)
    if cfg.check_evolve:
        result = _run_series(cfg, init, cfg.stepper, cfg.out / "diagnostics.csv")
        if not result.ok:
            raise _Failure(EXIT_NUMERICAL, result.error, step=result.steps)
        if "mass" in cfg.monitors or "rhoF" in cfg.monitors:
            report = check_conserved(result.records, cfg.check_drift)
            if report.mass_drift is not None:
                info["mass_drift"] = f"{report.mass_drift:.6g}"
            if report.rhoF_drift is not None:
                info["rhoF_drift"] = f"{float(np.max(report.rhoF_drift)):.6g}"
            if not report.ok:
                raise _Failure(EXIT_THRESHOLD, "drift above bound", flagged="|".join(report.flagged), **info)
    return info


def cmd_mms(cfg: RunConfig) -> dict:
    report = convergence_study(cfg.mms_case, cfg.mms_grids, cfg.stepper, norms=(2.0, cfg.q),
                               dt_scaling=cfg.mms_dt_scaling, expected_order=cfg.mms_expected_order,
                               order_tolerance=cfg.mms_tolerance)
    with open(cfg.out / "convergence.csv", "w", newline="") as fh:
        report.write_csv(fh)
    (cfg.out / "summary.txt").write_text(report.summary() + "\n")
    orders = {f"order_{f}": "|".join(f"{o:.4f}" for o in report.orders(f, 2.0)) for f in ("rho", "u", "F")}
    if report.failure:
        raise _Failure(EXIT_NUMERICAL, report.failure, **orders)
    if not report.passed:
        raise _Failure(EXIT_THRESHOLD, "observed order outside tolerance", **orders)
    return orders


def lame_oracles(grid: GridSpec, params: MaterialParams, opts: EllipticSolveOptions | None = None) -> list[dict]:
    """Single-mode Lamé problems with known answers, plus an operator-residual check."""
    rows = []
    x = grid.coords()
    mu, lam = params.mu, params.lam
    d = grid.dim
    if grid.periodic:
        spectral = EllipticSolveOptions(realization=Realization.SPECTRAL)
        k1 = 2.0 * math.pi / grid.lengths[0]
        k2 = 2.0 * math.pi / grid.lengths[1]
        cases = [
            ("longitudinal", 0, np.sin(k1 * x[0]), 1.0 / ((2.0 * mu + lam) * k1 * k1)),
            ("transverse", 0, np.sin(k2 * x[1]), 1.0 / (mu * k2 * k2)),
        ]
        for name, comp, profile, coef in cases:
            f = np.zeros((d,) + grid.shape)
            f[comp] = profile
            w = lame_solve(VectorField(grid, f), params, spectral).values
            err = float(np.max(np.abs(w - coef * f)))
            rows.append({"case": name, "realization": "spectral", "metric": "max_error", "value": err})
    it_opts = opts if opts is not None and opts.realization is Realization.ITERATIVE else \
        EllipticSolveOptions(tolerance=1e-11, realization=Realization.ITERATIVE)
    # mean-zero on the torus, vanishing on the faces of a box
    base = 2.0 * math.pi if grid.periodic else math.pi
    prod = np.ones(grid.shape)
    for k in range(d):
        prod = prod * np.sin(base * x[k] / grid.lengths[k])
    f = np.zeros((d,) + grid.shape)
    f[0] = prod
    if d > 1:
        f[1] = 0.5 * prod
    fv = VectorField(grid, f)
    w = lame_solve(fv, params, it_opts)
    back = lame_apply(w, params, Realization.ITERATIVE).values
    interior = ~grid.boundary_mask()
    diff = np.where(interior, back - f, 0.0)
    res = lq_norm(VectorField(grid, diff), 2) / lq_norm(fv, 2)
    rows.append({"case": "operator_residual", "realization": "iterative", "metric": "relative_residual",
                 "value": float(res)})
    return rows


def cmd_lame(cfg: RunConfig) -> dict:
    rows = lame_oracles(cfg.grid, cfg.params, cfg.elliptic)
    with open(cfg.out / "lame.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "realization", "metric", "value"])
        for r in rows:
            w.writerow([r["case"], r["realization"], r["metric"], f"{r['value']:.17g}"])
    info = {r["case"]: f"{r['value']:.3e}" for r in rows}
    for r in rows:
        tol = cfg.lame_spectral_tol if r["realization"] == "spectral" else cfg.lame_residual_tol
        if not r["value"] <= tol:
            raise _Failure(EXIT_THRESHOLD, f"{r['case']} above tolerance", **info)
    return info


def cmd_probe(cfg: RunConfig) -> dict:
    """Run ``probe_steps`` fixed steps at ``probe_factor`` times the CFL step of the initial data."""
    init = initial_state(cfg)
    cfl = cfg.stepper.cfl or (0.5, 0.25)
    base = stable_dt(cfg.grid, init.rho.values, init.u.values, cfg.params, cfl, cfg.stepper.scheme)
    dt = cfg.probe_factor * base
    stepper = TimeStepperConfig(cfg.stepper.scheme, dt=dt, t_end=cfg.probe_steps * dt,
                                sample_every=cfg.stepper.sample_every)
    result = _run_series(cfg, init, stepper, cfg.out / "diagnostics.csv")
    info = {"dt": f"{dt:.6g}", "cfl_dt": f"{base:.6g}", "steps": result.steps}
    if not result.ok:
        raise _Failure(EXIT_NUMERICAL, f"instability detected: {result.error}", **info)
    return info


HANDLERS = {
    "simulate": cmd_simulate,
    "check-invariants": cmd_check,
    "mms-convergence": cmd_mms,
    "lame-test": cmd_lame,
    "stability-probe": cmd_probe,
}


def _report(stream, status: str, code: int, reason: str | None = None, **extra) -> None:
    parts = [f"status={status}", f"code={code}"]
    if reason is not None:
        parts.append(f"reason={_quote(reason)}")
    parts.extend(f"{k}={_quote(str(v))}" for k, v in extra.items())
    print(" ".join(parts), file=stream)


def _quote(text: str) -> str:
    text = text.replace("\n", " ")
    return f'"{text}"' if (" " in text or "=" in text) else text


def run(cfg: RunConfig, stderr=None) -> int:
    stderr = stderr or sys.stderr
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
        HANDLERS[cfg.command](cfg)
    except _Failure as f:
        _report(stderr, "fail", f.code, f.reason, command=cfg.command, **f.extra)
        return f.code
    except (ConvergenceError, FloatingPointError, NonPhysicalStateError) as exc:
        _report(stderr, "fail", EXIT_NUMERICAL, f"{type(exc).__name__}: {exc}", command=cfg.command)
        return EXIT_NUMERICAL
    except ValueError as exc:
        _report(stderr, "fail", EXIT_CONFIG, str(exc), command=cfg.command)
        return EXIT_CONFIG
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="vflab", description="Compressible viscoelastic flow lab")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        _report(sys.stderr, "fail", EXIT_CONFIG, f"cannot read config: {exc}")
        return EXIT_CONFIG
    try:
        cfg = parse_config(text, args.command)
    except ConfigError as exc:
        for e in exc.errors:
            _report(sys.stderr, "fail", EXIT_CONFIG, _fmt_err(e))
        return EXIT_CONFIG
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
