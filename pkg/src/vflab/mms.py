"""Manufactured solutions and grid-convergence studies.

Each case fixes closed-form ``(rho*, u*, F*)(x, t)``; sympy derives the
residual of the full system at those fields, and adding that residual as a
forcing makes them an exact solution of the continuum problem.  The discrete
error at the final time then measures truncation error only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence, TextIO

import numpy as np
import sympy as sp

from . import _kernels
from .dynamics import FlowState, Forcing, MaterialParams, TimeStepperConfig, simulate
from .fields import Boundary, GridSpec, lq_norm_array

FIELDS = ("rho", "u", "F")


def _grad_div_sym(u, X):
    d = len(X)
    divu = sum(sp.diff(u[k], X[k]) for k in range(d))
    return [sp.diff(divu, X[i]) for i in range(d)]


@dataclass(frozen=True)
class ManufacturedCase:
    """Closed-form space-time fields on a periodic or no-slip box.

    The builder returns sympy expressions ``(rho, u, F)`` in the coordinate
    symbols ``x1..xd`` and ``t``.
    """

    name: str
    dim: int
    builder: Callable[[tuple[sp.Symbol, ...], sp.Symbol], tuple]
    length: float = 2.0 * math.pi
    boundary: Boundary = Boundary.PERIODIC
    params: MaterialParams = field(default_factory=lambda: MaterialParams(mu=0.5, lam=0.25))
    rho_min: float = 0.5

    @cached_property
    def _symbols(self):
        X = sp.symbols(" ".join(f"x{k + 1}" for k in range(self.dim)), real=True)
        t = sp.Symbol("t", real=True)
        return X, t

    @cached_property
    def exact_expr(self):
        X, t = self._symbols
        rho, u, F = self.builder(X, t)
        return sp.sympify(rho), [sp.sympify(c) for c in u], sp.Matrix(F)

    @cached_property
    def forcing_expr(self):
        """Residuals ``(g_rho, g_u, g_F)`` of the velocity-form full system."""
        X, t = self._symbols
        rho, u, F = self.exact_expr
        d, p = self.dim, self.params
        a, gam = sp.Float(p.pressure_a), sp.Float(p.pressure_gamma)
        mu, lam = sp.Float(p.mu), sp.Float(p.lam)

        g_rho = sp.diff(rho, t) + sum(sp.diff(rho * u[k], X[k]) for k in range(d))

        P = a * rho ** gam
        S = rho * F * F.T
        gd = _grad_div_sym(u, X)
        g_u = []
        for i in range(d):
            visc = mu * sum(sp.diff(u[i], X[k], 2) for k in range(d)) + (mu + lam) * gd[i]
            elastic = sum(sp.diff(S[i, j], X[j]) for j in range(d))
            adv = sum(u[k] * sp.diff(u[i], X[k]) for k in range(d))
            g_u.append(sp.diff(u[i], t) + adv - (visc - sp.diff(P, X[i]) + elastic) / rho)

        g_F = sp.zeros(d, d)
        for i in range(d):
            for j in range(d):
                adv = sum(u[k] * sp.diff(F[i, j], X[k]) for k in range(d))
                stretch = sum(sp.diff(u[i], X[k]) * F[k, j] for k in range(d))
                g_F[i, j] = sp.diff(F[i, j], t) + adv - stretch
        return g_rho, g_u, g_F

    @cached_property
    def zero_forcing(self) -> bool:
        g_rho, g_u, g_F = self.forcing_expr
        return all(sp.simplify(e) == 0 for e in [g_rho, *g_u, *list(g_F)])

    @cached_property
    def _exact_fn(self):
        X, t = self._symbols
        rho, u, F = self.exact_expr
        return sp.lambdify((X, t), [rho, u, F.tolist()], "numpy")

    @cached_property
    def _forcing_fn(self):
        X, t = self._symbols
        g_rho, g_u, g_F = self.forcing_expr
        return sp.lambdify((X, t), [g_rho, g_u, g_F.tolist()], "numpy", cse=True)

    @cached_property
    def _forcing_kernel(self):
        """Compiled point loop writing all forcing components into ``out[m, N]``."""
        X, t = self._symbols
        g_rho, g_u, g_F = self.forcing_expr
        exprs = [g_rho, *g_u, *sum(g_F.tolist(), [])]
        point = _kernels.numba.njit(sp.lambdify((*X, t), tuple(exprs), "math", cse=True))
        args = ", ".join(f"X[{k}, p]" for k in range(self.dim))
        body = "\n".join(f"        out[{m}, p] = v[{m}]" for m in range(len(exprs)))
        src = (f"def kernel(X, t, out):\n    for p in prange(X.shape[1]):\n"
               f"        v = point({args}, t)\n{body}\n")
        scope = {"point": point, "prange": _kernels.numba.prange}
        exec(src, scope)
        return _kernels.numba.njit(parallel=True)(scope["kernel"]), len(exprs)

    def _pack(self, raw, x: np.ndarray):
        shape = np.shape(x)[1:]
        d = self.dim
        r = np.broadcast_to(np.asarray(raw[0], dtype=np.float64), shape).copy()
        u = np.stack([np.broadcast_to(np.asarray(c, dtype=np.float64), shape) for c in raw[1]])
        F = np.stack([np.stack([np.broadcast_to(np.asarray(raw[2][i][j], dtype=np.float64), shape)
                                for j in range(d)]) for i in range(d)])
        return r, u, F

    def exact(self, x: np.ndarray, t: float):
        """``(rho*, u*, F*)`` at points ``x`` of shape ``(d, ...)``."""
        return self._pack(self._exact_fn(tuple(x), t), x)

    def exact_state(self, grid: GridSpec, t: float = 0.0) -> FlowState:
        rho, u, F = self.exact(np.stack(grid.coords()), t)
        return FlowState.from_arrays(grid, rho, u, F, t)

    def grid(self, n: int) -> GridSpec:
        return GridSpec.uniform(self.dim, n, self.length, self.boundary)

    def forcing_on(self, grid: GridSpec) -> Forcing | None:
        """Forcing callable for ``simulate``; ``None`` when the residual vanishes identically."""
        if self.zero_forcing:
            return None
        x = np.stack(grid.coords())

        def forcing(t: float):
            return mms_forcing(self, x, t)

        return forcing


def mms_forcing(case: ManufacturedCase, x: np.ndarray, t: float):
    """Closed-form ``(g_rho, g_u, g_F)`` at points ``x`` (shape ``(d, ...)``)."""
    x = np.asarray(x, dtype=np.float64)
    if _kernels.backend() != "numba":
        return case._pack(case._forcing_fn(tuple(x), t), x)
    kernel, m = case._forcing_kernel
    d, shape = case.dim, x.shape[1:]
    out = np.empty((m, math.prod(shape)))
    kernel(np.ascontiguousarray(x.reshape(d, -1)), float(t), out)
    out = out.reshape((m,) + shape)
    return out[0], out[1:1 + d], out[1 + d:].reshape((d, d) + shape)


# --------------------------------------------------------------------------
# case library
# --------------------------------------------------------------------------

def _equilibrium(X, t):
    d = len(X)
    return 1, [0] * d, sp.eye(d)


def _steady_stretch(eps):
    def build(X, t):
        d = len(X)
        F = sp.eye(d)
        F[0, 0] = 1 + eps * sp.sin(X[0])
        return 1, [0] * d, F
    return build


def _oscillating_shear(eps):
    def build(X, t):
        d = len(X)
        u = [0] * d
        u[1] = eps * sp.sin(t) * sp.sin(X[0])
        return 1, u, sp.eye(d)
    return build


def _smooth2d(X, t):
    x, y = X
    rho = 1 + sp.Rational(1, 5) * sp.sin(x - t) * sp.cos(y)
    u = [sp.Rational(3, 10) * sp.sin(y) * sp.cos(t) + sp.Rational(1, 10) * sp.cos(x),
         sp.Rational(1, 5) * sp.cos(x + y) * sp.cos(t)]
    F = sp.Matrix([[1 + sp.Rational(1, 10) * sp.sin(y - t), sp.Rational(1, 10) * sp.cos(x)],
                   [sp.Rational(1, 10) * sp.sin(x + y), 1 + sp.Rational(1, 10) * sp.cos(y) * sp.cos(t)]])
    return rho, u, F


def _smooth3d(X, t):
    x, y, z = X
    c = sp.Rational(1, 10)
    rho = 1 + sp.Rational(1, 5) * sp.sin(x - t) * sp.cos(y + z)
    u = [3 * c * sp.sin(y) * sp.cos(t) + c * sp.cos(z),
         2 * c * sp.cos(x + z) * sp.cos(t),
         2 * c * sp.sin(x - y) * sp.sin(t + 1)]
    F = sp.Matrix([[1 + c * sp.sin(y - t), c * sp.cos(x), c * sp.sin(z)],
                   [c * sp.sin(x + y), 1 + c * sp.cos(z) * sp.cos(t), 0],
                   [c * sp.cos(y + z), c * sp.sin(x), 1 + c * sp.sin(x + t)]])
    return rho, u, F


def _smooth2d_box(X, t):
    x, y = X
    pi = sp.pi
    bump = sp.sin(pi * x) * sp.sin(pi * y)
    rho = 1 + sp.Rational(1, 5) * sp.cos(pi * x) * sp.sin(pi * y + t)
    u = [sp.Rational(3, 10) * bump * sp.cos(t), sp.Rational(1, 5) * bump * sp.sin(pi * x) * sp.cos(2 * t)]
    F = sp.Matrix([[1 + sp.Rational(1, 10) * sp.cos(pi * y - t), sp.Rational(1, 10) * sp.sin(pi * x)],
                   [sp.Rational(1, 10) * sp.cos(pi * (x + y)), 1 + sp.Rational(1, 10) * sp.sin(pi * y) * sp.cos(t)]])
    return rho, u, F


def _library() -> dict[str, ManufacturedCase]:
    box = MaterialParams(mu=0.05, lam=0.025)
    cases = [
        ManufacturedCase("equilibrium", 2, _equilibrium),
        ManufacturedCase("equilibrium3d", 3, _equilibrium),
        ManufacturedCase("steady_stretch", 2, _steady_stretch(sp.Rational(1, 100))),
        ManufacturedCase("oscillating_shear", 2, _oscillating_shear(sp.Rational(1, 100))),
        ManufacturedCase("smooth2d", 2, _smooth2d),
        ManufacturedCase("smooth3d", 3, _smooth3d),
        ManufacturedCase("smooth2d_box", 2, _smooth2d_box, length=1.0, boundary=Boundary.NOSLIP, params=box),
    ]
    return {c.name: c for c in cases}


CASES = _library()


def get_case(name: str) -> ManufacturedCase:
    try:
        return CASES[name]
    except KeyError:
        raise KeyError(f"unknown manufactured case {name!r}; available: {', '.join(CASES)}") from None


# --------------------------------------------------------------------------
# convergence study
# --------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    case: str
    grids: list[int]
    norms: tuple[float, ...]
    errors: dict[tuple[str, float], list[float]]
    expected_order: float = 2.0
    order_tolerance: float = 0.3
    zero_error: float = 1e-13
    failure: str | None = None

    def orders(self, fld: str, norm: float) -> list[float]:
        e = self.errors[(fld, norm)]
        out = []
        for coarse, fine in zip(e[:-1], e[1:]):
            out.append(math.log2(coarse / fine) if fine > 0 and coarse > 0 else math.nan)
        return out

    @property
    def exact(self) -> bool:
        """Errors at round-off on every grid; orders are then meaningless."""
        return all(max(v) <= self.zero_error for v in self.errors.values())

    @property
    def monotone(self) -> bool:
        return all(all(b < a for a, b in zip(v[:-1], v[1:])) for v in self.errors.values())

    def field_passes(self, fld: str, norm: float = 2.0) -> bool:
        e = self.errors[(fld, norm)]
        if max(e) <= self.zero_error:
            return True
        if not all(b < a for a, b in zip(e[:-1], e[1:])):
            return False
        return all(abs(o - self.expected_order) <= self.order_tolerance for o in self.orders(fld, norm))

    @property
    def passed(self) -> bool:
        if self.failure is not None:
            return False
        return all(self.field_passes(f, 2.0) for f in FIELDS)

    def write_csv(self, out: TextIO) -> None:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["grid", "field", "norm", "error", "order"])
        for fld in FIELDS:
            for norm in self.norms:
                e = self.errors[(fld, norm)]
                orders = [math.nan] + self.orders(fld, norm)
                for n, err, o in zip(self.grids, e, orders):
                    w.writerow([n, fld, _norm_label(norm), f"{err:.17g}", f"{o:.17g}"])

    def summary(self) -> str:
        lines = [f"case {self.case}: grids {self.grids}"]
        if self.failure:
            lines.append(f"  run failed: {self.failure}")
        for fld in FIELDS:
            for norm in self.norms:
                e = self.errors[(fld, norm)]
                orders = " ".join(f"{o:.3f}" for o in self.orders(fld, norm))
                lines.append(f"  {fld:3s} L{_norm_label(norm):3s} errors {' '.join(f'{v:.3e}' for v in e)}"
                             f"  orders {orders}")
        if self.exact:
            lines.append("  errors at round-off on every grid")
        lines.append(f"  expected order {self.expected_order} +/- {self.order_tolerance}: "
                     f"{'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _norm_label(q: float) -> str:
    return "inf" if math.isinf(q) else f"{q:g}"


def field_errors(case: ManufacturedCase, state: FlowState, norms: Sequence[float]) -> dict[tuple[str, float], float]:
    g = state.grid
    exact = case.exact(np.stack(g.coords()), state.t)
    out = {}
    for fld, num, ex in zip(FIELDS, state.arrays(), exact):
        for q in norms:
            out[(fld, q)] = lq_norm_array(num - ex, g, q)
    return out


def run_case(case: ManufacturedCase, n: int, cfg: TimeStepperConfig):
    """Evolve the exact initial data on an ``n``-cell grid; returns the simulation result."""
    grid = case.grid(n)
    init = case.exact_state(grid, 0.0)
    return simulate(init, cfg, case.params, diagnostics=(), forcing=case.forcing_on(grid))


def convergence_study(case: ManufacturedCase | str, grids: Sequence[int], cfg: TimeStepperConfig,
                      norms: Sequence[float] = (2.0, 4.0), dt_scaling: str = "h",
                      expected_order: float = 2.0, order_tolerance: float = 0.3) -> ConvergenceReport:
    """Errors at ``cfg.t_end`` on successively doubled grids.

    With a fixed ``cfg.dt`` (given for the first grid) the step is scaled by
    ``h`` or ``h^2`` according to ``dt_scaling``; in CFL mode each grid picks
    its own stable step.
    """
    if isinstance(case, str):
        case = get_case(case)
    grids = [int(n) for n in grids]
    if len(grids) < 3:
        raise ValueError("a convergence study needs at least three grids")
    if any(b != 2 * a for a, b in zip(grids[:-1], grids[1:])):
        raise ValueError(f"each grid must double the previous one, got {grids}")
    if dt_scaling not in ("h", "h2"):
        raise ValueError("dt_scaling must be 'h' or 'h2'")
    norms = tuple(float(q) for q in norms)
    if 2.0 not in norms:
        norms = (2.0,) + norms
    errors: dict[tuple[str, float], list[float]] = {(f, q): [] for f in FIELDS for q in norms}
    failure = None
    for level, n in enumerate(grids):
        run_cfg = cfg
        if cfg.dt is not None:
            factor = 2.0 ** (-level if dt_scaling == "h" else -2 * level)
            run_cfg = TimeStepperConfig(cfg.scheme, dt=cfg.dt * factor, t_end=cfg.t_end,
                                        sample_every=10 ** 9)
        else:
            run_cfg = TimeStepperConfig(cfg.scheme, cfl=cfg.cfl, t_end=cfg.t_end, sample_every=10 ** 9)
        result = run_case(case, n, run_cfg)
        if not result.ok:
            failure = f"grid {n}: {result.error}"
            for key in errors:
                errors[key].append(math.nan)
            continue
        for key, v in field_errors(case, result.final, norms).items():
            errors[key].append(v)
    return ConvergenceReport(case.name, grids, norms, errors, expected_order, order_tolerance, failure=failure)
