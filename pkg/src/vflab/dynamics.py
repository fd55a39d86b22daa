"""Right-hand sides, time steppers and the simulation loop.

The full system is advanced in velocity form::

    rho_t = -div(rho u)
    u_t   = [-div(rho u u) + mu Lap u + (mu+lam) grad div u - grad P(rho)
             + div(rho F F^T) - u rho_t] / rho
    F_t   = -(u . grad) F + (grad u) F

and the perturbation form uses ``rho = 1 + r``, ``F = I + E``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .fields import GridSpec, ScalarField, TensorField, VectorField
from .operators import (
    EllipticSolveOptions,
    Realization,
    check_ellipticity,
    div_a,
    grad_a,
    imex_viscous_solve_a,
    viscous_a,
)

Forcing = Callable[[float], tuple[np.ndarray, np.ndarray, np.ndarray]]


class NonPhysicalStateError(ValueError):
    """Density left the admissible range."""

    def __init__(self, message: str, location: tuple[int, ...] | None = None, value: float | None = None):
        super().__init__(message)
        self.location = location
        self.value = value


class NumericalInstabilityError(FloatingPointError):
    def __init__(self, stage: int, t: float, step: int | None = None):
        where = f"stage {stage}" + (f" of step {step}" if step is not None else "")
        super().__init__(f"non-finite values detected at {where} (t = {t:.6g})")
        self.stage = stage
        self.t = t
        self.step = step


@dataclass(frozen=True)
class MaterialParams:
    """Viscosities and the barotropic pressure law ``P(rho) = a rho^gamma``."""

    mu: float = 1.0
    lam: float = 0.5
    pressure_a: float = 1.0
    pressure_gamma: float = 1.4

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.pressure_a > 0:
            raise ValueError("pressure_a must be positive")
        if not self.pressure_gamma >= 1:
            raise ValueError("pressure_gamma must be >= 1")

    def validate(self, dim: int) -> "MaterialParams":
        check_ellipticity(self.mu, self.lam, dim)
        return self

    def pressure(self, rho):
        return self.pressure_a * rho ** self.pressure_gamma

    def dpressure(self, rho):
        return self.pressure_a * self.pressure_gamma * rho ** (self.pressure_gamma - 1.0)


def _check_density(rho: np.ndarray, name: str = "rho") -> None:
    if np.all(rho > 0):
        return
    idx = tuple(int(i) for i in np.unravel_index(np.argmin(rho), rho.shape))
    raise NonPhysicalStateError(f"{name} = {rho[idx]:.6g} <= 0 at node {idx}", idx, float(rho[idx]))


def _check_wall(grid: GridSpec, u: np.ndarray) -> None:
    if grid.periodic:
        return
    wall = np.abs(u[:, grid.boundary_mask()])
    if wall.size and wall.max() > 1e-12:
        raise ValueError(f"no-slip box needs u = 0 on boundary nodes (max |u| = {wall.max():.3e})")


@dataclass(frozen=True, eq=False)
class FlowState:
    rho: ScalarField
    u: VectorField
    F: TensorField
    t: float = 0.0

    def __post_init__(self):
        g = self.rho.grid
        if self.u.grid != g or self.F.grid != g:
            raise ValueError("all fields of a state must share one grid")
        _check_density(self.rho.values)
        _check_wall(g, self.u.values)

    @property
    def grid(self) -> GridSpec:
        return self.rho.grid

    @classmethod
    def from_arrays(cls, grid: GridSpec, rho, u, F, t: float = 0.0) -> "FlowState":
        return cls(ScalarField(grid, rho), VectorField(grid, u), TensorField(grid, F), t)

    @classmethod
    def equilibrium(cls, grid: GridSpec) -> "FlowState":
        d = grid.dim
        eye = np.broadcast_to(np.eye(d).reshape((d, d) + (1,) * d), (d, d) + grid.shape).copy()
        return cls.from_arrays(grid, np.ones(grid.shape), np.zeros((d,) + grid.shape), eye)

    def arrays(self) -> list[np.ndarray]:
        return [self.rho.values, self.u.values, self.F.values]

    def to_perturb(self) -> "PerturbState":
        d = self.grid.dim
        eye = np.eye(d).reshape((d, d) + (1,) * d)
        return PerturbState.from_arrays(self.grid, self.rho.values - 1.0, self.u.values, self.F.values - eye, self.t)


@dataclass(frozen=True, eq=False)
class PerturbState:
    rho_tilde: ScalarField
    u: VectorField
    E: TensorField
    t: float = 0.0

    def __post_init__(self):
        g = self.rho_tilde.grid
        if self.u.grid != g or self.E.grid != g:
            raise ValueError("all fields of a state must share one grid")
        _check_density(1.0 + self.rho_tilde.values, "1 + rho_tilde")
        _check_wall(g, self.u.values)

    @property
    def grid(self) -> GridSpec:
        return self.rho_tilde.grid

    @classmethod
    def from_arrays(cls, grid: GridSpec, rho_tilde, u, E, t: float = 0.0) -> "PerturbState":
        return cls(ScalarField(grid, rho_tilde), VectorField(grid, u), TensorField(grid, E), t)

    def arrays(self) -> list[np.ndarray]:
        return [self.rho_tilde.values, self.u.values, self.E.values]

    def to_full(self) -> FlowState:
        d = self.grid.dim
        eye = np.eye(d).reshape((d, d) + (1,) * d)
        return FlowState.from_arrays(self.grid, 1.0 + self.rho_tilde.values, self.u.values, self.E.values + eye, self.t)


class Scheme(enum.Enum):
    RK4 = "rk4"
    IMEX = "imex"


@dataclass(frozen=True)
class TimeStepperConfig:
    """Stepper controls.  Give a fixed ``dt`` or CFL numbers, not both.

    With neither, CFL mode with ``(0.5, 0.25)`` is used.
    """

    scheme: Scheme = Scheme.RK4
    dt: float | None = None
    cfl: tuple[float, float] | None = None
    t_end: float = 1.0
    sample_every: int = 1
    freeze_velocity: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.dt is not None and self.cfl is not None:
            raise ValueError("give either dt or cfl, not both")
        if self.dt is None and self.cfl is None:
            object.__setattr__(self, "cfl", (0.5, 0.25))
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.cfl is not None and not (self.cfl[0] > 0 and self.cfl[1] > 0):
            raise ValueError("CFL numbers must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.sample_every < 1:
            raise ValueError("sample_every must be a positive integer")


# --------------------------------------------------------------------------
# right-hand sides (array level)
# --------------------------------------------------------------------------

def _outer_rows(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``(A B^T)_ij = sum_k A_ik B_jk``."""
    return _kernels.outer_rows(A, B)


def _transport(F: np.ndarray, u: np.ndarray, gu: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``-(u . grad) F + (grad u) F``."""
    return _kernels.transport(F, u, gu, grad_a(F, grid))


def rhs_full_a(rho, u, F, grid: GridSpec, params: MaterialParams, forcing=None):
    _check_density(rho)
    drho = -div_a(rho * u, grid)
    # convective, pressure and elastic stresses share one divergence
    flux = _kernels.momentum_flux(rho, u, F, params.pressure(rho))
    visc = viscous_a(u, grid, params.mu, params.lam)
    du = (visc - div_a(flux, grid) - u * drho) / rho
    dF = _transport(F, u, grad_a(u, grid), grid)
    if forcing is not None:
        g_rho, g_u, g_F = forcing
        drho = drho + g_rho
        du = du + g_u
        dF = dF + g_F
    return drho, du, dF


def rhs_perturb_a(r, u, E, grid: GridSpec, params: MaterialParams, forcing=None):
    rho = 1.0 + r
    _check_density(rho, "1 + rho_tilde")
    dr = -div_a(r * u, grid) - div_a(u, grid)
    conv = div_a((rho * u)[:, None] * u[None, :], grid)
    visc = viscous_a(u, grid, params.mu, params.lam)
    gp = grad_a(params.pressure(rho), grid)
    Et = np.swapaxes(E, 0, 1)
    elastic = grad_a(r, grid) + div_a(rho * (E + Et + _outer_rows(E, E)), grid)
    du = (-conv + visc - gp + elastic - u * dr) / rho
    gu = grad_a(u, grid)
    dE = _transport(E, u, gu, grid) + gu
    if forcing is not None:
        g_r, g_u, g_E = forcing
        dr = dr + g_r
        du = du + g_u
        dE = dE + g_E
    return dr, du, dE


def rhs_full(s: FlowState, params: MaterialParams, forcing=None):
    """Time derivatives ``(d rho, d u, d F)`` of the full system as fields."""
    g = s.grid
    drho, du, dF = rhs_full_a(*s.arrays(), g, params, forcing)
    return ScalarField(g, drho), VectorField(g, du), TensorField(g, dF)


def rhs_perturb(s: PerturbState, params: MaterialParams, forcing=None):
    g = s.grid
    dr, du, dE = rhs_perturb_a(*s.arrays(), g, params, forcing)
    return ScalarField(g, dr), VectorField(g, du), TensorField(g, dE)


def sigma_rhs_a(u: np.ndarray, sigma: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``-grad(u . sigma) - grad div u`` for ``sigma = grad ln rho``."""
    return -grad_a(np.sum(u * sigma, axis=0) + div_a(u, grid), grid)


# --------------------------------------------------------------------------
# steppers
# --------------------------------------------------------------------------

def stable_dt(grid: GridSpec, rho: np.ndarray, u: np.ndarray, params: MaterialParams,
              cfl: tuple[float, float], scheme: Scheme = Scheme.RK4) -> float:
    """``min(c_adv h / (max|u| + c_s), c_visc h^2 / (2 mu + lam))``; IMEX drops the second."""
    h = min(grid.spacing)
    umax = float(np.sqrt(np.max(np.sum(u * u, axis=0))))
    cs = math.sqrt(params.dpressure(float(np.max(rho))))
    dt = cfl[0] * h / (umax + cs)
    if Scheme(scheme) is Scheme.RK4:
        dt = min(dt, cfl[1] * h * h / (2.0 * params.mu + params.lam))
    return dt


# ARS(2,3,3) tableau
_G = (3.0 + math.sqrt(3.0)) / 6.0
_AE = ((0.0, 0.0, 0.0), (_G, 0.0, 0.0), (_G - 1.0, 2.0 * (1.0 - _G), 0.0))
_AI = ((0.0, 0.0, 0.0), (0.0, _G, 0.0), (0.0, 1.0 - 2.0 * _G, _G))
_B = (0.0, 0.5, 0.5)


class System:
    """Semi-discrete system ``y' = f(t, y)`` with ``y = [rho, u, F(, sigma)]``.

    ``perturb=True`` switches the first and third slots to ``rho_tilde`` and
    ``E`` and assembles the perturbation right-hand side.
    """

    def __init__(self, grid: GridSpec, params: MaterialParams, forcing: Forcing | None = None,
                 freeze_velocity: bool = False, perturb: bool = False, with_sigma: bool = False,
                 opts: EllipticSolveOptions | None = None):
        params.validate(grid.dim)
        self.grid = grid
        self.params = params
        self.forcing = forcing
        self.freeze_velocity = freeze_velocity
        self.perturb = perturb
        self.with_sigma = with_sigma
        self.wall = None if grid.periodic else grid.boundary_mask()
        if opts is None:
            opts = EllipticSolveOptions(realization=Realization.SPECTRAL if grid.periodic else Realization.ITERATIVE)
        self.opts = opts

    def rho_of(self, y) -> np.ndarray:
        return 1.0 + y[0] if self.perturb else y[0]

    def rhs(self, t: float, y: Sequence[np.ndarray]) -> list[np.ndarray]:
        g = self.grid
        forcing = self.forcing(t) if self.forcing is not None else None
        fn = rhs_perturb_a if self.perturb else rhs_full_a
        d0, du, d2 = fn(y[0], y[1], y[2], g, self.params, forcing)
        if self.freeze_velocity:
            du = np.zeros_like(du)
        elif self.wall is not None:
            du[:, self.wall] = 0.0
        out = [d0, du, d2]
        if self.with_sigma:
            out.append(sigma_rhs_a(y[1], y[3], g))
        return out

    def viscous(self, u: np.ndarray) -> np.ndarray:
        v = viscous_a(u, self.grid, self.params.mu, self.params.lam)
        if self.wall is not None:
            v[:, self.wall] = 0.0
        return v

    def explicit(self, t: float, y) -> list[np.ndarray]:
        k = self.rhs(t, y)
        if not self.freeze_velocity:
            k[1] = k[1] - self.viscous(y[1])
        return k

    def implicit_solve(self, rhs_u: np.ndarray, coef: float) -> np.ndarray:
        """Solve ``(I - coef V) u = rhs_u`` with ``V`` the viscous stencil."""
        if self.freeze_velocity:
            return rhs_u
        u = imex_viscous_solve_a(rhs_u, self.grid, coef, self.params.mu, self.params.lam, self.opts, "discrete")
        if self.wall is not None:
            u[:, self.wall] = 0.0
        return u


def _finite(ys: Iterable[np.ndarray]) -> bool:
    # a single NaN or inf poisons the sum, which avoids a full boolean temporary
    return all(math.isfinite(float(np.sum(a))) for a in ys)


def _axpy(y, ks, coefs, dt):
    out = []
    for idx, base in enumerate(y):
        acc = base
        for c, k in zip(coefs, ks):
            if c != 0.0:
                acc = acc + (dt * c) * k[idx]
        out.append(acc)
    return out


def rk4_step(system: System, t: float, y: list[np.ndarray], dt: float, step: int | None = None) -> list[np.ndarray]:
    def stage(i, tt, yy):
        k = system.rhs(tt, yy)
        if not _finite(k):
            raise NumericalInstabilityError(i, tt, step)
        return k

    k1 = stage(1, t, y)
    k2 = stage(2, t + 0.5 * dt, _axpy(y, [k1], [0.5], dt))
    k3 = stage(3, t + 0.5 * dt, _axpy(y, [k2], [0.5], dt))
    k4 = stage(4, t + dt, _axpy(y, [k3], [1.0], dt))
    out = _axpy(y, [k1, k2, k3, k4], [1 / 6, 1 / 3, 1 / 3, 1 / 6], dt)
    if not _finite(out):
        raise NumericalInstabilityError(5, t + dt, step)
    return out


def imex_step(system: System, t: float, y: list[np.ndarray], dt: float, step: int | None = None) -> list[np.ndarray]:
    """One ARS(2,3,3) step: explicit transport/pressure/elastic terms, implicit viscosity."""
    c = (0.0, _G, 1.0 - _G)
    kE: list[list[np.ndarray]] = []
    kI: list[np.ndarray | None] = []
    for s in range(3):
        Y = _axpy(y, kE, _AE[s][:s], dt)
        if s == 0:
            ui = None
        else:
            rhs_u = Y[1]
            for j in range(1, s):
                rhs_u = rhs_u + (dt * _AI[s][j]) * kI[j]
            coef = dt * _AI[s][s]
            ui = system.implicit_solve(rhs_u, coef)
            kI_s = (ui - rhs_u) / coef
            Y[1] = ui
        kI.append(None if s == 0 else kI_s)
        k = system.explicit(t + c[s] * dt, Y)
        if not (_finite(k) and _finite(Y)):
            raise NumericalInstabilityError(s + 1, t + c[s] * dt, step)
        kE.append(k)
    out = _axpy(y, kE, _B, dt)
    for j in (1, 2):
        out[1] = out[1] + (dt * _B[j]) * kI[j]
    if system.wall is not None:
        out[1][:, system.wall] = 0.0
    if not _finite(out):
        raise NumericalInstabilityError(4, t + dt, step)
    return out


def _step(system: System, scheme: Scheme, t: float, y, dt: float, step: int | None = None):
    if scheme is Scheme.RK4:
        return rk4_step(system, t, y, dt, step)
    return imex_step(system, t, y, dt, step)


def _choose_dt(system: System, cfg: TimeStepperConfig, y) -> float:
    if cfg.dt is not None:
        return cfg.dt
    return stable_dt(system.grid, system.rho_of(y), y[1], system.params, cfg.cfl, cfg.scheme)


def advance(s: FlowState | PerturbState, cfg: TimeStepperConfig, params: MaterialParams,
            forcing: Forcing | None = None, dt: float | None = None):
    """Advance a full or perturbation state by one step of size ``dt``.

    ``dt`` defaults to ``cfg.dt`` or, in CFL mode, the stable step of ``s``.
    """
    perturb = isinstance(s, PerturbState)
    system = System(s.grid, params, forcing, cfg.freeze_velocity, perturb)
    y = [a.copy() for a in s.arrays()]
    if dt is None:
        dt = _choose_dt(system, cfg, y)
    y = _step(system, cfg.scheme, s.t, y, dt)
    cls = PerturbState if perturb else FlowState
    return cls.from_arrays(s.grid, y[0], y[1], y[2], s.t + dt)


# --------------------------------------------------------------------------
# simulation loop
# --------------------------------------------------------------------------

@dataclass
class SimulationResult:
    records: list  # list[DiagnosticsRecord]
    final: FlowState
    steps: int
    error: str | None = None
    sigma: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def simulate(init: FlowState, cfg: TimeStepperConfig, params: MaterialParams,
             diagnostics: Sequence[str] = ("intrinsic", "trace", "mass", "rhoF", "norms"),
             forcing: Forcing | None = None, q: float = 4.0,
             opts: EllipticSolveOptions | None = None,
             on_record: Callable | None = None) -> SimulationResult:
    """Run from ``init.t`` to ``init.t + cfg.t_end`` recording diagnostics.

    A record is taken at the start, every ``cfg.sample_every`` steps and at the
    end.  On a numerical failure the partial series is returned with
    ``error`` set.  ``on_record`` is called with each record as it is produced.
    """
    from .compat import compute_diagnostics, initial_sigma, validate_monitors

    grid = init.grid
    monitors = validate_monitors(diagnostics, grid)
    with_sigma = "sigma" in monitors
    system = System(grid, params, forcing, cfg.freeze_velocity, with_sigma=with_sigma, opts=opts)
    y = [a.copy() for a in init.arrays()]
    if with_sigma:
        y.append(initial_sigma(init))

    records = []

    def record(t, yy):
        state = FlowState.from_arrays(grid, yy[0], yy[1], yy[2], t)
        rec = compute_diagnostics(state, params, monitors, q=q, sigma=yy[3] if with_sigma else None, opts=opts)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        return state

    t0 = init.t
    t_stop = t0 + cfg.t_end
    t = t0
    step = 0
    final = record(t, y)
    error = None
    eps_t = 1e-12 * max(1.0, abs(t_stop))
    try:
        while t < t_stop - eps_t:
            dt = min(_choose_dt(system, cfg, y), t_stop - t)
            y = _step(system, cfg.scheme, t, y, dt, step + 1)
            step += 1
            if t_stop - (t + dt) <= eps_t:
                t = t_stop
            elif cfg.dt is not None:
                t = t0 + step * cfg.dt
            else:
                t = t + dt
            final = record(t, y) if (step % cfg.sample_every == 0 or t == t_stop) else None
    except (NumericalInstabilityError, NonPhysicalStateError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        final = None
    if final is None:
        try:
            final = FlowState.from_arrays(grid, y[0], y[1], y[2], t)
        except (ValueError, FloatingPointError):
            final = None
    return SimulationResult(records, final, step, error, y[3] if with_sigma else None)
