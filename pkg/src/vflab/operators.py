"""Discrete differential operators and elliptic solvers.

Index conventions are fixed throughout the package:

* ``(grad u)[i, j] = d u_i / d x_j`` (derivative index last),
* ``(div T)[i] = sum_j d T[i, j] / d x_j`` (contraction over the last index).

Axes are 0-based: axis 0 is ``x_1``.  Array helpers (``dx``, ``grad_a`` ...)
take raw arrays whose trailing ``dim`` axes are spatial; the public functions
take and return :class:`~vflab.fields.Field` objects.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Callable

import numpy as np

from . import _kernels
from .fields import Field, GridSpec, ScalarField, VectorField, integrate, lq_norm, make_field

if TYPE_CHECKING:
    from .dynamics import MaterialParams


class RankError(ValueError):
    """Operator applied to a field of the wrong rank."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual_history: list[float]):
        super().__init__(f"{message} (final relative residual {residual_history[-1]:.3e})")
        self.residual_history = residual_history

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1]


class Realization(enum.Enum):
    SPECTRAL = "spectral"
    ITERATIVE = "iterative"


@dataclass(frozen=True)
class EllipticSolveOptions:
    tolerance: float = 1e-10
    max_iterations: int | None = None  # None: 10 x number of unknowns
    realization: Realization = Realization.SPECTRAL

    def __post_init__(self):
        if not 0 < self.tolerance <= 1e-2:
            raise ValueError(f"tolerance must lie in (0, 1e-2], got {self.tolerance}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")

    def check_grid(self, grid: GridSpec) -> None:
        if self.realization is Realization.SPECTRAL and not grid.periodic:
            raise ValueError("spectral realization requires a periodic grid")


def default_options(grid: GridSpec) -> EllipticSolveOptions:
    return EllipticSolveOptions(realization=Realization.SPECTRAL if grid.periodic else Realization.ITERATIVE)


# --------------------------------------------------------------------------
# array-level stencils
# --------------------------------------------------------------------------

def dx(a: np.ndarray, grid: GridSpec, k: int) -> np.ndarray:
    """Central first derivative along spatial axis ``k``."""
    return _kernels.d1(a, a.ndim - grid.dim + k, grid.spacing[k], grid.periodic)


def dxx(a: np.ndarray, grid: GridSpec, k: int) -> np.ndarray:
    """Compact second derivative along spatial axis ``k``."""
    return _kernels.d2(a, a.ndim - grid.dim + k, grid.spacing[k], grid.periodic)


def grad_a(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Gradient with the derivative index placed after the component indices."""
    return _kernels.grad(a, a.ndim - grid.dim, grid.spacing, grid.periodic)


def div_a(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Contract the last component index of ``a`` with the derivative."""
    ax = a.ndim - grid.dim - 1
    if ax < 0:
        raise RankError("divergence needs a vector or tensor field")
    out = dx(np.take(a, 0, axis=ax), grid, 0)
    for k in range(1, grid.dim):
        out = out + dx(np.take(a, k, axis=ax), grid, k)
    return out


def lap_a(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    out = dxx(a, grid, 0)
    for k in range(1, grid.dim):
        out = out + dxx(a, grid, k)
    return out


def grad_div_a(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``grad(div u)`` with compact stencils on the diagonal terms.

    The wide ``dx(dx(.))`` form would decouple odd and even nodes; mixing the
    compact ``d_ii`` with central ``d_i d_j`` keeps the operator definite.
    """
    d = grid.dim
    first = [dx(u[j], grid, j) for j in range(d)]
    out = np.empty_like(u)
    for i in range(d):
        # d_i of the off-diagonal part of the divergence
        rest = sum(first[j] for j in range(d) if j != i)
        out[i] = dxx(u[i], grid, i) + dx(rest, grid, i)
    return out


def curl_a(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    d = grid.dim
    if d == 2:
        return dx(u[1], grid, 0) - dx(u[0], grid, 1)
    return np.stack([
        dx(u[2], grid, 1) - dx(u[1], grid, 2),
        dx(u[0], grid, 2) - dx(u[2], grid, 0),
        dx(u[1], grid, 0) - dx(u[0], grid, 1),
    ])


# --------------------------------------------------------------------------
# field-level operators
# --------------------------------------------------------------------------

class DiffOp(enum.Enum):
    GRAD = "grad"
    DIV_VEC = "div_vec"
    DIV_TENSOR = "div_tensor"
    CURL = "curl"
    LAPLACIAN = "laplacian"


def grad(f: Field) -> Field:
    if f.rank > 1:
        raise RankError("gradient of a tensor field is not a field type here; use grad_a")
    return make_field(f.grid, grad_a(f.values, f.grid))


def div(f: Field) -> Field:
    if f.rank == 0:
        raise RankError("divergence of a scalar field")
    return make_field(f.grid, div_a(f.values, f.grid))


def curl(f: Field) -> Field:
    """Curl of a vector field; row-wise curl of a tensor field."""
    g = f.grid
    if f.rank == 1:
        return make_field(g, curl_a(f.values, g))
    if f.rank == 2:
        return make_field(g, np.stack([curl_a(row, g) for row in f.values]))
    raise RankError("curl needs a vector or tensor field")


def laplacian(f: Field) -> Field:
    return make_field(f.grid, lap_a(f.values, f.grid))


def diff_ops(f: Field, which: DiffOp | str) -> Field:
    which = DiffOp(which)
    if which is DiffOp.GRAD:
        return grad(f)
    if which is DiffOp.DIV_VEC:
        if f.rank != 1:
            raise RankError(f"DivVec needs a vector field, got rank {f.rank}")
        return div(f)
    if which is DiffOp.DIV_TENSOR:
        if f.rank != 2:
            raise RankError(f"DivTensor needs a tensor field, got rank {f.rank}")
        return div(f)
    if which is DiffOp.CURL:
        return curl(f)
    return laplacian(f)


# --------------------------------------------------------------------------
# spectral machinery (periodic grids)
# --------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _wavenumbers(grid: GridSpec) -> tuple[np.ndarray, ...]:
    ks = [2.0 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(grid.cells, grid.spacing)]
    return tuple(np.meshgrid(*ks, indexing="ij"))


@lru_cache(maxsize=32)
def _odd_wavenumbers(grid: GridSpec) -> tuple[np.ndarray, ...]:
    """Wavenumbers with the Nyquist entry zeroed, for products of first derivatives.

    On an even grid the Nyquist mode is its own conjugate partner, so a symbol
    odd in one ``k_i`` would not map real data to real data.
    """
    out = []
    for kk, n in zip(_wavenumbers(grid), grid.cells):
        kk = kk.copy()
        if n % 2 == 0:
            kk[np.isclose(np.abs(kk), np.abs(kk).max())] = 0.0
        out.append(kk)
    return tuple(out)


def _mixed_symbol(grid: GridSpec, i: int, j: int) -> np.ndarray:
    """Fourier symbol of ``-d_i d_j``: ``k_i^2`` on the diagonal, Nyquist-safe off it."""
    if i == j:
        return _wavenumbers(grid)[i] ** 2
    k = _odd_wavenumbers(grid)
    return k[i] * k[j]


@lru_cache(maxsize=32)
def _discrete_symbols(grid: GridSpec) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    """Fourier symbols of the stencils: ``-a_k`` for dxx and ``i s_k`` for dx."""
    k = _wavenumbers(grid)
    a = tuple(4.0 * np.sin(0.5 * kk * h) ** 2 / h**2 for kk, h in zip(k, grid.spacing))
    s = tuple(np.sin(kk * h) / h for kk, h in zip(k, grid.spacing))
    return a, s


def _fft(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.fft.fftn(a, axes=tuple(range(a.ndim - grid.dim, a.ndim)))


def _ifft(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.fft.ifftn(a, axes=tuple(range(a.ndim - grid.dim, a.ndim))).real


def _mean_zero_check(f: Field) -> None:
    rms = lq_norm(f, 2) / math.sqrt(f.grid.volume)
    mean = float(np.max(np.abs(np.atleast_1d(integrate(f))))) / f.grid.volume
    if mean > 1e-10 * rms:
        raise ValueError(f"periodic solve needs mean-zero data; mean = {mean:.3e}, rms = {rms:.3e}")


def _require_periodic(grid: GridSpec, what: str) -> None:
    if not grid.periodic:
        raise ValueError(f"{what} is realized on periodic grids only")


def spectral_laplacian(f: Field) -> Field:
    """Laplacian with the exact Fourier symbol ``-|k|^2``; pairs with spectral inverses."""
    _require_periodic(f.grid, "spectral_laplacian")
    k2 = sum(kk * kk for kk in _wavenumbers(f.grid))
    return make_field(f.grid, _ifft(-k2 * _fft(f.values, f.grid), f.grid))


# --------------------------------------------------------------------------
# preconditioned conjugate gradients (matrix free)
# --------------------------------------------------------------------------

def pcg(
    apply: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    diag: np.ndarray | float,
    tol: float,
    max_iter: int,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Jacobi-preconditioned CG for an SPD operator; returns ``(x, residual history)``."""
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    history = [1.0 if bnorm > 0 else 0.0]
    if bnorm == 0.0:
        return x, history
    r = b.copy()
    z = r / diag
    if project is not None:
        z = project(z)
    p = z.copy()
    rz = float(np.vdot(r, z))
    for _ in range(max_iter):
        Ap = apply(p)
        alpha = rz / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        rel = float(np.linalg.norm(r)) / bnorm
        history.append(rel)
        if rel <= tol:
            return x, history
        z = r / diag
        if project is not None:
            z = project(z)
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"PCG did not converge in {max_iter} iterations", history)


def _max_iter(opts: EllipticSolveOptions, n_unknowns: int) -> int:
    return opts.max_iterations if opts.max_iterations is not None else 10 * n_unknowns


def _interior(grid: GridSpec) -> np.ndarray:
    return ~grid.boundary_mask()


def _demean(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    axes = tuple(range(a.ndim - grid.dim, a.ndim))
    return a - a.mean(axis=axes, keepdims=True)


# --------------------------------------------------------------------------
# inverse Laplacian and Riesz operators
# --------------------------------------------------------------------------

def inv_laplacian(f: Field, opts: EllipticSolveOptions | None = None) -> Field:
    """Solve ``Laplacian(g) = f`` component-wise.

    Spectral (periodic): exact symbol, mean-zero result.  Iterative: the
    finite-difference Laplacian; homogeneous Dirichlet data on a no-slip box,
    mean-zero solution on a periodic grid.
    """
    g = f.grid
    opts = opts or default_options(g)
    opts.check_grid(g)
    if g.periodic:
        _mean_zero_check(f)
    if opts.realization is Realization.SPECTRAL:
        k2 = sum(kk * kk for kk in _wavenumbers(g))
        k2[(0,) * g.dim] = 1.0
        fh = _fft(f.values, g)
        gh = -fh / k2
        gh[(Ellipsis,) + (0,) * g.dim] = 0.0
        return make_field(g, _ifft(gh, g))

    diag = sum(2.0 / h**2 for h in g.spacing)
    if g.periodic:
        def apply(x):
            return -lap_a(x, g)

        b = -_demean(f.values, g)
        x, _ = pcg(apply, b, diag, opts.tolerance, _max_iter(opts, b.size), project=lambda z: _demean(z, g))
        return make_field(g, _demean(x, g))

    mask = _interior(g)

    def apply(x):
        return np.where(mask, -lap_a(x, g), 0.0)

    b = np.where(mask, -f.values, 0.0)
    x, _ = pcg(apply, b, diag, opts.tolerance, _max_iter(opts, int(mask.sum()) * f.ncomp))
    return make_field(g, x)


def riesz(i: int, j: int, f: ScalarField) -> ScalarField:
    """``Delta^{-1} d_i d_j f`` on the periodic torus (symbol ``k_i k_j / |k|^2``).

    The zero mode is mapped to zero, so the sum over ``i`` of ``riesz(i, i, f)``
    reproduces ``f`` minus its mean.
    """
    g = f.grid
    _require_periodic(g, "riesz")
    if not (0 <= i < g.dim and 0 <= j < g.dim):
        raise ValueError(f"axes must lie in [0, {g.dim})")
    return make_field(g, riesz_a(i, j, f.values, g))


def riesz_a(i: int, j: int, a: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Array form of :func:`riesz` that acts on leading component axes too."""
    k2 = sum(kk * kk for kk in _wavenumbers(grid))
    k2[(0,) * grid.dim] = 1.0
    sym = _mixed_symbol(grid, i, j) / k2
    sym[(0,) * grid.dim] = 0.0
    return _ifft(sym * _fft(a, grid), grid)


# --------------------------------------------------------------------------
# Lame operator  -mu Lap w - (mu + lam) grad div w
# --------------------------------------------------------------------------

def check_ellipticity(mu: float, lam: float, dim: int) -> None:
    if not mu > 0:
        raise ValueError(f"ellipticity violated: µ ≤ 0 (mu = {mu})")
    if not 2 * mu + dim * lam > 0:
        raise ValueError(f"ellipticity violated: 2µ+{dim}λ ≤ 0 (2mu+{dim}lambda = {2 * mu + dim * lam})")


def lame_a(w: np.ndarray, grid: GridSpec, mu: float, lam: float) -> np.ndarray:
    return -mu * lap_a(w, grid) - (mu + lam) * grad_div_a(w, grid)


def viscous_a(u: np.ndarray, grid: GridSpec, mu: float, lam: float) -> np.ndarray:
    """``mu Lap u + (mu + lam) grad div u`` (the negated Lame operator).

    Same stencils as ``lap_a`` and ``grad_div_a``; the compact second
    derivatives are computed once and shared between the two terms.
    """
    d = grid.dim
    second = [dxx(u, grid, k) for k in range(d)]
    first = [dx(u[j], grid, j) for j in range(d)]
    lap = second[0]
    for k in range(1, d):
        lap = lap + second[k]
    out = mu * lap
    for i in range(d):
        rest = sum(first[j] for j in range(d) if j != i)
        out[i] += (mu + lam) * (second[i][i] + dx(rest, grid, i))
    return out


def _lame_symbol(grid: GridSpec, mu: float, lam: float, kind: str) -> np.ndarray:
    """Symbol matrix ``A(k)`` with ``Lame(w)^ = A(k) w^``; shape ``(d, d, *shape)``."""
    d = grid.dim
    if kind == "exact":
        k2 = sum(kk * kk for kk in _wavenumbers(grid))
        A = np.empty((d, d) + grid.shape)
        for i in range(d):
            for j in range(d):
                A[i, j] = (mu + lam) * _mixed_symbol(grid, i, j) + (mu * k2 if i == j else 0.0)
        return A
    if kind == "discrete":
        a, s = _discrete_symbols(grid)
        asum = sum(a)
        A = np.empty((d, d) + grid.shape)
        for i in range(d):
            for j in range(d):
                A[i, j] = mu * asum + (mu + lam) * a[i] if i == j else (mu + lam) * s[i] * s[j]
        return A
    raise ValueError(f"unknown symbol kind {kind!r}")


@lru_cache(maxsize=16)
def _shifted_inverse(grid: GridSpec, mu: float, lam: float, shift: float, scale: float, kind: str) -> np.ndarray:
    """Inverse symbols of ``shift * I + scale * A(k)``, zero-mode safe."""
    A = scale * _lame_symbol(grid, mu, lam, kind)
    d = grid.dim
    for i in range(d):
        A[i, i] += shift
    Am = np.moveaxis(A.reshape(d, d, -1), -1, 0)
    zero = np.all(np.abs(Am) == 0.0, axis=(1, 2))
    Am[zero] = np.eye(d)
    inv = np.linalg.inv(Am)
    inv[zero] = 0.0
    return np.moveaxis(inv, 0, -1).reshape((d, d) + grid.shape)


def _apply_symbol(M: np.ndarray, v: np.ndarray, grid: GridSpec) -> np.ndarray:
    vh = _fft(v, grid)
    return _ifft(np.einsum("ij...,j...->i...", M, vh), grid)


def lame_apply(w: VectorField, params: "MaterialParams", realization: Realization = Realization.ITERATIVE) -> VectorField:
    """Apply ``-mu Lap - (mu+lam) grad div``.

    ``SPECTRAL`` uses the exact Fourier symbol and is the operator inverted by
    the spectral :func:`lame_solve`; ``ITERATIVE`` is the finite-difference
    stencil inverted by the iterative realization.
    """
    if w.rank != 1:
        raise RankError("Lame operator acts on vector fields")
    g = w.grid
    if Realization(realization) is Realization.SPECTRAL:
        _require_periodic(g, "spectral Lame operator")
        A = _lame_symbol(g, params.mu, params.lam, "exact")
        return VectorField(g, _apply_symbol(A, w.values, g))
    return VectorField(g, lame_a(w.values, g, params.mu, params.lam))


def _iterative_shifted_solve(rhs: np.ndarray, grid: GridSpec, mu: float, lam: float, shift: float, scale: float,
                             opts: EllipticSolveOptions) -> np.ndarray:
    """PCG for ``(shift I + scale Lame_h) w = rhs`` (Dirichlet on a box)."""
    d = grid.dim
    diag = np.array([shift + scale * (mu * sum(2.0 / h**2 for h in grid.spacing) + (mu + lam) * 2.0 / grid.spacing[i] ** 2)
                     for i in range(d)]).reshape((d,) + (1,) * d)
    if grid.periodic:
        singular = shift == 0.0
        project = (lambda z: _demean(z, grid)) if singular else None

        def apply(x):
            return shift * x + scale * lame_a(x, grid, mu, lam)

        b = _demean(rhs, grid) if singular else rhs
        x, _ = pcg(apply, b, diag, opts.tolerance, _max_iter(opts, b.size), project=project)
        return _demean(x, grid) if singular else x

    mask = _interior(grid)

    def apply(x):
        return np.where(mask, shift * x + scale * lame_a(x, grid, mu, lam), 0.0)

    b = np.where(mask, rhs, 0.0)
    x, _ = pcg(apply, b, diag, opts.tolerance, _max_iter(opts, int(mask.sum()) * d))
    return x


def lame_solve(f: VectorField, params: "MaterialParams", opts: EllipticSolveOptions | None = None) -> VectorField:
    """Solve ``-mu Lap w - (mu+lam) grad div w = f`` (``w = 0`` on box faces)."""
    if f.rank != 1:
        raise RankError("lame_solve needs a vector field")
    g = f.grid
    check_ellipticity(params.mu, params.lam, g.dim)
    opts = opts or default_options(g)
    opts.check_grid(g)
    if g.periodic:
        _mean_zero_check(f)
    if opts.realization is Realization.SPECTRAL:
        inv = _shifted_inverse(g, float(params.mu), float(params.lam), 0.0, 1.0, "exact")
        return VectorField(g, _apply_symbol(inv, f.values, g))
    return VectorField(g, _iterative_shifted_solve(f.values, g, params.mu, params.lam, 0.0, 1.0, opts))


def imex_viscous_solve(rhs: VectorField, dt: float, params: "MaterialParams",
                       opts: EllipticSolveOptions | None = None, symbol: str = "exact") -> VectorField:
    """Solve ``(I - dt (mu Lap + (mu+lam) grad div)) w = rhs``.

    ``symbol`` selects the spectral realization's operator: ``"exact"`` (the
    continuum symbol) or ``"discrete"`` (the symbol of the finite-difference
    stencil, so the implicit step matches the explicit discretization).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    g = rhs.grid
    check_ellipticity(params.mu, params.lam, g.dim)
    return VectorField(g, imex_viscous_solve_a(rhs.values, g, dt, params.mu, params.lam, opts, symbol))


def imex_viscous_solve_a(rhs: np.ndarray, grid: GridSpec, dt: float, mu: float, lam: float,
                         opts: EllipticSolveOptions | None = None, symbol: str = "exact") -> np.ndarray:
    opts = opts or default_options(grid)
    opts.check_grid(grid)
    if opts.realization is Realization.SPECTRAL:
        inv = _shifted_inverse(grid, float(mu), float(lam), 1.0, float(dt), symbol)
        return _apply_symbol(inv, rhs, grid)
    return _iterative_shifted_solve(rhs, grid, mu, lam, 1.0, dt, opts)
