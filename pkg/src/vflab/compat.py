"""Compatible initial data and the intrinsic-identity diagnostics.

Initial data come from a deformation map ``phi(X) = X + psi(X)``: the spatial
deformation gradient is ``F = (I + grad psi) o phi^{-1}`` and the density is
``1 / det F``, so the determinant, Piola and curl identities hold in the
continuum and the discrete residuals measure discretization error only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .dynamics import FlowState, MaterialParams, PerturbState
from .fields import GridSpec, VectorField, integrate, lq_norm, lq_norm_array, w1q_norm, w2q_norm
from .operators import (
    EllipticSolveOptions,
    default_options,
    div_a,
    grad_a,
    lame_apply,
    lame_solve,
    riesz_a,
)

MONITORS = ("intrinsic", "trace", "q1", "sigma", "mass", "rhoF", "norms", "z")
PERIODIC_ONLY = frozenset({"q1"})


class InvertibilityError(ValueError):
    def __init__(self, max_grad: float, limit: float):
        super().__init__(f"deformation not safely invertible: max|grad psi| = {max_grad:.4g} >= {limit}")
        self.max_grad = max_grad


def validate_monitors(selection: Iterable[str], grid: GridSpec) -> tuple[str, ...]:
    chosen = []
    for name in selection:
        name = name.strip()
        if name not in MONITORS:
            raise ValueError(f"unknown monitor {name!r}; choose from {', '.join(MONITORS)}")
        if name in PERIODIC_ONLY and not grid.periodic:
            raise ValueError(f"monitor {name!r} needs a periodic grid")
        if name not in chosen:
            chosen.append(name)
    # canonical order keeps the CSV column set a function of the selection only
    return tuple(m for m in MONITORS if m in chosen)


# --------------------------------------------------------------------------
# displacement-generated data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Mode:
    """One displacement or velocity mode.

    ``kind="wave"``: ``coeffs * sin(2 pi n.x / L + phase)`` (periodic).
    ``kind="product"``: ``coeffs * prod_k sin(pi n_k x_k / L_k)``, which
    vanishes on every face of a box.
    """

    wavevector: tuple[float, ...]
    coeffs: tuple[float, ...]
    phase: float = 0.0
    kind: str = "wave"

    def __post_init__(self):
        if self.kind not in ("wave", "product"):
            raise ValueError(f"unknown mode kind {self.kind!r}")
        if len(self.wavevector) != len(self.coeffs):
            raise ValueError("wavevector and coeffs must have one entry per axis")

    def _wavenumbers(self, lengths):
        base = math.pi if self.kind == "product" else 2.0 * math.pi
        return [base * n / L for n, L in zip(self.wavevector, lengths)]

    def value_and_grad(self, X: np.ndarray, lengths) -> tuple[np.ndarray, np.ndarray]:
        """Scalar profile and its gradient at points ``X`` (shape ``(d, ...)``)."""
        k = self._wavenumbers(lengths)
        d = len(k)
        if self.kind == "wave":
            theta = sum(kk * X[j] for j, kk in enumerate(k)) + self.phase
            s, c = np.sin(theta), np.cos(theta)
            return s, np.stack([kk * c for kk in k])
        sines = [np.sin(k[j] * X[j]) for j in range(d)]
        coses = [np.cos(k[j] * X[j]) for j in range(d)]
        val = np.prod(sines, axis=0)
        gradient = []
        for j in range(d):
            factors = [coses[m] * k[m] if m == j else sines[m] for m in range(d)]
            gradient.append(np.prod(factors, axis=0))
        return val, np.stack(gradient)


@dataclass(frozen=True)
class DisplacementSpec:
    amplitude: float
    modes: tuple[Mode, ...] = ()
    velocity_amplitude: float = 0.0
    velocity_modes: tuple[Mode, ...] = ()
    max_grad: float = 0.5

    def __post_init__(self):
        if self.amplitude < 0 or self.velocity_amplitude < 0:
            raise ValueError("amplitudes must be non-negative")

    def psi(self, X: np.ndarray, lengths) -> tuple[np.ndarray, np.ndarray]:
        """Displacement ``psi(X)`` and ``grad psi`` (``[i, j] = d psi_i / d X_j``)."""
        return _mode_sum(self.modes, self.amplitude, X, lengths)

    def velocity(self, x: np.ndarray, lengths) -> np.ndarray:
        return _mode_sum(self.velocity_modes, self.velocity_amplitude, x, lengths)[0]


def _mode_sum(modes, amp, X, lengths):
    d = X.shape[0]
    val = np.zeros_like(X)
    jac = np.zeros((d,) + X.shape)
    for m in modes:
        s, g = m.value_and_grad(X, lengths)
        for i in range(d):
            if m.coeffs[i] != 0.0:
                val[i] += amp * m.coeffs[i] * s
                jac[i] += amp * m.coeffs[i] * g
    return val, jac


def standard_displacement(epsilon: float, dim: int = 2, velocity_amplitude: float | None = None,
                          box: bool = False) -> DisplacementSpec:
    """Reference compatible data: a mix of shear and compression modes.

    The velocity is a small divergence-free field of amplitude ``epsilon``
    unless given.
    """
    vel = epsilon if velocity_amplitude is None else velocity_amplitude
    if box:
        if dim == 2:
            modes = (Mode((1, 2), (1.0, 0.0), kind="product"), Mode((2, 1), (0.0, 0.75), kind="product"),
                     Mode((1, 1), (0.5, 0.5), kind="product"))
            vmodes = (Mode((1, 1), (1.0, -0.5), kind="product"),)
        else:
            modes = (Mode((1, 2, 1), (1.0, 0.0, 0.0), kind="product"), Mode((2, 1, 1), (0.0, 0.75, 0.0), kind="product"),
                     Mode((1, 1, 2), (0.0, 0.0, 0.5), kind="product"))
            vmodes = (Mode((1, 1, 1), (1.0, -0.5, 0.25), kind="product"),)
        return DisplacementSpec(epsilon, modes, vel, vmodes)
    if dim == 2:
        modes = (Mode((0, 1), (1.0, 0.0)), Mode((1, 1), (0.5, 0.0)), Mode((1, 0), (0.0, 0.75), phase=0.5 * math.pi))
        vmodes = (Mode((0, 1), (1.0, 0.0)), Mode((1, 0), (0.0, 1.0)))
    else:
        modes = (Mode((0, 1, 0), (1.0, 0.0, 0.0)), Mode((1, 1, 0), (0.5, 0.0, 0.0)),
                 Mode((1, 0, 0), (0.0, 0.75, 0.0), phase=0.5 * math.pi), Mode((0, 0, 1), (0.0, 0.0, 0.5)),
                 Mode((1, 0, 1), (0.0, 0.0, 0.25)))
        vmodes = (Mode((0, 1, 0), (1.0, 0.0, 0.0)), Mode((0, 0, 1), (0.0, 1.0, 0.0)), Mode((1, 0, 0), (0.0, 0.0, 1.0)))
    return DisplacementSpec(epsilon, modes, vel, vmodes)


def invert_map(psi: Callable[[np.ndarray], np.ndarray], x, tol: float = 1e-13,
               lipschitz: float | None = None, max_iter: int = 500, return_iterations: bool = False):
    """Solve ``X + psi(X) = x`` by the fixed-point iteration ``X <- x - psi(X)``.

    ``lipschitz`` is a bound on ``|grad psi|``; values >= 1 are rejected since
    the iteration is then not a contraction.
    """
    if lipschitz is not None and not lipschitz < 1:
        raise ValueError(f"psi is not a contraction (Lipschitz bound {lipschitz} >= 1)")
    x = np.asarray(x, dtype=np.float64)
    X = x.copy()
    for it in range(max_iter + 1):
        r = X + psi(X) - x
        if np.max(np.abs(r), initial=0.0) <= tol:
            return (X, it) if return_iterations else X
        X = x - psi(X)
    raise RuntimeError(f"fixed-point inversion did not reach tol {tol} in {max_iter} iterations")


def gen_initial_from_displacement(spec: DisplacementSpec, grid: GridSpec) -> FlowState:
    """Build ``(rho, u, F)`` satisfying the intrinsic identities by construction."""
    lengths = grid.lengths
    x = np.stack(grid.coords())
    _, jac0 = spec.psi(x, lengths)
    max_grad = float(np.max(np.linalg.norm(np.moveaxis(jac0.reshape(grid.dim, grid.dim, -1), -1, 0), ord=2, axis=(1, 2))))
    if max_grad >= spec.max_grad:
        raise InvertibilityError(max_grad, spec.max_grad)
    if not grid.periodic:
        wall = grid.boundary_mask()
        if np.any(np.abs(spec.psi(x, lengths)[0][:, wall]) > 1e-12):
            raise ValueError("displacement must vanish on the box boundary")
    X = invert_map(lambda X: spec.psi(X, lengths)[0], x, tol=1e-14 * max(1.0, max(lengths)), lipschitz=max_grad)
    _, jac = spec.psi(X, lengths)
    d = grid.dim
    F = jac + np.eye(d).reshape((d, d) + (1,) * d)
    rho = 1.0 / det_a(F)
    u = spec.velocity(x, lengths)
    if not grid.periodic:
        u[:, grid.boundary_mask()] = 0.0
    return FlowState.from_arrays(grid, rho, u, F)


# --------------------------------------------------------------------------
# pointwise algebra
# --------------------------------------------------------------------------

def det_a(F: np.ndarray) -> np.ndarray:
    if F.shape[0] == 2:
        return F[0, 0] * F[1, 1] - F[0, 1] * F[1, 0]
    return (F[0, 0] * (F[1, 1] * F[2, 2] - F[1, 2] * F[2, 1])
            - F[0, 1] * (F[1, 0] * F[2, 2] - F[1, 2] * F[2, 0])
            + F[0, 2] * (F[1, 0] * F[2, 1] - F[1, 1] * F[2, 0]))


def _trace(E: np.ndarray) -> np.ndarray:
    return sum(E[i, i] for i in range(E.shape[0]))


# --------------------------------------------------------------------------
# intrinsic identities
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IntrinsicResiduals:
    det: float
    piola: float
    curl: float


def curl_compat_a(F: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``C[i, j, k] = F_lk d_l F_ij - F_lj d_l F_ik``."""
    gF = grad_a(F, grid)  # [i, j, l]
    A = np.einsum("lk...,ijl...->ijk...", F, gF)
    return A - np.swapaxes(A, 1, 2)


def check_intrinsic(s: FlowState, q: float = 4.0) -> IntrinsicResiduals:
    """Residuals of ``rho det F = 1``, ``div(rho F^T) = 0`` and the curl identity.

    The determinant residual is a max norm, the others ``L^q`` norms; the curl
    residual is the largest norm over index triples.
    """
    g = s.grid
    rho, F = s.rho.values, s.F.values
    det_res = float(np.max(np.abs(rho * det_a(F) - 1.0)))
    piola = lq_norm_array(div_a(rho * np.swapaxes(F, 0, 1), g), g, q)
    C = curl_compat_a(F, g)
    d = g.dim
    curl_res = max(lq_norm_array(C[i, j, k], g, q) for i in range(d) for j in range(d) for k in range(d))
    return IntrinsicResiduals(det_res, piola, curl_res)


def check_trace_constraint(s: PerturbState) -> float:
    """Max-norm residual of the trace relation implied by ``(1+r) det(I+E) = 1``."""
    r, E = s.rho_tilde.values, s.E.values
    trE = _trace(E)
    if s.grid.dim == 2:
        rhs = -r - r * trE - (1.0 + r) * det_a(E)
    else:
        trE2 = np.einsum("ij...,ji...->...", E, E)
        rhs = -r - r * trE + (1.0 + r) * (0.5 * (trE2 - trE * trE) - det_a(E))
    return float(np.max(np.abs(trE - rhs)))


def q1_terms(s: PerturbState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(div E, div E^T, N)`` with ``N_k = -sum_ij R_ij G_ijk`` and

    ``G_ijk = E_lj d_l E_ik - E_lk d_l E_ij - E_lj d_l E_ki + E_li d_l E_kj``.
    """
    g = s.grid
    E = s.E.values
    gE = grad_a(E, g)  # [a, b, l] = d_l E_ab
    T1 = np.einsum("lj...,ikl...->ijk...", E, gE)
    T2 = np.einsum("lk...,ijl...->ijk...", E, gE)
    T3 = np.einsum("lj...,kil...->ijk...", E, gE)
    T4 = np.einsum("li...,kjl...->ijk...", E, gE)
    G = T1 - T2 - T3 + T4
    d = g.dim
    N = np.zeros((d,) + g.shape)
    for i in range(d):
        for j in range(d):
            N -= riesz_a(i, j, G[i, j], g)
    return div_a(E, g), div_a(np.swapaxes(E, 0, 1), g), N


def check_q1_identity(s: PerturbState, q: float = 4.0) -> float:
    """``L^q`` norm of ``div E - div E^T + N`` (periodic grids only)."""
    if not s.grid.periodic:
        raise ValueError("the q1 residual uses the periodic Riesz realization")
    dE, dEt, N = q1_terms(s)
    return lq_norm_array(dE - dEt + N, s.grid, q)


# --------------------------------------------------------------------------
# dissipative combination Z = u - L(div E) / mu
# --------------------------------------------------------------------------

@dataclass
class ZMonitor:
    Z: VectorField
    Z1: VectorField
    norms: dict[str, float]
    consistency: float  # relative residual of Lame(Z1) against div E


def z_monitor(s: PerturbState, params: MaterialParams, opts: EllipticSolveOptions | None = None,
              q: float = 4.0) -> ZMonitor:
    g = s.grid
    opts = opts or default_options(g)
    divE = VectorField(g, div_a(s.E.values, g))
    Z1 = lame_solve(divE, params, opts)
    Z = VectorField(g, s.u.values - Z1.values / params.mu)
    back = lame_apply(Z1, params, opts.realization)
    denom = lq_norm(divE, 2)
    if g.periodic:
        diff = back.values - divE.values
    else:
        interior = ~g.boundary_mask()
        diff = np.where(interior, back.values - divE.values, 0.0)
        denom = lq_norm_array(np.where(interior, divE.values, 0.0), g, 2)
    consistency = lq_norm_array(diff, g, 2) / denom if denom > 0 else lq_norm_array(diff, g, 2)
    norms = {"z_lq": lq_norm(Z, q), "z_w1q": w1q_norm(Z, q), "z1_lq": lq_norm(Z1, q), "z1_w1q": w1q_norm(Z1, q)}
    return ZMonitor(Z, Z1, norms, consistency)


# --------------------------------------------------------------------------
# sigma = grad ln rho
# --------------------------------------------------------------------------

def initial_sigma(s: FlowState) -> np.ndarray:
    return grad_a(np.log(s.rho.values), s.grid)


def sigma_mismatch(s: FlowState, sigma: np.ndarray, q: float = 4.0) -> float:
    rho = s.rho.values
    if np.any(rho <= 0):
        raise ValueError("sigma diagnostic needs rho > 0")
    return lq_norm_array(sigma - grad_a(np.log(rho), s.grid), s.grid, q)


@dataclass(frozen=True)
class SigmaReport:
    times: tuple[float, ...]
    mismatch: tuple[float, ...]

    @property
    def max_mismatch(self) -> float:
        return max(self.mismatch)


def sigma_diagnostic(records: Sequence["DiagnosticsRecord"]) -> SigmaReport:
    """Collect the evolved-vs-reconstructed ``sigma`` mismatch over a run."""
    rows = [(r.t, r.sigma_mismatch) for r in records if r.sigma_mismatch is not None]
    if not rows:
        raise ValueError("series carries no sigma data; simulate with the 'sigma' monitor")
    return SigmaReport(tuple(t for t, _ in rows), tuple(m for _, m in rows))


# --------------------------------------------------------------------------
# records and conservation
# --------------------------------------------------------------------------

@dataclass
class DiagnosticsRecord:
    t: float
    det_residual: float | None = None
    piola_residual: float | None = None
    curl_residual: float | None = None
    trace_residual: float | None = None
    q1_residual: float | None = None
    sigma_mismatch: float | None = None
    mass_integral: float | None = None
    rhoF_integrals: np.ndarray | None = None
    norms: dict[str, float] = field(default_factory=dict)
    z_norms: dict[str, float] = field(default_factory=dict)

    def columns(self) -> list[str]:
        return [name for name, _ in self._cells()]

    def row(self) -> list[float]:
        return [v for _, v in self._cells()]

    def _cells(self):
        cells = [("t", self.t)]
        for name in ("det_residual", "piola_residual", "curl_residual", "trace_residual", "q1_residual",
                     "sigma_mismatch"):
            v = getattr(self, name)
            if v is not None:
                cells.append((name, v))
        if self.mass_integral is not None:
            cells.append(("mass_integral", self.mass_integral))
        if self.rhoF_integrals is not None:
            d = self.rhoF_integrals.shape[0]
            for i in range(d):
                for j in range(d):
                    cells.append((f"rhoF_{i + 1}{j + 1}", float(self.rhoF_integrals[i, j])))
        cells.extend(self.norms.items())
        cells.extend(self.z_norms.items())
        return cells


NORM_KEYS = ("rho_tilde_lq", "rho_tilde_w1q", "u_lq", "u_w1q", "u_w2q", "E_lq", "E_w1q")


def compute_diagnostics(s: FlowState, params: MaterialParams, monitors: Sequence[str], q: float = 4.0,
                        sigma: np.ndarray | None = None,
                        opts: EllipticSolveOptions | None = None) -> DiagnosticsRecord:
    rec = DiagnosticsRecord(t=s.t)
    ps = s.to_perturb()
    if "intrinsic" in monitors:
        res = check_intrinsic(s, q)
        rec.det_residual, rec.piola_residual, rec.curl_residual = res.det, res.piola, res.curl
    if "trace" in monitors:
        rec.trace_residual = check_trace_constraint(ps)
    if "q1" in monitors:
        rec.q1_residual = check_q1_identity(ps, q)
    if "sigma" in monitors:
        if sigma is None:
            raise ValueError("sigma monitor needs the evolved sigma field")
        rec.sigma_mismatch = sigma_mismatch(s, sigma, q)
    if "mass" in monitors:
        rec.mass_integral = integrate(ps.rho_tilde)
    if "rhoF" in monitors:
        rec.rhoF_integrals = np.asarray(integrate(s.F.with_values(s.rho.values * s.F.values)))
    if "norms" in monitors:
        rec.norms = {
            "rho_tilde_lq": lq_norm(ps.rho_tilde, q),
            "rho_tilde_w1q": w1q_norm(ps.rho_tilde, q),
            "u_lq": lq_norm(s.u, q),
            "u_w1q": w1q_norm(s.u, q),
            "u_w2q": w2q_norm(s.u, q),
            "E_lq": lq_norm(ps.E, q),
            "E_w1q": w1q_norm(ps.E, q),
        }
    if "z" in monitors:
        zm = z_monitor(ps, params, opts, q)
        rec.z_norms = dict(zm.norms, z_consistency=zm.consistency)
    return rec


def write_records_csv(records: Sequence[DiagnosticsRecord], out: TextIO, header: list[str] | None = None) -> None:
    """Fixed column order, 17 significant digits."""
    writer = csv.writer(out, lineterminator="\n")
    if header is None:
        header = records[0].columns() if records else ["t"]
    writer.writerow(header)
    for r in records:
        writer.writerow([f"{v:.17g}" for v in r.row()])


@dataclass(frozen=True)
class ConservationReport:
    duration: float
    mass_drift: float | None
    rhoF_drift: np.ndarray | None
    bound: float | None
    flagged: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.flagged


def check_conserved(records: Sequence[DiagnosticsRecord], bound: float | None = None) -> ConservationReport:
    """Per-unit-time drift ``max_t |I(t) - I(t_0)| / (t_end - t_0)`` of each integral."""
    if len(records) < 2:
        raise ValueError("need at least two records")
    T = records[-1].t - records[0].t
    if not T > 0:
        raise ValueError("records must span a positive time interval")
    mass = None
    if records[0].mass_integral is not None:
        m = np.array([r.mass_integral for r in records])
        mass = float(np.max(np.abs(m - m[0]))) / T
    rf = None
    if records[0].rhoF_integrals is not None:
        stack = np.stack([r.rhoF_integrals for r in records])
        rf = np.max(np.abs(stack - stack[0]), axis=0) / T
    flagged = []
    if bound is not None:
        if mass is not None and mass > bound:
            flagged.append("mass")
        if rf is not None:
            d = rf.shape[0]
            flagged.extend(f"rhoF_{i + 1}{j + 1}" for i in range(d) for j in range(d) if rf[i, j] > bound)
    return ConservationReport(T, mass, rf, bound, tuple(flagged))


def rhoF_deviation(records: Sequence[DiagnosticsRecord], volume: float) -> float:
    """Largest ``|int rho F_ij - delta_ij |Omega||`` over a series."""
    d = records[0].rhoF_integrals.shape[0]
    target = np.eye(d) * volume
    return float(max(np.max(np.abs(r.rhoF_integrals - target)) for r in records))
