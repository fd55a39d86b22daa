import io
import math

import numpy as np
import pytest

from vflab import TimeStepperConfig, _kernels, simulate
from vflab.compat import gen_initial_from_displacement, standard_displacement, write_records_csv
from vflab.dynamics import MaterialParams, stable_dt
from vflab.mms import CASES, ConvergenceReport, convergence_study, field_errors, get_case, mms_forcing, run_case

SMOOTH = [name for name in CASES if name.startswith("smooth")]


def sample_points(rng, case, m=25):
    return rng.uniform(0, case.length, size=(case.dim, m))


# ------------------------------------------------------------- forcing

def test_equilibrium_forcing_vanishes(rng):
    for name in ("equilibrium", "equilibrium3d"):
        case = get_case(name)
        assert case.zero_forcing
        assert case.forcing_on(case.grid(8)) is None
        for part in mms_forcing(case, sample_points(rng, case), 0.7):
            assert np.max(np.abs(part)) == 0.0


def test_steady_stretch_forcing(rng):
    case = get_case("steady_stretch")
    x = sample_points(rng, case)
    g_rho, g_u, g_F = mms_forcing(case, x, 0.3)
    eps = 0.01
    expected = -2 * eps * np.cos(x[0]) * (1 + eps * np.sin(x[0]))
    assert np.max(np.abs(g_F)) == 0.0 and np.max(np.abs(g_rho)) == 0.0
    np.testing.assert_allclose(g_u[0], expected, atol=1e-15)
    assert np.max(np.abs(g_u[1])) == 0.0


def test_oscillating_shear_forcing(rng):
    case = get_case("oscillating_shear")
    x = sample_points(rng, case)
    t = 0.9
    eps, mu = 0.01, case.params.mu
    g_rho, g_u, g_F = mms_forcing(case, x, t)
    np.testing.assert_allclose(g_u[1], eps * np.sin(x[0]) * (np.cos(t) + mu * np.sin(t)), atol=1e-15)
    np.testing.assert_allclose(g_F[1, 0], -eps * np.sin(t) * np.cos(x[0]), atol=1e-15)
    assert np.max(np.abs(g_u[0])) == 0.0 and np.max(np.abs(g_rho)) == 0.0


def _fd_residual(case, x, t, delta):
    """Residual of the full system at the exact fields by central differences."""
    d, p = case.dim, case.params

    def rho(x, t):
        return case.exact(x, t)[0]

    def u(x, t):
        return case.exact(x, t)[1]

    def F(x, t):
        return case.exact(x, t)[2]

    def shift(x, k, s):
        y = x.copy()
        y[k] += s
        return y

    def Dk(f, k):
        return lambda x, t: (f(shift(x, k, delta), t) - f(shift(x, k, -delta), t)) / (2 * delta)

    def Dt(f):
        return lambda x, t: (f(x, t + delta) - f(x, t - delta)) / (2 * delta)

    def P(x, t):
        return p.pressure_a * rho(x, t) ** p.pressure_gamma

    def S(x, t):
        FF = F(x, t)
        return rho(x, t) * np.einsum("ik...,jk...->ij...", FF, FF)

    def div_u(x, t):
        return sum(Dk(u, k)(x, t)[k] for k in range(d))

    r0, u0, F0 = case.exact(x, t)
    g_rho = Dt(rho)(x, t) + sum(Dk(lambda x, t, k=k: rho(x, t) * u(x, t)[k], k)(x, t) for k in range(d))
    gu = [Dk(u, k)(x, t) for k in range(d)]  # gu[k][i] = d_k u_i
    lap = sum(Dk(Dk(u, k), k)(x, t) for k in range(d))
    graddiv = np.stack([Dk(div_u, i)(x, t) for i in range(d)])
    divS = sum(Dk(S, j)(x, t)[:, j] for j in range(d))
    gradP = np.stack([Dk(P, i)(x, t) for i in range(d)])
    adv = sum(u0[k] * gu[k] for k in range(d))
    g_u = Dt(u)(x, t) + adv - (p.mu * lap + (p.mu + p.lam) * graddiv - gradP + divS) / r0
    gF = [Dk(F, k)(x, t) for k in range(d)]
    g_F = Dt(F)(x, t) + sum(u0[k] * gF[k] for k in range(d))
    g_F = g_F - np.einsum("ki...,kj...->ij...", np.stack(gu), F0)
    return g_rho, g_u, g_F


@pytest.mark.parametrize("name", ["smooth2d", "smooth3d", "smooth2d_box", "oscillating_shear"])
def test_forcing_agrees_with_numerical_differentiation(rng, name):
    case = get_case(name)
    x = sample_points(rng, case, 10)
    t = 0.37
    exact = mms_forcing(case, x, t)
    errs = []
    for delta in (1e-2, 5e-3):
        approx = _fd_residual(case, x, t, delta)
        errs.append(max(float(np.max(np.abs(a - b))) for a, b in zip(exact, approx)))
    assert errs[1] <= 1e-3
    # O(delta^2): halving the step cuts the mismatch by about four
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


@pytest.mark.parametrize("name", list(CASES))
def test_cases_respect_density_floor_and_walls(name):
    case = get_case(name)
    g = case.grid(16)
    for t in np.linspace(0, 2 * math.pi, 9):
        s = case.exact_state(g, float(t))
        assert np.min(s.rho.values) >= case.rho_min
        if not g.periodic:
            assert np.max(np.abs(s.u.values[:, g.boundary_mask()])) <= 1e-15


@pytest.mark.parametrize("name", list(CASES))
def test_compiled_forcing_matches_numpy(rng, name):
    case = get_case(name)
    x = rng.uniform(0, case.length, size=(case.dim, 5, 7))
    saved = _kernels.backend()
    try:
        _kernels.set_backend("numpy")
        ref = mms_forcing(case, x, 0.3)
        _kernels.set_backend("numba")
        fast = mms_forcing(case, x, 0.3)
    finally:
        _kernels.set_backend(saved)
    for a, b in zip(ref, fast):
        assert a.shape == b.shape
        np.testing.assert_allclose(b, a, rtol=0, atol=1e-14)


def test_unknown_case():
    with pytest.raises(KeyError, match="available"):
        get_case("vortex")


# --------------------------------------------------------------- studies

def test_equilibrium_study_is_exact():
    rep = convergence_study("equilibrium", [8, 16, 32], TimeStepperConfig(t_end=0.1))
    assert rep.exact and rep.passed
    for errs in rep.errors.values():
        assert max(errs) <= 1e-13


def test_study_argument_checks():
    cfg = TimeStepperConfig(t_end=0.1)
    with pytest.raises(ValueError, match="three"):
        convergence_study("smooth2d", [16, 32], cfg)
    with pytest.raises(ValueError, match="double"):
        convergence_study("smooth2d", [16, 32, 48], cfg)
    with pytest.raises(ValueError):
        convergence_study("smooth2d", [16, 32, 64], cfg, dt_scaling="h3")


def test_non_monotone_errors_flagged():
    errors = {(f, 2.0): [1e-2, 2e-2, 5e-3] for f in ("rho", "u", "F")}
    rep = ConvergenceReport("made_up", [8, 16, 32], (2.0,), errors)
    assert not rep.monotone and not rep.passed
    assert "FAIL" in rep.summary()
    buf = io.StringIO()
    rep.write_csv(buf)
    assert buf.getvalue().splitlines()[0] == "grid,field,norm,error,order"


@pytest.mark.parametrize("name,grids", [("smooth2d", [16, 32, 64]), ("smooth2d_box", [16, 32, 64]),
                                        ("smooth3d", [8, 16, 32])])
def test_smooth_cases_reach_second_order(name, grids):
    rep = convergence_study(name, grids, TimeStepperConfig(t_end=0.25), norms=(2.0, 4.0))
    assert rep.failure is None and rep.monotone
    for fld in ("rho", "u", "F"):
        for q in (2.0, 4.0):
            assert min(rep.orders(fld, q)) >= 1.7, rep.summary()
    buf = io.StringIO()
    rep.write_csv(buf)
    rows = buf.getvalue().splitlines()
    assert len(rows) == 1 + 3 * 2 * len(grids)
    assert rows[1].startswith(f"{grids[0]},rho,2,")


def test_fixed_dt_scaling_with_h():
    rep = convergence_study("smooth2d", [16, 32, 64], TimeStepperConfig(dt=0.02, t_end=0.2), dt_scaling="h2")
    assert rep.passed, rep.summary()


def test_error_splitting_at_128():
    """Halving dt at a fixed fine grid barely moves the error: space dominates."""
    case = get_case("smooth2d")
    g = case.grid(128)
    s0 = case.exact_state(g, 0.0)
    dt = stable_dt(g, s0.rho.values, s0.u.values, case.params, (0.5, 0.25))
    errs = []
    for step in (dt, dt / 2):
        res = run_case(case, 128, TimeStepperConfig(dt=step, t_end=0.25, sample_every=10**9))
        e = field_errors(case, res.final, (2.0,))
        errs.append(np.array([e[(f, 2.0)] for f in ("rho", "u", "F")]))
    assert np.max(np.abs(errs[1] / errs[0] - 1)) <= 0.05


def test_zero_forcing_matches_unforced_run(torus2):
    s0 = gen_initial_from_displacement(standard_displacement(1e-2), torus2)
    p = MaterialParams(0.1, 0.1)
    zeros = (np.zeros(torus2.shape), np.zeros((2,) + torus2.shape), np.zeros((2, 2) + torus2.shape))
    outs = []
    for forcing in (None, lambda t: zeros, get_case("equilibrium").forcing_on(torus2)):
        res = simulate(s0, TimeStepperConfig(t_end=0.1), p, forcing=forcing)
        buf = io.StringIO()
        write_records_csv(res.records, buf)
        outs.append(buf.getvalue())
    assert outs[0] == outs[1] == outs[2]
