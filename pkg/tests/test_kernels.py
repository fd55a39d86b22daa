import os
import subprocess
import sys

import numpy as np
import pytest

from vflab import GridSpec, MaterialParams, Boundary
from vflab import _kernels
from vflab.dynamics import rhs_full_a


@pytest.fixture
def both_backends():
    saved = _kernels.backend()
    yield
    _kernels.set_backend(saved)


def run_both(fn):
    out = {}
    for name in ("numpy", "numba"):
        _kernels.set_backend(name)
        out[name] = fn()
    return out["numpy"], out["numba"]


def test_backend_switch(both_backends):
    _kernels.set_backend("numpy")
    assert _kernels.backend() == "numpy"
    with pytest.raises(ValueError):
        _kernels.set_backend("fortran")


@pytest.mark.parametrize("periodic", [True, False])
@pytest.mark.parametrize("shape", [(9, 12), (8, 9, 10), (2, 3, 11, 10)])
def test_stencil_parity(rng, both_backends, periodic, shape):
    a = rng.standard_normal(shape)
    for axis in range(len(shape)):
        if shape[axis] < 8:
            continue
        for kernel in (_kernels.d1, _kernels.d2):
            ref, fast = run_both(lambda: kernel(a, axis, 0.37, periodic))
            np.testing.assert_array_equal(ref, fast)


@pytest.mark.parametrize("periodic", [True, False])
def test_grad_parity(rng, both_backends, periodic):
    a = rng.standard_normal((2, 2, 10, 12))
    ref, fast = run_both(lambda: _kernels.grad(a, 2, (0.1, 0.2), periodic))
    np.testing.assert_array_equal(ref, fast)
    assert ref.shape == (2, 2, 2, 10, 12)


@pytest.mark.parametrize("dim", [2, 3])
def test_pointwise_parity(rng, both_backends, dim):
    shape = (9,) * dim
    F = rng.standard_normal((dim, dim) + shape)
    u = rng.standard_normal((dim,) + shape)
    gu = rng.standard_normal((dim, dim) + shape)
    gF = rng.standard_normal((dim, dim, dim) + shape)
    rho = 1 + 0.1 * rng.random(shape)
    P = rng.random(shape)
    for fn in (lambda: _kernels.transport(F, u, gu, gF),
               lambda: _kernels.momentum_flux(rho, u, F, P),
               lambda: _kernels.outer_rows(F, gu)):
        ref, fast = run_both(fn)
        np.testing.assert_array_equal(ref, fast)


def test_pointwise_kernels_against_einsum(rng):
    d, shape = 3, (8, 8, 8)
    F = rng.standard_normal((d, d) + shape)
    u = rng.standard_normal((d,) + shape)
    gu = rng.standard_normal((d, d) + shape)
    gF = rng.standard_normal((d, d, d) + shape)
    rho = 1 + rng.random(shape)
    P = rng.random(shape)
    expect = -np.einsum("k...,ijk...->ij...", u, gF) + np.einsum("ik...,kj...->ij...", gu, F)
    np.testing.assert_allclose(_kernels.transport(F, u, gu, gF), expect, atol=1e-12)
    eye = np.eye(d).reshape((d, d) + (1,) * d)
    expect = rho * (np.einsum("i...,j...->ij...", u, u) - np.einsum("ik...,jk...->ij...", F, F)) + P * eye
    np.testing.assert_allclose(_kernels.momentum_flux(rho, u, F, P), expect, atol=1e-12)
    np.testing.assert_allclose(_kernels.outer_rows(F, gu), np.einsum("ik...,jk...->ij...", F, gu), atol=1e-12)


@pytest.mark.parametrize("boundary", [Boundary.PERIODIC, Boundary.NOSLIP])
def test_full_rhs_parity(rng, both_backends, boundary):
    g = GridSpec.uniform(2, 16, 1.0, boundary)
    rho = 1 + 0.1 * rng.random(g.shape)
    u = 0.1 * rng.standard_normal((2,) + g.shape)
    F = np.eye(2).reshape(2, 2, 1, 1) + 0.1 * rng.standard_normal((2, 2) + g.shape)
    ref, fast = run_both(lambda: rhs_full_a(rho, u, F, g, MaterialParams()))
    for a, b in zip(ref, fast):
        np.testing.assert_array_equal(a, b)


def _probe(env_extra, code):
    env = dict(os.environ, **env_extra)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_env_flag_selects_numpy():
    assert _probe({"VFL_NUMBA": "0"}, "from vflab import _kernels; print(_kernels.backend())") == "numpy"


def test_env_threads_caps_parallelism():
    code = "from vflab import _kernels; import numba; print(numba.get_num_threads())"
    assert _probe({"VFL_THREADS": "1"}, code) == "1"
