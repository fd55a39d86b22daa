import io
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vflab import (
    Boundary,
    GridSpec,
    NormSpec,
    ScalarField,
    TensorField,
    VectorField,
    integrate,
    lq_norm,
    spacetime_norm,
    w1q_norm,
    w2q_norm,
)
from vflab.fields import from_bytes, make_field, to_bytes, write_csv

TWO_PI = 2 * math.pi


# ---------------------------------------------------------------- grids

def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(4, (8,) * 4, (1.0,) * 4)
    with pytest.raises(ValueError):
        GridSpec(2, (8, 4), (1.0, 1.0))
    with pytest.raises(ValueError):
        GridSpec(2, (8, 8), (1.0, -1.0))
    with pytest.raises(ValueError):
        GridSpec(2, (8, 8, 8), (1.0, 1.0))


def test_grid_geometry():
    g = GridSpec(2, (8, 16), (1.0, 2.0))
    assert g.spacing == (0.125, 0.125)
    assert g.shape == (8, 16)
    assert g.axis_nodes(0)[0] == pytest.approx(0.0625)
    assert not g.boundary_mask().any()
    b = GridSpec.uniform(3, 8, 1.0, Boundary.NOSLIP)
    assert b.shape == (9, 9, 9)
    mask = b.boundary_mask()
    # every face carries boundary nodes, the interior does not
    assert mask[0].all() and mask[-1].all() and mask[:, :, 0].all()
    assert mask.sum() == 9**3 - 7**3
    assert b.weights().sum() == pytest.approx(1.0, abs=1e-14)


def test_boundary_parse():
    assert Boundary.parse("NoSlipBox") is Boundary.NOSLIP
    assert Boundary.parse("periodic") is Boundary.PERIODIC
    with pytest.raises(ValueError):
        Boundary.parse("slip")


# --------------------------------------------------------------- fields

def test_field_shape_and_finiteness():
    g = GridSpec.uniform(2, 8)
    with pytest.raises(ValueError):
        VectorField(g, np.zeros((3, 8, 8)))
    bad = np.zeros((8, 8))
    bad[2, 3] = np.nan
    with pytest.raises(FloatingPointError):
        ScalarField(g, bad)
    assert isinstance(make_field(g, np.zeros((2, 2, 8, 8))), TensorField)
    assert TensorField(g, np.zeros((2, 2, 8, 8))).ncomp == 4


# ----------------------------------------------------------- quadrature

def test_integrate_constant_unit_volume():
    g = GridSpec.uniform(3, 8, 1.0)
    assert integrate(ScalarField(g, np.ones(g.shape))) == pytest.approx(1.0, abs=1e-15)


def test_integrate_full_period_vanishes():
    g = GridSpec(2, (16, 12), (3.0, 2.0))
    x = g.coords()
    assert abs(integrate(ScalarField(g, np.sin(TWO_PI * x[0] / 3.0)))) <= 1e-14


def test_integrate_linear_on_box():
    g = GridSpec.uniform(2, 64, 1.0, Boundary.NOSLIP)
    assert integrate(ScalarField(g, g.coords()[0])) == pytest.approx(0.5, abs=1e-12)


def test_integrate_components():
    g = GridSpec.uniform(2, 8, 1.0)
    v = np.stack([np.ones(g.shape), 2 * np.ones(g.shape)])
    np.testing.assert_allclose(integrate(VectorField(g, v)), [1.0, 2.0], atol=1e-15)


# ----------------------------------------------------------------- norms

def test_lq_norm_constants():
    g = GridSpec.uniform(2, 16, 1.0)
    assert lq_norm(ScalarField(g, np.full(g.shape, -3.0)), 4) == pytest.approx(3.0, rel=1e-14)
    assert lq_norm(ScalarField(g, np.zeros(g.shape)), 2) == 0.0
    with pytest.raises(ValueError):
        lq_norm(ScalarField(g, np.ones(g.shape)), 0.5)


def test_l2_norm_of_sine():
    # int sin^2 over [0, 2pi)^2 is 2 pi^2, so the norm is pi sqrt 2
    g = GridSpec.uniform(2, 64, TWO_PI)
    f = ScalarField(g, np.sin(g.coords()[0]))
    assert lq_norm(f, 2) == pytest.approx(math.pi * math.sqrt(2.0), abs=1e-10)


def test_w1q_norm_of_sine():
    g = GridSpec.uniform(2, 64, TWO_PI)
    f = ScalarField(g, np.sin(g.coords()[0]))
    assert w1q_norm(f, 2) == pytest.approx(2 * math.pi * math.sqrt(2.0), rel=1e-3)


def test_sobolev_norms_of_constant():
    g = GridSpec.uniform(2, 16, 1.0)
    f = ScalarField(g, np.full(g.shape, 2.5))
    assert w1q_norm(f, 4) == pytest.approx(2.5, rel=1e-14)
    assert w2q_norm(f, 4) == pytest.approx(2.5, rel=1e-14)
    z = ScalarField(g, np.zeros(g.shape))
    assert w1q_norm(z, 3) == 0.0


def test_tensor_norm_is_frobenius():
    g = GridSpec.uniform(2, 8, 1.0)
    T = np.zeros((2, 2) + g.shape)
    T[0, 1] = 3.0
    T[1, 0] = 4.0
    assert lq_norm(TensorField(g, T), 2) == pytest.approx(5.0, rel=1e-14)
    assert lq_norm(TensorField(g, T), math.inf) == pytest.approx(5.0)


def test_normspec():
    with pytest.raises(ValueError):
        NormSpec(q=1.0)
    with pytest.raises(ValueError):
        NormSpec(derivative_order=3)
    with pytest.raises(ValueError):
        NormSpec(time_exponent=0.5)
    g = GridSpec.uniform(2, 16, 1.0)
    f = ScalarField(g, np.full(g.shape, 2.0))
    assert NormSpec(4, 1)(f) == pytest.approx(2.0)


_field_values = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=64, max_size=64)


@settings(max_examples=40, deadline=None)
@given(_field_values, st.floats(-1e3, 1e3), st.sampled_from([2, 4, 6]))
def test_homogeneity(vals, alpha, q):
    g = GridSpec.uniform(2, 8, 1.0)
    f = np.array(vals).reshape(g.shape)
    lhs = lq_norm(ScalarField(g, alpha * f), q)
    rhs = abs(alpha) * lq_norm(ScalarField(g, f), q)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


@settings(max_examples=40, deadline=None)
@given(_field_values, st.integers(0, 63), st.sampled_from([2, 4]))
def test_zeroing_a_node_never_increases_norm(vals, idx, q):
    g = GridSpec.uniform(2, 8, 1.0)
    f = np.array(vals).reshape(g.shape)
    z = f.copy()
    z.flat[idx] = 0.0
    assert lq_norm(ScalarField(g, z), q) <= lq_norm(ScalarField(g, f), q) * (1 + 1e-14)
    assert w1q_norm(ScalarField(g, f), q) >= lq_norm(ScalarField(g, f), q)


@settings(max_examples=40, deadline=None)
@given(_field_values, _field_values, st.floats(-10, 10), st.floats(-10, 10))
def test_integrate_linear(fv, gv, a, b):
    g = GridSpec.uniform(2, 8, 1.0)
    f = np.array(fv).reshape(g.shape)
    h = np.array(gv).reshape(g.shape)
    lhs = integrate(ScalarField(g, a * f + b * h))
    rhs = a * integrate(ScalarField(g, f)) + b * integrate(ScalarField(g, h))
    assert lhs == pytest.approx(rhs, abs=1e-9)


# --------------------------------------------------------- time norms

def test_spacetime_norm_constant():
    t = np.linspace(0, 2.0, 11)
    s = [(ti, 3.0) for ti in t]
    for p in (1, 2, 4):
        assert spacetime_norm(s, p) == pytest.approx(3.0 * 2.0 ** (1 / p), rel=1e-14)
    assert spacetime_norm(s, math.inf) == 3.0


def test_spacetime_norm_sup_and_linear():
    assert spacetime_norm([(0, 1.0), (1, 3.0), (2, 2.0)], math.inf) == 3.0
    t = np.linspace(0, 1, 1000)
    assert spacetime_norm(list(zip(t, t)), 2) == pytest.approx(1 / math.sqrt(3), abs=1e-4)


def test_spacetime_norm_rejects_bad_samples():
    with pytest.raises(ValueError):
        spacetime_norm([(0, 1.0)], 2)
    with pytest.raises(ValueError):
        spacetime_norm([(0, 1.0), (0, 2.0)], 2)
    with pytest.raises(ValueError):
        spacetime_norm([(1, 1.0), (0, 2.0)], 2)
    with pytest.raises(ValueError):
        spacetime_norm([(0, 1.0), (1, 2.0)], 0.5)


# -------------------------------------------------------- serialization

@pytest.mark.parametrize("boundary", [Boundary.PERIODIC, Boundary.NOSLIP])
@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("rank", [0, 1, 2])
def test_binary_round_trip(rng, dim, rank, boundary):
    g = GridSpec(dim, (8, 10, 12)[:dim], (1.0, 2.0, 3.0)[:dim], boundary)
    f = make_field(g, rng.standard_normal((dim,) * rank + g.shape))
    back = from_bytes(to_bytes(f))
    assert back.grid == g
    assert type(back) is type(f)
    np.testing.assert_array_equal(back.values, f.values)


def test_binary_layout():
    g = GridSpec(2, (8, 9), (1.0, 2.0))
    vals = np.zeros((2,) + g.shape)
    vals[0] = np.arange(72).reshape(8, 9)
    vals[1] = -vals[0]
    data = to_bytes(VectorField(g, vals))
    head = struct.Struct("<B2I2dIB")
    dim, n1, n2, L1, L2, ncomp, bnd = head.unpack(data[:head.size])
    assert (dim, n1, n2, L1, L2, ncomp, bnd) == (2, 8, 9, 1.0, 2.0, 2, 0)
    body = np.frombuffer(data[head.size:], dtype="<f8")
    assert body.size == 2 * 72
    # components innermost, then x1 fastest
    np.testing.assert_array_equal(body[:6], [0.0, -0.0, 9.0, -9.0, 18.0, -18.0])


def test_csv_output():
    g = GridSpec.uniform(2, 8, 1.0)
    buf = io.StringIO()
    write_csv(ScalarField(g, g.coords()[0]), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "x1,x2,c0"
    assert len(lines) == 65
    x1, x2, c0 = map(float, lines[2].split(","))
    assert (x1, x2) == (0.1875, 0.0625) and c0 == x1
    big = GridSpec.uniform(2, 8, 1.0)
    with pytest.raises(ValueError):
        write_csv(ScalarField(big, np.zeros(big.shape)), io.StringIO(), max_nodes=10)
