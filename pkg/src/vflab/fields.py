"""Structured grids, field containers, quadrature and discrete norms."""

from __future__ import annotations

import csv
import enum
import io
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import BinaryIO, ClassVar, Sequence

import numpy as np


class Boundary(enum.Enum):
    PERIODIC = 0
    NOSLIP = 1  # axis-aligned no-slip box

    @classmethod
    def parse(cls, text: str) -> "Boundary":
        key = text.strip().lower().replace("_", "").replace("-", "")
        if key in ("periodic", "torus"):
            return cls.PERIODIC
        if key in ("noslip", "noslipbox", "box"):
            return cls.NOSLIP
        raise ValueError(f"unknown boundary type {text!r}")


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on a box ``[0, L_1) x ... x [0, L_d)``.

    Periodic grids are cell centred: node ``i`` sits at ``(i + 1/2) h``.  No-slip
    boxes are vertex centred with ``n + 1`` nodes per axis so that every face
    carries boundary nodes.
    """

    dim: int
    cells: tuple[int, ...]
    lengths: tuple[float, ...]
    boundary: Boundary = Boundary.PERIODIC

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        object.__setattr__(self, "cells", tuple(int(n) for n in self.cells))
        object.__setattr__(self, "lengths", tuple(float(L) for L in self.lengths))
        if len(self.cells) != self.dim or len(self.lengths) != self.dim:
            raise ValueError("cells and lengths must have one entry per axis")
        if min(self.cells) < 8:
            raise ValueError(f"need at least 8 cells per axis, got {self.cells}")
        if min(self.lengths) <= 0 or not all(map(math.isfinite, self.lengths)):
            raise ValueError(f"lengths must be positive, got {self.lengths}")

    @classmethod
    def uniform(cls, dim: int, n: int, length: float = 1.0, boundary: Boundary = Boundary.PERIODIC) -> "GridSpec":
        return cls(dim, (n,) * dim, (length,) * dim, boundary)

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @cached_property
    def shape(self) -> tuple[int, ...]:
        if self.periodic:
            return self.cells
        return tuple(n + 1 for n in self.cells)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def axis_nodes(self, k: int) -> np.ndarray:
        h = self.spacing[k]
        i = np.arange(self.shape[k], dtype=np.float64)
        return (i + 0.5) * h if self.periodic else i * h

    def coords(self) -> list[np.ndarray]:
        """Node coordinates, one array of shape ``self.shape`` per axis."""
        return np.meshgrid(*(self.axis_nodes(k) for k in range(self.dim)), indexing="ij")

    def weights(self) -> np.ndarray:
        """Quadrature weights: midpoint rule (periodic) or trapezoid rule (box)."""
        w = np.ones(self.shape)
        for k, h in enumerate(self.spacing):
            wk = np.full(self.shape[k], h)
            if not self.periodic:
                wk[0] = wk[-1] = 0.5 * h
            w = w * wk.reshape([-1 if j == k else 1 for j in range(self.dim)])
        return w

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        if self.periodic:
            return mask
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            mask[tuple(idx)] = True
            idx[k] = -1
            mask[tuple(idx)] = True
        return mask


@dataclass(frozen=True, eq=False)
class Field:
    """Values on the nodes of a grid; components come first in ``values``."""

    grid: GridSpec
    values: np.ndarray
    rank: ClassVar[int] = -1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        d = self.grid.dim
        expected = (d,) * self.rank + self.grid.shape
        if v.shape != expected:
            raise ValueError(f"{type(self).__name__} on this grid needs shape {expected}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"{type(self).__name__} contains non-finite values")

    @property
    def ncomp(self) -> int:
        return self.grid.dim ** self.rank

    def with_values(self, values: np.ndarray) -> "Field":
        return make_field(self.grid, values)

    def magnitude(self) -> np.ndarray:
        """Pointwise Euclidean (Frobenius for tensors) magnitude."""
        if self.rank == 0:
            return np.abs(self.values)
        flat = self.values.reshape((self.ncomp,) + self.grid.shape)
        return np.sqrt(np.sum(flat * flat, axis=0))


class ScalarField(Field):
    rank = 0


class VectorField(Field):
    rank = 1


class TensorField(Field):
    rank = 2


_BY_RANK = {0: ScalarField, 1: VectorField, 2: TensorField}


def make_field(grid: GridSpec, values: np.ndarray) -> Field:
    """Wrap ``values`` in the field class matching its rank on ``grid``."""
    rank = np.ndim(values) - grid.dim
    if rank not in _BY_RANK:
        raise ValueError(f"cannot infer field rank from shape {np.shape(values)}")
    return _BY_RANK[rank](grid, values)


@dataclass(frozen=True)
class NormSpec:
    q: float = 4.0
    derivative_order: int = 0
    time_exponent: float | None = None

    def __post_init__(self):
        if not self.q > 1:
            raise ValueError(f"q must exceed 1, got {self.q}")
        if self.derivative_order not in (0, 1, 2):
            raise ValueError("derivative_order must be 0, 1 or 2")
        if self.time_exponent is not None and not self.time_exponent >= 1:
            raise ValueError("time exponent must be >= 1")

    def __call__(self, f: Field) -> float:
        return (lq_norm, w1q_norm, w2q_norm)[self.derivative_order](f, self.q)


# --------------------------------------------------------------------------
# quadrature and norms
# --------------------------------------------------------------------------

def integrate(f: Field) -> float | np.ndarray:
    """Quadrature of ``f`` over the box.

    Scalars give a float; vectors and tensors give one integral per component.
    """
    w = f.grid.weights()
    axes = tuple(range(f.rank, f.rank + f.grid.dim))
    total = np.sum(f.values * w, axis=axes)
    return float(total) if f.rank == 0 else total


def lq_norm_array(values: np.ndarray, grid: GridSpec, q: float) -> float:
    """``L^q`` norm of an array whose trailing ``dim`` axes are spatial."""
    if not q >= 1:
        raise ValueError(f"q must be >= 1, got {q}")
    lead = values.ndim - grid.dim
    if lead:
        flat = values.reshape((-1,) + grid.shape)
        mag = np.sqrt(np.sum(flat * flat, axis=0))
    else:
        mag = np.abs(values)
    if math.isinf(q):
        return float(mag.max())
    scale = mag.max()
    if scale == 0.0:
        return 0.0
    # rescale so |f|^q stays representable for large q
    return float(scale * np.sum((mag / scale) ** q * grid.weights()) ** (1.0 / q))


def lq_norm(f: Field, q: float) -> float:
    return lq_norm_array(f.values, f.grid, q)


def w1q_norm(f: Field, q: float) -> float:
    """``||f||_q + ||grad f||_q`` with the central-difference gradient."""
    from .operators import grad_a

    return lq_norm(f, q) + lq_norm_array(grad_a(f.values, f.grid), f.grid, q)


def w2q_norm(f: Field, q: float) -> float:
    from .operators import grad_a

    g1 = grad_a(f.values, f.grid)
    g2 = grad_a(g1, f.grid)
    return lq_norm(f, q) + lq_norm_array(g1, f.grid, q) + lq_norm_array(g2, f.grid, q)


def spacetime_norm(samples: Sequence[tuple[float, float]], p: float) -> float:
    """``L^p`` norm in time of pre-computed spatial norms ``(t, v(t))``.

    Uses the trapezoid rule; ``p = inf`` returns the supremum over samples.
    """
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    t = np.array([s[0] for s in samples], dtype=np.float64)
    v = np.abs(np.array([s[1] for s in samples], dtype=np.float64))
    if np.any(np.diff(t) <= 0):
        raise ValueError("sample times must be strictly increasing")
    if math.isinf(p):
        return float(v.max())
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    vp = v ** p
    return float(np.sum(0.5 * (vp[1:] + vp[:-1]) * np.diff(t)) ** (1.0 / p))


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

_HEADER_DIM = struct.Struct("<B")


def _component_major(f: Field) -> np.ndarray:
    """Array of shape ``(n_d, ..., n_1, ncomp)``: components fastest, then x_1."""
    flat = f.values.reshape((f.ncomp,) + f.grid.shape)
    return np.ascontiguousarray(np.moveaxis(flat, 0, -1).transpose(tuple(range(f.grid.dim))[::-1] + (f.grid.dim,)))


def write_binary(f: Field, out: BinaryIO) -> None:
    """Header ``dim:u8, n_k:u32*d, L_k:f64*d, ncomp:u32, boundary:u8`` then f64 body."""
    g = f.grid
    out.write(_HEADER_DIM.pack(g.dim))
    out.write(struct.pack(f"<{g.dim}I", *g.cells))
    out.write(struct.pack(f"<{g.dim}d", *g.lengths))
    out.write(struct.pack("<IB", f.ncomp, g.boundary.value))
    out.write(_component_major(f).astype("<f8").tobytes())


def read_binary(src: BinaryIO) -> Field:
    (dim,) = _HEADER_DIM.unpack(src.read(1))
    cells = struct.unpack(f"<{dim}I", src.read(4 * dim))
    lengths = struct.unpack(f"<{dim}d", src.read(8 * dim))
    ncomp, bnd = struct.unpack("<IB", src.read(5))
    grid = GridSpec(dim, cells, lengths, Boundary(bnd))
    rank = {1: 0, dim: 1, dim * dim: 2}.get(ncomp)
    if rank is None:
        raise ValueError(f"component count {ncomp} does not fit dimension {dim}")
    body = np.frombuffer(src.read(), dtype="<f8")
    arr = body.reshape(grid.shape[::-1] + (ncomp,))
    arr = np.moveaxis(arr.transpose(tuple(range(dim))[::-1] + (dim,)), -1, 0)
    return make_field(grid, arr.reshape((dim,) * rank + grid.shape).astype(np.float64))


def to_bytes(f: Field) -> bytes:
    buf = io.BytesIO()
    write_binary(f, buf)
    return buf.getvalue()


def from_bytes(data: bytes) -> Field:
    return read_binary(io.BytesIO(data))


def write_csv(f: Field, out, max_nodes: int = 65536) -> None:
    """One row per node (x_1 fastest): coordinates then components."""
    g = f.grid
    n_nodes = int(np.prod(g.shape))
    if n_nodes > max_nodes:
        raise ValueError(f"grid has {n_nodes} nodes; CSV output is limited to {max_nodes}")
    coords = [np.ascontiguousarray(c.T).ravel() for c in g.coords()]
    comps = _component_major(f).reshape(n_nodes, f.ncomp)
    writer = csv.writer(out)
    writer.writerow([f"x{k + 1}" for k in range(g.dim)] + [f"c{m}" for m in range(f.ncomp)])
    for row in range(n_nodes):
        writer.writerow([repr(float(c[row])) for c in coords] + [repr(float(v)) for v in comps[row]])
