"""Finite-difference stencil kernels.

Every kernel works on an array viewed as ``(pre, n, post)`` where ``n`` is the
differentiated axis, so one implementation covers scalars, vectors and tensors
in any dimension.  Two backends exist:

* ``numba``: ``@njit`` loops, parallel over the leading block for large
  arrays and serial otherwise.
* ``numpy``: vectorised slicing, used when numba is missing or when the
  environment variable ``VFL_NUMBA`` is set to ``0``.

Both backends produce bitwise identical results on the same input because the
arithmetic is written in the same order.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

_FALSE = {"0", "false", "no", "off"}


def _tune_malloc() -> bool:
    """Keep freed field-sized blocks in the heap instead of returning them to the OS.

    Every right-hand side allocates dozens of 100 kB+ temporaries; with glibc's
    default thresholds each one is a fresh ``mmap`` and page-faults on first
    touch.  No-op off glibc or when ``VFL_MALLOC_TUNE=0``.
    """
    if os.environ.get("VFL_MALLOC_TUNE", "1").lower() in _FALSE:
        return False
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
        m_trim_threshold, m_mmap_threshold = -1, -3
        ok = libc.mallopt(m_mmap_threshold, 256 << 20) and libc.mallopt(m_trim_threshold, 512 << 20)
        return bool(ok)
    except (OSError, AttributeError):
        return False


MALLOC_TUNED = _tune_malloc()

if numba is not None and not os.environ.get("NUMBA_THREADING_LAYER"):
    numba.config.THREADING_LAYER = "workqueue"  # avoids probing an outdated TBB

if numba is not None and os.environ.get("VFL_THREADS"):
    numba.set_num_threads(max(1, min(int(os.environ["VFL_THREADS"]), numba.config.NUMBA_NUM_THREADS)))

_backend = "numba" if numba is not None and os.environ.get("VFL_NUMBA", "1").lower() not in _FALSE else "numpy"


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    """Switch kernels at runtime (used by the benchmark and the parity tests)."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and numba is None:
        raise RuntimeError("numba is not installed")
    _backend = name


# --------------------------------------------------------------------------
# numpy reference path
# --------------------------------------------------------------------------

def _d1_numpy(a, h, periodic):
    out = np.empty_like(a)
    inv = 1.0 / (2.0 * h)
    if periodic:
        out[:, 1:-1] = (a[:, 2:] - a[:, :-2]) * inv
        out[:, 0] = (a[:, 1] - a[:, -1]) * inv
        out[:, -1] = (a[:, 0] - a[:, -2]) * inv
    else:
        out[:, 1:-1] = (a[:, 2:] - a[:, :-2]) * inv
        out[:, 0] = (-3.0 * a[:, 0] + 4.0 * a[:, 1] - a[:, 2]) * inv
        out[:, -1] = (3.0 * a[:, -1] - 4.0 * a[:, -2] + a[:, -3]) * inv
    return out


def _d2_numpy(a, h, periodic):
    out = np.empty_like(a)
    inv = 1.0 / (h * h)
    if periodic:
        out[:, 1:-1] = (a[:, 2:] - 2.0 * a[:, 1:-1] + a[:, :-2]) * inv
        out[:, 0] = (a[:, 1] - 2.0 * a[:, 0] + a[:, -1]) * inv
        out[:, -1] = (a[:, 0] - 2.0 * a[:, -1] + a[:, -2]) * inv
    else:
        out[:, 1:-1] = (a[:, 2:] - 2.0 * a[:, 1:-1] + a[:, :-2]) * inv
        out[:, 0] = (2.0 * a[:, 0] - 5.0 * a[:, 1] + 4.0 * a[:, 2] - a[:, 3]) * inv
        out[:, -1] = (2.0 * a[:, -1] - 5.0 * a[:, -2] + 4.0 * a[:, -3] - a[:, -4]) * inv
    return out


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

def _d1_loops(a, h, periodic):
    pre, n, post = a.shape
    out = np.empty_like(a)
    inv = 1.0 / (2.0 * h)
    for p in numba.prange(pre):
        if post == 1:
            # last-axis derivative: keep the inner loop contiguous
            for i in range(1, n - 1):
                out[p, i, 0] = (a[p, i + 1, 0] - a[p, i - 1, 0]) * inv
        else:
            for i in range(1, n - 1):
                for q in range(post):
                    out[p, i, q] = (a[p, i + 1, q] - a[p, i - 1, q]) * inv
        for q in range(post):
            if periodic:
                out[p, 0, q] = (a[p, 1, q] - a[p, n - 1, q]) * inv
                out[p, n - 1, q] = (a[p, 0, q] - a[p, n - 2, q]) * inv
            else:
                out[p, 0, q] = (-3.0 * a[p, 0, q] + 4.0 * a[p, 1, q] - a[p, 2, q]) * inv
                out[p, n - 1, q] = (3.0 * a[p, n - 1, q] - 4.0 * a[p, n - 2, q] + a[p, n - 3, q]) * inv
    return out


def _d2_loops(a, h, periodic):
    pre, n, post = a.shape
    out = np.empty_like(a)
    inv = 1.0 / (h * h)
    for p in numba.prange(pre):
        if post == 1:
            for i in range(1, n - 1):
                out[p, i, 0] = (a[p, i + 1, 0] - 2.0 * a[p, i, 0] + a[p, i - 1, 0]) * inv
        else:
            for i in range(1, n - 1):
                for q in range(post):
                    out[p, i, q] = (a[p, i + 1, q] - 2.0 * a[p, i, q] + a[p, i - 1, q]) * inv
        for q in range(post):
            if periodic:
                out[p, 0, q] = (a[p, 1, q] - 2.0 * a[p, 0, q] + a[p, n - 1, q]) * inv
                out[p, n - 1, q] = (a[p, 0, q] - 2.0 * a[p, n - 1, q] + a[p, n - 2, q]) * inv
            else:
                out[p, 0, q] = (
                    2.0 * a[p, 0, q] - 5.0 * a[p, 1, q] + 4.0 * a[p, 2, q] - a[p, 3, q]
                ) * inv
                out[p, n - 1, q] = (
                    2.0 * a[p, n - 1, q] - 5.0 * a[p, n - 2, q] + 4.0 * a[p, n - 3, q] - a[p, n - 4, q]
                ) * inv
    return out


def _d1_into_loops(a, h, periodic, out, k):
    """First derivative along axis 2 of ``a = (c, pre, n, post)`` into ``out[c, k, :]``.

    ``out`` is the contiguous ``(c, d, pre * n * post)`` gradient buffer.
    """
    nc, pre, n, post = a.shape
    inv = 1.0 / (2.0 * h)
    for c in range(nc):
        o = out[c, k]
        for p in numba.prange(pre):
            base = p * n * post
            if post == 1:
                for i in range(1, n - 1):
                    o[base + i] = (a[c, p, i + 1, 0] - a[c, p, i - 1, 0]) * inv
            else:
                for i in range(1, n - 1):
                    row = base + i * post
                    for q in range(post):
                        o[row + q] = (a[c, p, i + 1, q] - a[c, p, i - 1, q]) * inv
            last = base + (n - 1) * post
            for q in range(post):
                if periodic:
                    o[base + q] = (a[c, p, 1, q] - a[c, p, n - 1, q]) * inv
                    o[last + q] = (a[c, p, 0, q] - a[c, p, n - 2, q]) * inv
                else:
                    o[base + q] = (-3.0 * a[c, p, 0, q] + 4.0 * a[c, p, 1, q] - a[c, p, 2, q]) * inv
                    o[last + q] = (3.0 * a[c, p, n - 1, q] - 4.0 * a[c, p, n - 2, q] + a[c, p, n - 3, q]) * inv


# below this size the thread launch costs more than it saves
PARALLEL_MIN_SIZE = 1 << 17

if numba is not None:
    _d1_serial = numba.njit(cache=True)(_d1_loops)
    _d2_serial = numba.njit(cache=True)(_d2_loops)
    _d1_parallel = numba.njit(parallel=True, cache=True)(_d1_loops)
    _d2_parallel = numba.njit(parallel=True, cache=True)(_d2_loops)
    _d1_into_serial = numba.njit(cache=True)(_d1_into_loops)
    _d1_into_parallel = numba.njit(parallel=True, cache=True)(_d1_into_loops)


def _numba_kernel(serial, parallel, size):
    if size >= PARALLEL_MIN_SIZE and numba.get_num_threads() > 1:
        return parallel
    return serial


# --------------------------------------------------------------------------
# pointwise contractions (spatial axes flattened to one)
# --------------------------------------------------------------------------

def _transport_numpy(F, u, gu, gF):
    d = F.shape[0]
    out = gu[:, None, 0] * F[None, 0]
    for k in range(d):
        if k:
            out += gu[:, None, k] * F[None, k]
        out -= u[k] * gF[:, :, k]
    return out


def _outer_numpy(A, B):
    out = A[:, None, 0] * B[None, :, 0]
    for k in range(1, A.shape[1]):
        out += A[:, None, k] * B[None, :, k]
    return out


def _transport_loops(F, u, gu, gF):
    d = F.shape[0]
    m = F.shape[2]
    out = np.empty_like(F)
    for i in range(d):
        for j in range(d):
            row = out[i, j]
            for p in range(m):
                row[p] = gu[i, 0, p] * F[0, j, p]
            for k in range(d):
                if k:
                    for p in range(m):
                        row[p] += gu[i, k, p] * F[k, j, p]
                for p in range(m):
                    row[p] -= u[k, p] * gF[i, j, k, p]
    return out


def _outer_loops(A, B):
    d = A.shape[0]
    m = A.shape[2]
    out = np.empty_like(A)
    for i in range(d):
        for j in range(d):
            row = out[i, j]
            for p in range(m):
                row[p] = A[i, 0, p] * B[j, 0, p]
            for k in range(1, d):
                for p in range(m):
                    row[p] += A[i, k, p] * B[j, k, p]
    return out


def _flux_numpy(rho, u, F, P):
    d = F.shape[0]
    out = np.empty_like(F)
    for i in range(d):
        for j in range(i, d):
            ff = F[i, 0] * F[j, 0]
            for k in range(1, d):
                ff += F[i, k] * F[j, k]
            val = rho * (u[i] * u[j] - ff)
            if i == j:
                val += P
            out[i, j] = val
            out[j, i] = val
    return out


def _flux_loops(rho, u, F, P):
    d = F.shape[0]
    m = F.shape[2]
    out = np.empty_like(F)
    for i in range(d):
        for j in range(i, d):
            row = out[i, j]
            for p in range(m):
                row[p] = F[i, 0, p] * F[j, 0, p]
            for k in range(1, d):
                for p in range(m):
                    row[p] += F[i, k, p] * F[j, k, p]
            for p in range(m):
                row[p] = rho[p] * (u[i, p] * u[j, p] - row[p])
            if i == j:
                for p in range(m):
                    row[p] += P[p]
            else:
                out[j, i, :] = row
    return out


if numba is not None:
    _flux_jit = numba.njit(cache=True)(_flux_loops)
    _transport_jit = numba.njit(cache=True)(_transport_loops)
    _outer_jit = numba.njit(cache=True)(_outer_loops)


def transport(F: np.ndarray, u: np.ndarray, gu: np.ndarray, gF: np.ndarray) -> np.ndarray:
    """``(grad u) F - (u . grad) F`` given ``gu[i, k] = d_k u_i`` and ``gF[i, j, k] = d_k F_ij``."""
    d = F.shape[0]
    shape = F.shape
    m = math.prod(shape[2:])
    F2 = np.ascontiguousarray(F).reshape(d, d, m)
    u2 = np.ascontiguousarray(u).reshape(d, m)
    g2 = np.ascontiguousarray(gu).reshape(d, d, m)
    gF2 = np.ascontiguousarray(gF).reshape(d, d, d, m)
    if _backend == "numba":
        out = _transport_jit(F2, u2, g2, gF2)
    else:
        out = _transport_numpy(F2, u2, g2, gF2)
    return out.reshape(shape)


def momentum_flux(rho: np.ndarray, u: np.ndarray, F: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``rho u u^T + P I - rho F F^T`` pointwise."""
    d = F.shape[0]
    shape = F.shape
    m = math.prod(shape[2:])
    args = (np.ascontiguousarray(rho).reshape(m), np.ascontiguousarray(u).reshape(d, m),
            np.ascontiguousarray(F).reshape(d, d, m), np.ascontiguousarray(P).reshape(m))
    out = _flux_jit(*args) if _backend == "numba" else _flux_numpy(*args)
    return out.reshape(shape)


def outer_rows(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``(A B^T)_ij = sum_k A_ik B_jk`` pointwise."""
    d = A.shape[0]
    shape = A.shape
    m = math.prod(shape[2:])
    A2 = np.ascontiguousarray(A).reshape(d, d, m)
    B2 = np.ascontiguousarray(B).reshape(d, d, m)
    out = _outer_jit(A2, B2) if _backend == "numba" else _outer_numpy(A2, B2)
    return out.reshape(shape)


def _as3(a: np.ndarray, axis: int) -> np.ndarray:
    shape = a.shape
    pre = math.prod(shape[:axis])
    post = math.prod(shape[axis + 1:])
    if a.dtype != np.float64 or not a.flags.c_contiguous:
        a = np.ascontiguousarray(a, dtype=np.float64)
    return a.reshape(pre, shape[axis], post)


def grad(a: np.ndarray, lead: int, spacing, periodic: bool) -> np.ndarray:
    """All first derivatives: output ``[..., k, x]`` for ``lead`` component axes."""
    shape = a.shape
    spatial = shape[lead:]
    d = len(spatial)
    out = np.empty(shape[:lead] + (d,) + spatial)
    if _backend != "numba":
        for k in range(d):
            out[(slice(None),) * lead + (k,)] = d1(a, lead + k, spacing[k], periodic)
        return out
    if a.dtype != np.float64 or not a.flags.c_contiguous:
        a = np.ascontiguousarray(a, dtype=np.float64)
    nc = math.prod(shape[:lead])
    a_c = a.reshape((nc,) + spatial)
    o_c = out.reshape(nc, d, math.prod(spatial))
    kernel = _d1_into_parallel if a.size >= PARALLEL_MIN_SIZE and numba.get_num_threads() > 1 else _d1_into_serial
    for k in range(d):
        pre = math.prod(spatial[:k])
        post = math.prod(spatial[k + 1:])
        kernel(a_c.reshape(nc, pre, spatial[k], post), float(spacing[k]), bool(periodic), o_c, k)
    return out


def d1(a: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    """Second-order first derivative of ``a`` along array axis ``axis``."""
    a3 = _as3(a, axis)
    if _backend == "numba":
        out = _numba_kernel(_d1_serial, _d1_parallel, a3.size)(a3, float(h), bool(periodic))
    else:
        out = _d1_numpy(a3, h, periodic)
    return out.reshape(a.shape)


def d2(a: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    """Second-order compact second derivative of ``a`` along ``axis``."""
    a3 = _as3(a, axis)
    if _backend == "numba":
        out = _numba_kernel(_d2_serial, _d2_parallel, a3.size)(a3, float(h), bool(periodic))
    else:
        out = _d2_numpy(a3, h, periodic)
    return out.reshape(a.shape)
