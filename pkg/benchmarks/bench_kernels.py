"""Compare the numba kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--n 128] [--repeat 20]

Each kernel is timed on both backends after a warm-up call (which also pays
the JIT cost); the best of ``--repeat`` runs is reported.
"""
import argparse
import math
import timeit

import numpy as np

from vflab import GridSpec, MaterialParams, TimeStepperConfig, advance
from vflab import _kernels
from vflab.compat import gen_initial_from_displacement, standard_displacement
from vflab.dynamics import rhs_full_a


def cases(n: int):
    rng = np.random.default_rng(0)
    g = GridSpec.uniform(2, n, 2 * math.pi)
    s = gen_initial_from_displacement(standard_displacement(1e-2), g)
    rho, u, F = (a.copy() for a in s.arrays())
    gu = rng.standard_normal((2, 2) + g.shape)
    gF = rng.standard_normal((2, 2, 2) + g.shape)
    P = rho ** 1.4
    h = g.spacing[0]
    p = MaterialParams(0.1, 0.1)
    cfg = TimeStepperConfig(dt=1e-3, t_end=1e-3)
    return {
        "d1": lambda: _kernels.d1(F, 2, h, True),
        "d2": lambda: _kernels.d2(F, 2, h, True),
        "grad(F)": lambda: _kernels.grad(F, 2, g.spacing, True),
        "transport": lambda: _kernels.transport(F, u, gu, gF),
        "momentum_flux": lambda: _kernels.momentum_flux(rho, u, F, P),
        "rhs_full": lambda: rhs_full_a(rho, u, F, g, p),
        "rk4 step": lambda: advance(s, cfg, p),
    }


def bench(n: int, repeat: int) -> None:
    saved = _kernels.backend()
    table = {}
    for name in ("numpy", "numba"):
        try:
            _kernels.set_backend(name)
        except (ValueError, ImportError) as exc:
            print(f"skipping {name}: {exc}")
            continue
        for label, fn in cases(n).items():
            fn()
            best = min(timeit.repeat(fn, number=1, repeat=repeat))
            table.setdefault(label, {})[name] = best
    _kernels.set_backend(saved)
    print(f"grid {n}x{n}, best of {repeat}")
    print(f"{'kernel':<16}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for label, row in table.items():
        a, b = row.get("numpy"), row.get("numba")
        speed = f"{a / b:.2f}x" if a and b else "-"
        print(f"{label:<16}{(a or math.nan) * 1e3:>12.3f}{(b or math.nan) * 1e3:>12.3f}{speed:>10}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    bench(args.n, args.repeat)


if __name__ == "__main__":
    main()
