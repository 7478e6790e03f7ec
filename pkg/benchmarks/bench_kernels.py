"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--n 128] [--repeat 5]
"""

import argparse
import time

import numpy as np

from obslab import _backend, _pykernels
from obslab.discretize import DiscreteSpace, assemble_form, build_grid, classify_cells
from obslab.geometry import Torus


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n):
    grid = build_grid(Torus(2), n)
    form = assemble_form(DiscreteSpace(classify_cells(grid, None)))
    K = form.K.tocsr()
    args = (K.indptr.astype(np.intc), K.indices.astype(np.intc), K.data.astype(float))
    rng = np.random.default_rng(0)
    v = rng.standard_normal(form.dim)
    mass = form.mass.copy()

    def matvec(k):
        return lambda: k.csr_matvec(*args, v)

    def cg(k):
        return lambda: k.cg_shifted(*args, mass, 1.0, v, np.zeros(form.dim), 1e-10, 10 * n)

    def shoot(k):
        return lambda: k.radial_shoot(30.0, 3, 0.01, 0.1, 20000)

    return {"csr_matvec": matvec, "cg_shifted": cg, "radial_shoot": shoot}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=128, help="grid cells per side")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if not _backend.COMPILED:
        print("compiled extension not available; only the fallback is timed")
    backends = [("python", _pykernels)]
    if _backend.COMPILED:
        backends.append(("compiled", _backend.get_kernels(compiled=True)))
    print(f"{'kernel':<14}" + "".join(f"{name:>12}" for name, _ in backends) + f"{'speedup':>10}")
    for label, make in cases(args.n).items():
        times = [best_of(make(k), args.repeat) for _, k in backends]
        speed = f"{times[0] / times[-1]:>9.1f}x" if len(times) > 1 else ""
        print(f"{label:<14}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times) + speed)


if __name__ == "__main__":
    main()
