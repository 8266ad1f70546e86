"""Time the compiled kernels against their plain-numpy source.

Both paths run in one process: the numba dispatcher keeps the original
Python function on ``.py_func``.  Compilation happens before timing.

    python3 benchmarks/bench_kernels.py --repeat 5
"""

import argparse
import time

import numpy as np

from optotomo import _accel, _kernels
from optotomo.model import SystemParams
from optotomo.sim import build_generator, default_dt
from optotomo.states import coherent_state


def sse_case(dim, steps):
    params = SystemParams(gamma=0.5, n_th=0.3, mu=50.0, eta=0.9, chi=8.0)
    gen = build_generator(params, dim)
    dt = default_dt(params)
    noise = np.random.default_rng(0).standard_normal((steps, _kernels.NOISE_COLUMNS))
    psi0 = coherent_state(1.0 + 0.5j, dim).amplitudes.astype(np.complex128)
    q = np.zeros(steps)

    def run(fn):
        psi = psi0.copy()
        fn(psi, gen.diag * dt, gen.c_minus, gen.c_plus, gen.s_hom, gen.s_het, gen.k_lower, gen.k_raise,
           noise, 0, steps, dt, 1.0, q, q.copy(), 0)
    return run


def bargmann_case(dim):
    args = (0.1 + 0.0j, 0.3 + 0.0j, 0.1 + 0.0j, 0.5 + 0.2j, 0.5 - 0.2j, -2.0 + 0.0j, dim)
    return lambda fn: fn(*args)


def wigner_case(dim, points):
    rho = np.outer(coherent_state(2.0, dim).amplitudes, coherent_state(2.0, dim).amplitudes.conj())
    x = np.linspace(-5, 5, points)
    return lambda fn: fn(rho, x, x[::-1].copy())


def best_time(run, fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        run(fn)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--dim", type=int, default=40)
    parser.add_argument("--steps", type=int, default=20000)
    parser.add_argument("--points", type=int, default=20000)
    args = parser.parse_args()

    cases = {
        "sse_segment": (_kernels.sse_segment, sse_case(args.dim, args.steps)),
        "bargmann_elements": (_kernels.bargmann_elements, bargmann_case(4 * args.dim)),
        "wigner_points": (_kernels.wigner_points, wigner_case(args.dim, args.points)),
    }
    print(f"backend: {_accel.BACKEND}")
    print(f"{'kernel':<20}{'numpy [s]':>12}{'compiled [s]':>14}{'speedup':>10}")
    for name, (fn, run) in cases.items():
        plain = fn.py_func
        t_plain = best_time(run, plain, args.repeat)
        if _accel.HAS_NUMBA:
            run(fn)  # compile
            t_fast = best_time(run, fn, args.repeat)
            print(f"{name:<20}{t_plain:>12.4f}{t_fast:>14.4f}{t_plain / t_fast:>10.1f}")
        else:
            print(f"{name:<20}{t_plain:>12.4f}{'n/a':>14}{'':>10}")


if __name__ == "__main__":
    main()
