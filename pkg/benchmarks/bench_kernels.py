"""Compare the compiled kernels with the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each kernel runs on the workload it sees inside the library: the noisy
dual recursion on 2x2 and 20x20 problems, bilinear drift lookups for one
Euler–Maruyama chunk, and the bridge-marginal mixture on the 201-point
grid at an early and a late time. Reports the best of ``--repeat`` timings
and the largest output difference between the two backends.
"""
from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from sinkflow import _fallback, bridge, instances

try:
    from sinkflow import _kernels
except ImportError:
    _kernels = None


def _recursion_case(n, eps, steps, seed=0):
    rng = np.random.default_rng(seed)
    ref = instances.random_instance(rng, n, n, eps) if n > 2 else instances.asymmetric_2x2()
    gammas = np.full(steps, 0.05)
    pert = 0.2 * rng.standard_normal((steps, ref.shape[1]))
    args = (ref.log_density, ref.log_mu, ref.log_nu, np.zeros(ref.shape[1]), gammas, pert)
    return f"dual_recursion {n}x{n}, {steps} steps", "dual_recursion", args, lambda out: out[0]


def _interp_case(n_particles=25_000):
    rng = np.random.default_rng(1)
    values = rng.standard_normal((99, 201))
    x = rng.uniform(-4.5, 4.5, n_particles)
    out = np.empty(n_particles)
    args = (values, 0.01, 0.01, -4.0, 0.04, 0.37, x, out)
    return f"interp_bilinear {n_particles} points", "interp_bilinear", args, lambda o: o.copy()


def _mixture_case(t):
    problem = bridge.gaussian_problem()
    pot = bridge.static_bridge(problem)
    lw = np.ascontiguousarray(pot.coupling().log_density)
    z = problem.grid
    args = (lw, z, z, t, t * (1.0 - t), z)
    return f"mixture_logpdf 201x201 pairs, t={t}", "mixture_logpdf", args, lambda o: np.concatenate(o)


def _best(fn, args, repeat):
    number = 1
    while timeit.timeit(lambda: fn(*args), number=number) < 0.2 and number < 10_000:
        number *= 2
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--quick", action="store_true", help="smaller workloads")
    args = p.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    steps = 200 if args.quick else 2000
    cases = [
        _recursion_case(2, 0.5, steps),
        _recursion_case(20, 0.1, steps),
        _interp_case(),
        _mixture_case(0.05),
        _mixture_case(0.5),
    ]
    print(f"{'kernel':<42}{'cython':>12}{'numpy':>12}{'speedup':>10}{'max diff':>11}")
    for label, name, fargs, pick in cases:
        fast, slow = getattr(_kernels, name), getattr(_fallback, name)
        diff = float(np.max(np.abs(pick(fast(*fargs)) - pick(slow(*fargs)))))
        tc, tp = _best(fast, fargs, args.repeat), _best(slow, fargs, args.repeat)
        print(f"{label:<42}{tc * 1e3:>10.3f}ms{tp * 1e3:>10.3f}ms{tp / tc:>9.1f}x{diff:>11.1e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
