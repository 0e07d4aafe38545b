#!/usr/bin/env python3
"""Time full Gibbs scans under each computational backend.

Runs the same seeded chain on the bundled 51-state problem with the
compiled kernel and the pure-Python fallback, reports the per-scan cost
of each, and confirms the two traces are bit-identical.

    python3 benchmarks/bench_sweep.py --iterations 300 --repeats 3
"""

import argparse
import time

import numpy as np

from sccreg import kernels
from sccreg.composition import build_design
from sccreg.sampler import default_config, run_chain
from sccreg.simulate import generate_dataset, setting_one, us_state_graph


def build_problem(iterations, lam, seed):
    design_spec = setting_one(partition="disjoint", replicates=1, seed=seed)
    dataset, _ = generate_dataset(design_spec, 0)
    design, _ = build_design(dataset)
    graph = us_state_graph()
    cfg = default_config(
        design, lam=lam, seed=seed, iterations=iterations, burn_in=0
    )
    return design, graph, cfg


def time_backend(name, design, graph, cfg, repeats):
    kernels.set_backend(name)
    trace = run_chain(design, graph, cfg)  # warm-up and correctness capture
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        run_chain(design, graph, cfg)
        best = min(best, time.perf_counter() - start)
    return trace, best


def traces_identical(a, b):
    if a.n_draws != b.n_draws or not np.array_equal(a.loglik, b.loglik):
        return False
    for (_, sa), (_, sb) in zip(a.snapshots, b.snapshots):
        if not (
            np.array_equal(sa.z, sb.z)
            and np.array_equal(sa.betas, sb.betas)
            and np.array_equal(sa.sigma2s, sb.sigma2s)
            and np.array_equal(sa.eta, sb.eta)
        ):
            return False
    return True


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--iterations", type=int, default=300)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--lam", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    design, graph, cfg = build_problem(args.iterations, args.lam, args.seed)
    names = kernels.available_backends()
    previous = kernels.active_backend()
    results = {}
    try:
        for name in names:
            trace, best = time_backend(name, design, graph, cfg, args.repeats)
            results[name] = (trace, best)
    finally:
        kernels.set_backend(previous)

    print(f"problem: n={design.n}, {args.iterations} scans, "
          f"lambda={args.lam}, best of {args.repeats}")
    print(f"{'backend':<10} {'total s':>10} {'us per scan':>14}")
    for name in names:
        _, best = results[name]
        print(f"{name:<10} {best:>10.3f} {1e6 * best / args.iterations:>14.1f}")
    if len(names) == 2:
        fast, slow = (results[n][1] for n in names)
        if fast > slow:
            fast, slow = slow, fast
        print(f"speedup: {slow / fast:.1f}x")
        same = traces_identical(results[names[0]][0], results[names[1]][0])
        print(f"traces bit-identical: {'yes' if same else 'NO'}")
        if not same:
            raise SystemExit(1)


if __name__ == "__main__":
    main()
