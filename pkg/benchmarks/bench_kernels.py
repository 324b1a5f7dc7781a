"""Compiled versus pure-Python kernels on the solver's hot paths.

    python3 benchmarks/bench_kernels.py [--steps 20000] [--n 1000] [--space sphere|euclidean]

Exits with status 1 if the kernel sets disagree on the ``run_steps`` outputs.
"""
import argparse
import time

import numpy as np

from swb._backend import available
from swb.support import BoundingBox, mesh_grid, sphere_lattice


def _time(fn, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def problem(steps, n, space, J=4):
    """Atoms, samples and measure indices shared by every kernel set."""
    rng = np.random.default_rng(0)
    sphere = space == "sphere"
    if sphere:
        grid = sphere_lattice(n)
        X = rng.standard_normal((steps, 3))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
    else:
        grid = mesh_grid(BoundingBox([-3.0, -3.0], [3.0, 3.0]), n)
        X = rng.standard_normal((steps, 2))
    return grid.atoms, sphere, X, rng.integers(J, size=steps), J


def run_steps(k, atoms, sphere, X, js, J, gamma=0.1):
    n, steps = atoms.shape[0], X.shape[0]
    s = np.zeros(n)
    V = np.zeros((J, n))
    tr = k.MinTracker(s)
    iw = np.empty(steps, dtype=np.int64)
    im = np.empty(steps, dtype=np.int64)
    k.run_steps(s, V, tr, atoms, sphere, js, X, gamma, J, iw, im, 0.0, 0.0)
    return s, V, iw, im


def bench(k, atoms, sphere, X, js, J):
    n, steps = atoms.shape[0], X.shape[0]

    def heap():
        rng = np.random.default_rng(1)
        tr = k.MinTracker(np.zeros(n))
        for i, dv in zip(rng.integers(n, size=steps), rng.standard_normal(steps)):
            tr.update(int(i), float(dv))
            tr.argmin()

    return {
        "run_steps": _time(lambda: run_steps(k, atoms, sphere, X, js, J)),
        "c_transform_batch": _time(lambda: k.c_transform_batch(X, atoms, np.zeros(n), sphere)),
        "tracker": _time(heap),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--space", choices=["sphere", "euclidean"], default="euclidean")
    args = ap.parse_args()
    atoms, sphere, X, js, J = problem(args.steps, args.n, args.space)
    kernels = available()
    rows = {k.NAME: bench(k, atoms, sphere, X, js, J) for k in kernels}
    names = list(rows)
    print(f"space={args.space} steps={args.steps} n={atoms.shape[0]}")
    print(f"{'kernel':<20}" + "".join(f"{nm:>14}" for nm in names) + ("   speedup" if len(names) > 1 else ""))
    for op in rows[names[0]]:
        line = f"{op:<20}" + "".join(f"{rows[nm][op] * 1e3:>12.1f}ms" for nm in names)
        if len(names) > 1:
            line += f"   {rows[names[-1]][op] / rows[names[0]][op]:>7.1f}x"
        print(line)
    outs = [run_steps(k, atoms, sphere, X, js, J) for k in kernels]
    agree = all(np.array_equal(a, b) for o in outs[1:] for a, b in zip(outs[0], o))
    print(f"run_steps outputs identical across kernels: {agree}")
    if not agree:
        raise SystemExit(1)


if __name__ == "__main__":
    main()
