"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json FILE]

Inputs are the shapes the solver actually sees: gamma-vector stacks for the
dominance filter, MOGA populations for the ranking, and the desk scenario's
window-pair system for the transition builder.
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from stackpomg import kernels
from stackpomg.history import enumerate_windows
from stackpomg.policy import uniform_policy
from stackpomg.scenario import build_model, enumerate_deterministic


def _cases(rng: np.random.Generator):
    cases = {}
    for n, d in ((200, 6), (2000, 6), (2000, 16)):
        V = rng.uniform(0, 10, size=(n, d))
        V = V[np.lexsort(V.T[::-1])]
        cases[f"dominance_keep_mask n={n} d={d}"] = ("dominance_keep_mask", (V, 1e-10))
    for n in (32, 256, 1024):
        F = rng.integers(0, 20, size=(n, 2)).astype(float)
        cases[f"nondominated_ranks n={n}"] = ("nondominated_ranks", (F,))
    m = build_model()
    lp = enumerate_deterministic(m)[25]
    fs = enumerate_windows(m, "follower")
    fp = uniform_policy(fs, m.shape[3])
    costs = np.concatenate([m.leader_costs, m.follower_cost[None]], axis=0)
    args = (lp.space.state_of, fs.state_of, lp.table, fp.table, lp.space.succ, fs.succ,
            m.dynamics, costs)
    cases[f"pair_transitions desk {len(lp.space)}x{len(fs)}"] = ("pair_transitions", args)
    return cases


def _best(fn, args, repeat: int) -> float:
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write the timings to this file")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy fallback is timed", file=sys.stderr)
    rows = []
    for label, (name, call_args) in _cases(np.random.default_rng(args.seed)).items():
        times = {b: _best(getattr(mod, name), call_args, args.repeat) for b, mod in backends.items()}
        rows.append({"case": label, **{f"{b}_s": t for b, t in times.items()}})

    width = max(len(r["case"]) for r in rows)
    head = f"{'case':<{width}}  {'python':>11}"
    if "cython" in backends:
        head += f"  {'cython':>11}  {'speedup':>8}"
    print(head)
    for r in rows:
        line = f"{r['case']:<{width}}  {r['python_s'] * 1e3:>9.3f}ms"
        if "cython_s" in r:
            line += f"  {r['cython_s'] * 1e3:>9.3f}ms  {r['python_s'] / r['cython_s']:>7.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
