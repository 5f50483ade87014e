"""Time the numba and numpy implementations of every registered kernel.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs on the same inputs under both backends; the table reports the
best wall time of ``--repeat`` runs and the speed-up.  The numba kernels are
called once before timing so compilation is excluded.
"""

import argparse
import json
import sys
import timeit
from pathlib import Path

import numpy as np

from lifgibbs import _accel, markov
from lifgibbs.params import load_params

FIXTURE = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "canonical.cfg"


def workloads(params):
    """Argument tuples for each kernel, sized so the numpy path takes ~0.1-1 s."""
    rng = np.random.default_rng(0)
    n = params.n_neurons
    w, inp = np.ascontiguousarray(params.weights), np.ascontiguousarray(params.inputs)
    steps = 20_000
    chain = markov.build_chain(params, 6)
    an = markov.stationary(chain)
    mat = np.exp(chain.log_weights)
    cum = np.cumsum(markov.transition_matrix(an, chain), axis=1)
    codes = rng.integers(0, 1 << n, 10**6)

    def advance():
        return (np.zeros(n), rng.standard_normal((steps, n)), w, inp, params.leak, params.threshold,
                params.noise_amp, np.empty(steps, dtype=np.int64), np.empty((0, n)), False)

    return {
        "advance": (advance, f"simulate {steps} steps, N={n}"),
        "sliding_words": (lambda: (codes, 5, n), "10^6 patterns, windows of 5"),
        "moments_table": (lambda: (w, inp, params.leak, params.noise_amp, 8), "depth 8, 2^16 histories"),
        "power_iteration": (lambda: (mat, chain.successors, np.ones(chain.n_states), True, 1e-12, 100_000,
                                     markov.GROWTH_WINDOW), f"{chain.n_states} states"),
        "sample_chain": (lambda: (cum, 0, rng.random(20_000), n, 6, np.empty(20_000, dtype=np.int64)),
                         "20000 chain steps, R=6"),
    }


def best_time(fn, make_args, repeat):
    return min(timeit.repeat(lambda: fn(*make_args()), number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", default=None, help="also write the results as JSON")
    args = parser.parse_args(argv)

    if not _accel.HAVE_NUMBA:
        print("numba is not active; only the numpy kernels will be timed", file=sys.stderr)
    rows = []
    for name, (make_args, label) in workloads(load_params(FIXTURE)).items():
        impls = _accel.KERNELS[name]
        row = {"kernel": name, "workload": label}
        for backend in ("numba", "numpy"):
            fn = impls[backend]
            if fn is None:
                row[backend] = None
                continue
            fn(*make_args())  # compile / warm caches
            row[backend] = best_time(fn, make_args, args.repeat)
        rows.append(row)

    print(f"{'kernel':<16} {'workload':<32} {'numba [s]':>10} {'numpy [s]':>10} {'speed-up':>9}")
    for r in rows:
        nb, np_ = r["numba"], r["numpy"]
        speed = f"{np_ / nb:9.1f}" if nb else f"{'-':>9}"
        nb_s = f"{nb:10.4f}" if nb is not None else f"{'-':>10}"
        print(f"{r['kernel']:<16} {r['workload']:<32} {nb_s} {np_:10.4f} {speed}")
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
