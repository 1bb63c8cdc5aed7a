"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20]

Also times one end-to-end 30-step Case 2 run in a fresh process per backend
(the backend is fixed at import, so the env flag has to be set up front).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from diffsync import _kernels

END_TO_END = """
import time
import numpy as np
from diffsync import GaussianMixture, GMMPredictor, backend, make_flip, make_identity, make_multiplane, make_schedule, run_case
shape = (128, 128)
ops = [make_multiplane(shape, 10, t) for t in (make_identity(shape), make_flip(shape, 1))]
gmm = GaussianMixture([0.3, 0.7], [np.full(shape, -1.5), np.full(shape, 1.0)], [0.05, 0.05], pixelwise=True)
sched = make_schedule(num_steps=30)
run_case(2, ops, GMMPredictor(gmm), sched, 0)
t0 = time.perf_counter()
run_case(2, ops, GMMPredictor(gmm), sched, 1)
print(backend(), time.perf_counter() - t0)
"""


def _best(fn, repeat):
    fn()  # warm up (and compile)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    if not _kernels.HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    P, K = 256 * 256, 3
    x = rng.normal(size=P)
    means = rng.normal(size=(K, P))
    log_w = np.log(np.full(K, 1.0 / K))
    var = np.array([0.05, 0.2, 0.5])
    idx = rng.integers(0, P // 2, size=P).astype(np.int64)

    cases = {
        "posterior mean (256x256, K=3)": (
            lambda: _kernels.pixelwise_posterior_mean_numpy(x, 0.5, 0.75, log_w, means, var),
            lambda: _kernels.pixelwise_posterior_mean_numba(x, 0.5, 0.75, log_w, means, var),
        ),
        "scatter mean (65536 -> 32768)": (
            lambda: _kernels.scatter_mean_numpy(x, idx, P // 2),
            lambda: _kernels.scatter_mean_numba(x, idx, P // 2),
        ),
        "rotation table (256x256)": (
            lambda: _kernels.rotation_source_table_numpy(256, 256, 37.0),
            lambda: _kernels.rotation_source_table_numba(256, 256, 37.0),
        ),
    }
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (np_fn, nb_fn) in cases.items():
        a, b = _best(np_fn, args.repeat), _best(nb_fn, args.repeat)
        print(f"{name:32s} {a * 1e3:10.3f} {b * 1e3:10.3f} {a / b:8.2f}")

    print("\nend to end, case 2, 2 views of a 10-plane 128x128 canvas, 30 steps")
    for flag in ("1", "0"):
        env = dict(os.environ, DIFFSYNC_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
        name, secs = out.stdout.split()
        print(f"  {name:6s} {float(secs) * 1e3:9.1f} ms")


if __name__ == "__main__":
    main()
