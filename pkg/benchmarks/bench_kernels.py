"""Compare the compiled kernels with the numpy/scipy fallback.

    python benchmarks/bench_kernels.py [--n 400] [--repeat 20]

Times ``log_kv`` and ``gig_terms`` on arrays shaped like one E-step block
(one value of the index, N arguments), checks that both backends agree,
and times a short EM run under each backend in a subprocess.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from skewcwm._backend import compiled_kernels, python_kernels

EM_SNIPPET = """
import time, numpy as np
from skewcwm import toolkit, cwm, EMControls, parse_model, BACKEND
spec, params = toolkit.preset("table1-ghgh")
data = toolkit.simulate_cwm(spec, params, 400, np.random.default_rng(1))
z0 = toolkit.protocol_inits(data, 2, np.random.default_rng(0))[-1]
t = time.perf_counter()
rep = cwm.fit(parse_model("GH-GH", 2, data.d, data.p), data, z0, EMControls(max_iter=50))
print(BACKEND, rep.n_iter, time.perf_counter() - t)
"""


def _time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-em", action="store_true")
    args = ap.parse_args(argv)
    if compiled_kernels is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
        return 1

    rng = np.random.default_rng(0)
    n = args.n
    b = rng.gamma(2.0, 2.0, n) + 1e-3
    nu = np.full(n, 2.3)
    cases = [("GH-like  lam=-1.2 a=4", -1.2, 4.0), ("ST-like  lam=-4.5 a=0.3", -4.5, 0.3), ("VG-like  lam=3.5 a=9", 3.5, 9.0)]

    print(f"{'kernel':34s} {'compiled':>12s} {'python':>12s} {'speed-up':>9s} {'max rel diff':>13s}")
    tc = _time(lambda: compiled_kernels.log_kv(nu, b), args.repeat)
    tp = _time(lambda: python_kernels.log_kv(nu, b), args.repeat)
    diff = np.max(np.abs(compiled_kernels.log_kv(nu, b) / python_kernels.log_kv(nu, b) - 1.0))
    print(f"{'log_kv (nu=2.3)':34s} {tc * 1e6:10.1f}us {tp * 1e6:10.1f}us {tp / tc:8.1f}x {diff:13.2e}")
    for label, lam, a in cases:
        for level in (0, 2):
            tc = _time(lambda: compiled_kernels.gig_terms(lam, a, b, level), args.repeat)
            tp = _time(lambda: python_kernels.gig_terms(lam, a, b, level), args.repeat)
            rc = compiled_kernels.gig_terms(lam, a, b, level)
            rp = python_kernels.gig_terms(lam, a, b, level)
            k = 1 if level == 0 else 4
            diff = max(np.max(np.abs(rc[j] - rp[j]) / np.maximum(np.abs(rp[j]), 1.0)) for j in range(k))
            name = f"gig_terms {label} L{level}"
            print(f"{name:34s} {tc * 1e6:10.1f}us {tp * 1e6:10.1f}us {tp / tc:8.1f}x {diff:13.2e}")

    if not args.skip_em:
        print("\n50 EM iterations, GH-GH, N=400 (backend, iterations, seconds):")
        for pure in ("", "1"):
            env = dict(os.environ, SKEWCWM_PURE_PYTHON=pure)
            if not pure:
                env.pop("SKEWCWM_PURE_PYTHON")
            out = subprocess.run([sys.executable, "-c", EM_SNIPPET], env=env, capture_output=True, text=True)
            print("  " + (out.stdout.strip() or out.stderr.strip().splitlines()[-1]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
