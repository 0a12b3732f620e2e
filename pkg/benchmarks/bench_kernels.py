"""Time the numba kernels against their numpy fallbacks.

Kernel pairs are called directly (``*_nb`` vs ``*_np``). The end-to-end rows
run a fit and a short Monte Carlo cell in fresh interpreters, once per value
of ROBCUSUM_DISABLE_NUMBA, so the whole package goes through each backend.

    python benchmarks/bench_kernels.py [--n 2000] [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from robcusum import kernels
from robcusum.model import GarchParams, simulate

END_TO_END = """
import time
from robcusum import fit, simulate, GarchParams
from robcusum.mcstudy import McScenario, TestConfig, run_scenario
from robcusum.detect import TestKind
x = simulate(GarchParams(1, 0.3, 0.4), {n}, seed=1)
fit(x[:100]); fit(x[:100], 0.1)  # warm-up / compile
t = time.perf_counter(); fit(x); fit(x, 0.1); a = time.perf_counter() - t
s = McScenario(GarchParams(1, 0.3, 0.4), {n}, (TestConfig(TestKind.CUSUM_NAIVE),
               TestConfig(TestKind.SN_ROBUST, 0.1, 9.0)), reps=100, seed=3)
t = time.perf_counter(); run_scenario(s); b = time.perf_counter() - t
print(a, b)
"""


def best_of(func, repeat: int) -> float:
    func()  # compile / warm caches
    number = max(1, int(0.2 / max(timeit.timeit(func, number=1), 1e-6)))
    return min(timeit.repeat(func, number=number, repeat=repeat)) / number


def kernel_rows(n: int, repeat: int):
    x = simulate(GarchParams(1.0, 0.3, 0.4), n, seed=0)
    x2 = x * x
    v = float(x2.mean())
    rng = np.random.default_rng(1)
    eps = rng.standard_normal(n)
    ones = np.ones(n)
    z = rng.standard_normal(10_000)
    u1, u2 = rng.random(10_000), rng.random(10_000)
    cases = {
        "garch_variance": lambda k: k(x2, 1.0, 0.3, 0.4, v),
        "garch_loss_grad (QMLE)": lambda k: k(x2, 1.0, 0.3, 0.4, v, 0.0),
        "garch_loss_grad (DPD)": lambda k: k(x2, 1.0, 0.3, 0.4, v, 0.1),
        "garch_simulate": lambda k: k(eps, ones, 0.3 * ones, 0.4 * ones, 1.0 / 0.3),
        "cusum_abs": lambda k: k(x2),
        "self_normalizer": lambda k: k(x2),
        "sn_max": lambda k: k(x2),
        "bridge_sup (grid 1e4)": lambda k: k(z, u1, u2, True),
    }
    for label, call in cases.items():
        name = label.split(" ")[0]
        nb = getattr(kernels, name + "_nb")
        np_ = getattr(kernels, name + "_np")
        yield label, best_of(lambda: call(nb), repeat), best_of(lambda: call(np_), repeat)


def end_to_end(n: int, disable: bool):
    env = dict(os.environ, ROBCUSUM_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", END_TO_END.format(n=n)], env=env,
                         capture_output=True, text=True, check=True).stdout.split()
    return float(out[0]), float(out[1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000, help="series length")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args(argv)

    print(f"{'kernel (n=%d)' % args.n:<28}{'numba':>12}{'numpy':>12}{'speedup':>9}")
    for label, t_nb, t_np in kernel_rows(args.n, args.repeat):
        print(f"{label:<28}{t_nb * 1e6:>10.1f}us{t_np * 1e6:>10.1f}us{t_np / t_nb:>8.1f}x")
    if not args.skip_end_to_end:
        nb = end_to_end(args.n, False)
        np_ = end_to_end(args.n, True)
        for label, a, b in (("fit QMLE + MDPDE", nb[0], np_[0]),
                            ("MC cell, 100 reps", nb[1], np_[1])):
            print(f"{label:<28}{a * 1e3:>10.1f}ms{b * 1e3:>10.1f}ms{b / a:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
