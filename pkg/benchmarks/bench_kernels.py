"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import timeit

import numpy as np

from ddcmix import _pykernels

try:
    from ddcmix import _ckernels
except ImportError:
    _ckernels = None


def _cases(rng):
    v = rng.normal(size=(15552, 2))
    cdf = np.cumsum(rng.dirichlet(np.ones(3), size=200_000), axis=1)
    u = rng.random(200_000)
    markets = np.arange(200_000)
    k, m = 64, 30
    H = rng.normal(size=(k, m + 1, m))
    cols = np.arange(k)

    def givens(mod):
        Hc, cs, sn, g = H.copy(), np.zeros((k, m)), np.zeros((k, m)), np.ones((k, m + 1))
        for j in range(m):
            mod.givens_step(Hc, cs, sn, g, j, cols)

    return {
        "softmax_rows (15552x2)": lambda mod: mod.softmax_rows(v, 1e-12),
        "logsumexp_rows (15552x2)": lambda mod: mod.logsumexp_rows(v),
        "draw_categorical (200k x 3)": lambda mod: mod.draw_categorical(cdf, u),
        "counter_uniforms (200k)": lambda mod: mod.counter_uniforms(12345, markets, 7, 1),
        "givens_step (64 systems, m=30)": givens,
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<32} {'python (ms)':>12} {'compiled (ms)':>14} {'speedup':>8}")
    for name, fn in cases.items():
        t = {}
        for label, mod in (("python", _pykernels), ("compiled", _ckernels)):
            number = 3
            t[label] = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeats)) / number * 1e3
        print(f"{name:<32} {t['python']:>12.3f} {t['compiled']:>14.3f} {t['python'] / t['compiled']:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
