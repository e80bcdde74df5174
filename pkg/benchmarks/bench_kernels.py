"""Time the compiled kernels against the numpy fallback on toy-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from polyglot_ctc._kernels import _fallback

try:
    from polyglot_ctc._kernels import _core
except ImportError:
    _core = None


def cases(rng):
    T, K, H = 60, 12, 32
    x = rng.normal(size=(T, K))
    log_probs = np.ascontiguousarray(x - np.log(np.exp(x).sum(axis=1, keepdims=True)))
    labels = rng.integers(1, K, size=15)
    ext = np.zeros(2 * len(labels) + 1, dtype=np.int64)
    ext[1::2] = labels
    xproj = rng.normal(size=(T, 4 * H)) * 0.5
    U = rng.uniform(-0.05, 0.05, size=(4 * H, H))
    dh = rng.normal(size=(T, H))

    def setup(mod):
        gates, c, _ = mod.lstm_sweep_forward(xproj, U, False)
        return {
            "ctc_lattice": lambda: mod.ctc_lattice(log_probs, ext),
            "lstm_forward": lambda: mod.lstm_sweep_forward(xproj, U, False),
            "lstm_backward": lambda: mod.lstm_sweep_backward(gates, c, U, dh, False),
        }

    return setup


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    setup = cases(np.random.default_rng(0))
    backends = {"python": setup(_fallback)}
    if _core is not None:
        backends["cython"] = setup(_core)
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<15}" + "".join(f"{b:>12}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for name in backends["python"]:
        us = {b: min(timeit.repeat(fns[name], number=args.repeat, repeat=3)) / args.repeat * 1e6 for b, fns in backends.items()}
        line = f"{name:<15}" + "".join(f"{us[b]:>10.1f}us" for b in backends)
        if "cython" in us:
            line += f"  {us['python'] / us['cython']:>7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
