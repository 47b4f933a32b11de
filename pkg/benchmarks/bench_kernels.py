"""Benchmark the compiled kernels against the numpy fallback.

Run as:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from seqda.kernels import numpy_backend as npb

try:
    from seqda.kernels import _ckernels as ck
except ImportError:
    ck = None


def _time(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_lstm(backend, T=60, B=32, C=200, H=100, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(T, B, C))
    wx = rng.normal(size=(C, 4 * H)) * 0.1
    wh = rng.normal(size=(H, 4 * H)) * 0.1
    b = np.zeros(4 * H)
    dh = rng.normal(size=(T, B, H))

    def fwd():
        backend.lstm_forward(x, wx, wh, b, False)

    _, cache = backend.lstm_forward(x, wx, wh, b, False)

    def bwd():
        backend.lstm_backward(dh, cache)

    return _time(fwd), _time(bwd)


def bench_ctc(backend, T=60, K1=27, L=8, seed=0):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(T, K1))
    lp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
    labels = rng.integers(0, K1 - 1, size=L).tolist()

    def run():
        for _ in range(50):
            backend.ctc_forward_backward(lp, labels, K1 - 1)

    return _time(run)


def main():
    rows = []
    for name, backend in (("numpy", npb),) + ((("compiled", ck),) if ck else ()):
        f, b = bench_lstm(backend)
        c = bench_ctc(backend)
        rows.append((name, f, b, c))
    print("%-9s %14s %14s %16s" % ("backend", "lstm fwd (s)", "lstm bwd (s)",
                                   "ctc x50 (s)"))
    for name, f, b, c in rows:
        print("%-9s %14.4f %14.4f %16.4f" % (name, f, b, c))
    if len(rows) == 2:
        print("speedup: lstm fwd %.1fx, lstm bwd %.1fx, ctc %.1fx"
              % (rows[0][1] / rows[1][1], rows[0][2] / rows[1][2],
                 rows[0][3] / rows[1][3]))
    if ck is None:
        print("compiled extension not available; numpy backend only")


if __name__ == "__main__":
    main()
