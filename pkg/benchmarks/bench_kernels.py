"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats N]

Prints one line per kernel: best-of-N wall time for each backend and the
speedup.  Both backends are checked to agree before timing.
"""

import argparse
import time

import numpy as np

from gtc import kernels


def _best(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    T, K = 64, 37
    lp = rng.standard_normal((T, K))
    lp -= np.log(np.exp(lp).sum(axis=1, keepdims=True))
    label = rng.integers(1, K, size=20)
    ext = np.zeros(2 * len(label) + 1, dtype=np.int64)
    ext[1::2] = label
    yield "ctc_forward_backward T=64 K=37 L=20", lambda b: kernels.ctc_forward_backward(lp, ext, backend=b)

    yield "best_path_decode T=64 K=37", lambda b: kernels.best_path_decode(lp, backend=b)

    a = tuple(rng.integers(0, 10, size=40).tolist())
    c = tuple(rng.integers(0, 10, size=40).tolist())
    yield "edit_distance 40x40", lambda b: kernels.edit_distance(a, c, backend=b)

    # batch 1 is the inference shape; batch 32 is the toy training shape
    H = 64
    w_hh = rng.standard_normal((H, 4 * H)) * 0.1
    for B, T in ((1, 14), (32, 14)):
        xw = rng.standard_normal((B, T, 4 * H)) * 0.5
        hs, cache = kernels.lstm_forward(xw, w_hh, False, backend="python")
        dhs = rng.standard_normal(hs.shape)
        yield f"lstm_forward B={B} T={T} H={H}", lambda b, xw=xw: kernels.lstm_forward(xw, w_hh, False, backend=b)
        yield (f"lstm_backward B={B} T={T} H={H}",
               lambda b, dhs=dhs, cache=cache: kernels.lstm_backward(dhs, w_hh, cache, False, backend=b))


def _same(x, y):
    if isinstance(x, tuple) and not isinstance(x[0], (int, np.integer)):
        return all(_same(a, b) for a, b in zip(x, y))
    return np.allclose(np.asarray(x, dtype=float), np.asarray(y, dtype=float), rtol=1e-10, atol=1e-12)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng):
        py = _best(lambda: fn("python"), args.repeats)
        if "cython" in backends:
            if not _same(fn("python"), fn("cython")):
                raise SystemExit(f"{name}: backends disagree")
            cy = _best(lambda: fn("cython"), args.repeats)
            print(f"{name:40s} {1e3 * py:10.3f} {1e3 * cy:10.3f} {py / cy:7.1f}x")
        else:
            print(f"{name:40s} {1e3 * py:10.3f} {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
