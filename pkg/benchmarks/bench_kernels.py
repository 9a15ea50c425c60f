"""Benchmark the compiled kernels against the pure-Python fallback.

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from spanmon._kernels import _pyref

try:
    from spanmon._kernels import _native
except ImportError:
    _native = None


def _time(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_newmark(n_samples=35001, modes=3):
    rng = np.random.default_rng(0)
    force = np.ascontiguousarray(rng.normal(0.0, 1e3, size=(modes, n_samples)))
    omega = 2.0 * np.pi * 4.78 * np.arange(1, modes + 1) ** 2
    zeta = np.full(modes, 0.01)
    mass = np.full(modes, 105000.0)
    q0 = np.zeros(modes)
    args = (force, omega, zeta, mass, 1e-3, q0, q0)
    rows = [("newmark python", _time(_pyref.newmark_modal_core, *args))]
    if _native is not None:
        rows.append(("newmark native", _time(_native.newmark_modal_core, *args)))
        qa = _pyref.newmark_modal_core(*args)[0]
        qb = _native.newmark_modal_core(*args)[0]
        assert np.array_equal(qa, qb), "backends disagree"
    return rows


def bench_fir(n_samples=30000, taps=101):
    # FIR stays on numpy's compiled convolution in both backends; timed here
    # for context (it lost to a scalar Cython loop by ~3x in testing).
    rng = np.random.default_rng(1)
    x = np.ascontiguousarray(rng.normal(size=n_samples + taps - 1))
    h = np.ascontiguousarray(np.hamming(taps) / np.hamming(taps).sum())
    return [("fir (np.convolve)", _time(np.convolve, x, h))]


def main():
    print(f"{'kernel':<18} {'best (ms)':>10}")
    for rows in (bench_newmark(), bench_fir()):
        base = rows[0][1]
        for name, t in rows:
            speed = "" if t == base else f"  ({base / t:.1f}x vs python)"
            print(f"{name:<18} {t * 1e3:>10.2f}{speed}")
    if _native is None:
        print("compiled extension not available; showing fallback only")


if __name__ == "__main__":
    main()
