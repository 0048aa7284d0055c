"""Compare the compiled kernels against the pure-numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

The fallback is what you get with ICUCAST_FORCE_PY=1 or when the extension
failed to build; this script times both implementations directly on the two
hot paths (count-autoregression likelihood, panel Laplace approximation).
"""

import time

import numpy as np

from icucast import _kernels_py, kernels


def _time(fn, *args, repeat=200):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_ingarch(compiled):
    rng = np.random.default_rng(0)
    y = rng.poisson(40.0, size=60).astype(float)
    drive = rng.uniform(0.5, 3.0, size=59)
    args = (y, 0.3, 0.4, drive, 25.0)

    t_py = _time(_kernels_py.ingarch_quasi_loglik, *args)
    t_c = _time(compiled.ingarch_quasi_loglik, *args) if compiled else None
    report("ingarch_quasi_loglik (T=60)", t_py, t_c)


def bench_laplace(compiled):
    rng = np.random.default_rng(1)
    n_regions, T = 20, 15
    t = np.arange(1, T + 1, dtype=float)
    X = np.column_stack([np.ones(T), t, t * t])
    beta = np.array([-9.0, 0.1, -0.005])
    offsets = np.log(rng.integers(100_000, 2_000_000, size=n_regions).astype(float))
    Y = np.vstack([rng.poisson(np.exp(X @ beta + o)) for o in offsets]).astype(float)
    sigma = np.diag([0.04, 4e-4, 1e-6])
    args = (
        Y, X, offsets, X @ beta,
        np.linalg.inv(sigma), float(np.linalg.slogdet(sigma)[1]),
        np.zeros((n_regions, 3)), 1e-8, 50,
    )

    t_py = _time(_kernels_py.glmm_panel_laplace, *args)
    t_c = _time(compiled.glmm_panel_laplace, *args) if compiled else None
    report(f"glmm_panel_laplace ({n_regions} regions x {T} days)", t_py, t_c)


def report(name, t_py, t_c):
    line = f"{name:45s} python {1e6 * t_py:9.1f} us"
    if t_c is not None:
        line += f"   compiled {1e6 * t_c:9.1f} us   speedup {t_py / t_c:5.1f}x"
    else:
        line += "   (compiled extension not available)"
    print(line)


def main():
    compiled = None
    if kernels.BACKEND == "compiled":
        from icucast import _core

        compiled = _core
    print(f"active backend: {kernels.BACKEND}\n")
    bench_ingarch(compiled)
    bench_laplace(compiled)


if __name__ == "__main__":
    main()
