#!/usr/bin/env python3
"""Time the numba-compiled kernels against their pure-numpy fallbacks.

The inputs mirror one data-augmentation iteration at simulation scale: a
weighted logistic Newton solve, both sandwich accumulations, and the
marginal-likelihood sweep over a 64-model candidate set.

Usage: python3 benchmarks/bench_kernels.py [--n 500] [--repeat 200]
"""

import argparse
import time

import numpy as np
from scipy.special import expit

from mibma import kernels


def _time(fn, args, repeat):
    fn(*args)  # warm up (numba compiles here)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def _inputs(n, p_free, rng):
    x = np.column_stack([np.ones(n), rng.normal(1.0, 1.3, (n, p_free))])
    beta = np.r_[[-0.5, 1.0], np.zeros(p_free - 1)]
    eta = x @ beta
    y = (rng.random(n) < expit(eta)).astype(np.float64)
    pi = rng.uniform(0.2, 0.6, n)
    w = 1.0 / pi
    return x, y, eta, pi, w


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=500, help="sample size")
    parser.add_argument("--p-free", type=int, default=6, help="selectable covariates")
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()

    if not kernels.NUMBA_ENABLED:
        print("numba backend is disabled (MIBMA_NO_NUMBA set or numba missing);")
        print("nothing to compare. Unset the flag and rerun.")
        return

    rng = np.random.default_rng(0)
    n, p_free = args.n, args.p_free
    x, y, eta, pi, w = _inputs(n, p_free, rng)
    offset = np.zeros(n)
    beta0 = np.zeros(p_free + 1)

    resid = rng.normal(0.0, 1.0, n)
    mu = expit(eta)

    p_full = p_free + 2  # gaussian layout: intercept + betas + log sigma2
    a = rng.normal(size=(p_full, p_full + 2))
    v_hat = a @ a.T / (50.0 * n)
    theta_hat = np.r_[[-0.5, 1.0], np.zeros(p_free - 1), [0.0]]
    masks = np.arange(1 << p_free)
    active = np.zeros((masks.size, p_full), dtype=bool)
    active[:, 0] = True
    active[:, -1] = True
    for j in range(p_free):
        active[:, j + 1] = (masks >> j) & 1
    theta0 = np.zeros((masks.size, p_full))

    cases = [
        (
            f"logistic_newton (n={n}, k={p_free + 1})",
            kernels.logistic_newton_np,
            kernels.logistic_newton_nb,
            (x, y, w, offset, beta0, 1e-8, 50, 30),
        ),
        (
            f"gaussian_sandwich_sums (n={n})",
            kernels.gaussian_sandwich_sums_np,
            kernels.gaussian_sandwich_sums_nb,
            (x, resid, w, pi, 1.0, True),
        ),
        (
            f"binomial_sandwich_sums (n={n})",
            kernels.binomial_sandwich_sums_np,
            kernels.binomial_sandwich_sums_nb,
            (x, y, mu, w, pi),
        ),
        (
            f"model_log_marginals ({masks.size} models, p={p_full})",
            kernels.model_log_marginals_np,
            kernels.model_log_marginals_nb,
            (theta_hat, v_hat, active, theta0, 0.0, 1e5),
        ),
    ]

    print(f"{'kernel':45s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, fn_np, fn_nb, fargs in cases:
        t_np = _time(fn_np, fargs, args.repeat)
        t_nb = _time(fn_nb, fargs, args.repeat)
        print(
            f"{name:45s} {t_np * 1e6:9.1f}us {t_nb * 1e6:9.1f}us "
            f"{t_np / t_nb:7.1f}x"
        )


if __name__ == "__main__":
    main()
