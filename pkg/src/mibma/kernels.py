"""Hot numeric kernels, each with a numba-compiled and a pure-numpy implementation.

The data-augmentation chain evaluates these thousands of times per Monte Carlo
replication (one weighted fit, two sandwich assemblies and a sweep over the
whole candidate-model set per iteration), so they dominate runtime.  At import
time one backend is selected for the module-level names ``logistic_newton``,
``gaussian_sandwich_sums``, ``binomial_sandwich_sums`` and
``model_log_marginals``:

* numba (default) when the package is importable and compilation works;
* pure numpy when the environment variable ``MIBMA_NO_NUMBA`` is set to
  ``1``/``true``/``yes``, or when numba is unavailable.

Both implementations of every kernel are kept importable (``*_np`` / ``*_nb``)
so tests can assert agreement and ``benchmarks/bench_kernels.py`` can time
them against each other.

Status-code convention (kernels never raise): 0 = ok, 1 = not positive
definite / not converged, 2 = singular Gram matrix.  Callers translate codes
into the package exceptions.
"""

from __future__ import annotations

import os
import warnings

import numpy as np
from scipy.linalg import solve_triangular

LOG2PI = float(np.log(2.0 * np.pi))

# Pivot threshold shared with core_stats.cholesky so both backends agree on
# what counts as "not positive definite".
PIVOT_TOL = 1e-12

# Step-halving accepts a candidate within this relative slack of the current
# log-likelihood: near the optimum the true Newton improvement drops below
# float resolution and strict monotonicity would reject every step.
LL_SLACK = 1e-10


def _numba_disabled_by_env() -> bool:
    return os.environ.get("MIBMA_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}


try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        raise RuntimeError("numba unavailable")


NUMBA_ENABLED = _HAVE_NUMBA and not _numba_disabled_by_env()
BACKEND = "numba" if NUMBA_ENABLED else "numpy"

if not _HAVE_NUMBA and not _numba_disabled_by_env():  # pragma: no cover
    warnings.warn("numba not importable; falling back to pure-numpy kernels")


# --------------------------------------------------------------------------- #
# pure-numpy implementations
# --------------------------------------------------------------------------- #


def _chol_np(a):
    """Lower Cholesky factor with the shared pivot tolerance; (L, ok)."""
    try:
        L = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return np.zeros_like(a), False
    if np.any(L.diagonal() ** 2 <= PIVOT_TOL):
        return np.zeros_like(a), False
    return L, True


def _expit_np(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _wlogistic_ll_np(y, w, eta):
    # sum_i w_i [y_i eta_i - log(1 + exp(eta_i))], softplus evaluated stably
    sp = np.where(eta > 0, eta + np.log1p(np.exp(-np.abs(eta))), np.log1p(np.exp(eta)))
    return float(np.sum(w * (y * eta - sp)))


def logistic_newton_np(x, y, w, offset, beta0, tol=1e-8, max_iter=50, max_halvings=30):
    """Weighted logistic Newton-Raphson with step-halving.

    Returns (beta, loglik, iterations, status).
    """
    beta = beta0.astype(np.float64).copy()
    eta = x @ beta + offset
    ll = _wlogistic_ll_np(y, w, eta)
    it = 0
    while True:
        mu = _expit_np(eta)
        score = x.T @ (w * (y - mu))
        if np.max(np.abs(score)) < tol:
            return beta, ll, it, 0
        if it >= max_iter:
            return beta, ll, it, 1
        it += 1
        d = w * mu * (1.0 - mu)
        gram = x.T @ (x * d[:, None])
        L, ok = _chol_np(gram)
        if not ok:
            return beta, ll, it - 1, 2
        step = solve_triangular(
            L.T, solve_triangular(L, score, lower=True), lower=False
        )
        scale = 1.0
        accepted = False
        floor = ll - LL_SLACK * (1.0 + abs(ll))
        for _ in range(max_halvings + 1):
            cand = beta + scale * step
            eta_c = x @ cand + offset
            ll_c = _wlogistic_ll_np(y, w, eta_c)
            if ll_c >= floor:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            return beta, ll, it, 1
        beta, eta, ll = cand, eta_c, ll_c


def gaussian_sandwich_sums_np(x_a, resid, w, pi, s2, with_dispersion):
    """Summed Hessian A and Poisson-design middle term B for a Gaussian fit.

    A = sum_i w_i l''_i, B = sum_i (1 - pi_i) w_i^2 l'_i l'_i^T, with the
    per-unit derivatives taken in (beta_active, log sigma^2) coordinates.
    """
    n, kb = x_a.shape
    k = kb + 1 if with_dispersion else kb
    s_beta = x_a * (resid / s2)[:, None]
    if with_dispersion:
        s_disp = -0.5 + resid**2 / (2.0 * s2)
        scores = np.concatenate([s_beta, s_disp[:, None]], axis=1)
    else:
        scores = s_beta
    cb = (1.0 - pi) * w * w
    bmat = scores.T @ (scores * cb[:, None])

    amat = np.zeros((k, k))
    amat[:kb, :kb] = -(x_a.T @ (x_a * w[:, None])) / s2
    if with_dispersion:
        cross = -(x_a.T @ (w * resid)) / s2
        amat[:kb, kb] = cross
        amat[kb, :kb] = cross
        amat[kb, kb] = -float(np.sum(w * resid**2)) / (2.0 * s2)
    return amat, bmat


def binomial_sandwich_sums_np(x_a, y, mu, w, pi):
    """Summed Hessian A and Poisson-design middle term B for a logistic fit."""
    resid = y - mu
    d = w * mu * (1.0 - mu)
    amat = -(x_a.T @ (x_a * d[:, None]))
    cb = (1.0 - pi) * w * w * resid * resid
    bmat = x_a.T @ (x_a * cb[:, None])
    return amat, bmat


def model_log_marginals_np(theta_hat, v_hat, active, theta0, prior_mean, prior_var):
    """Closed-form approximate log marginal for every candidate model.

    For a model with restricted slots r and active slots a the value is
    ``logN(theta0_r; theta_hat_r, V_rr) + log prior(theta_hat_a + V_ar V_rr^-1
    (theta0_r - theta_hat_r))``; with no restricted slots it degenerates to
    the prior log-density at theta_hat.  Returns (logm, status) arrays.
    """
    n_models, p = active.shape
    logm = np.zeros(n_models)
    status = np.zeros(n_models, dtype=np.int64)
    lognorm = -0.5 * (LOG2PI + np.log(prior_var))
    for m in range(n_models):
        act = active[m]
        a_idx = np.where(act)[0]
        r_idx = np.where(~act)[0]
        if r_idx.size == 0:
            dev = theta_hat[a_idx] - prior_mean
            logm[m] = a_idx.size * lognorm - 0.5 * float(dev @ dev) / prior_var
            continue
        vrr = v_hat[np.ix_(r_idx, r_idx)]
        L, ok = _chol_np(vrr)
        if not ok:
            status[m] = 1
            continue
        d = theta0[m, r_idx] - theta_hat[r_idx]
        z = solve_triangular(L, d, lower=True)
        logdet = 2.0 * float(np.sum(np.log(L.diagonal())))
        mvn_term = -0.5 * (r_idx.size * LOG2PI + logdet + float(z @ z))
        u = solve_triangular(L.T, z, lower=False)
        tilde0 = theta_hat[a_idx] + v_hat[np.ix_(a_idx, r_idx)] @ u
        dev = tilde0 - prior_mean
        prior_term = a_idx.size * lognorm - 0.5 * float(dev @ dev) / prior_var
        logm[m] = mvn_term + prior_term
    return logm, status


# --------------------------------------------------------------------------- #
# numba implementations
# --------------------------------------------------------------------------- #


def _chol_py(a, tol):
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= tol:
            return L, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
    return L, True


def _forward_py(L, b):
    n = b.shape[0]
    x = b.copy()
    for i in range(n):
        for k in range(i):
            x[i] -= L[i, k] * x[k]
        x[i] /= L[i, i]
    return x


def _backward_py(L, b):
    # solves L^T x = b for lower-triangular L
    n = b.shape[0]
    x = b.copy()
    for i in range(n - 1, -1, -1):
        for k in range(i + 1, n):
            x[i] -= L[k, i] * x[k]
        x[i] /= L[i, i]
    return x


def _logistic_newton_py(x, y, w, offset, beta0, tol, max_iter, max_halvings):
    n, k = x.shape
    beta = beta0.copy()
    eta = np.empty(n)
    for i in range(n):
        e = offset[i]
        for j in range(k):
            e += x[i, j] * beta[j]
        eta[i] = e
    ll = 0.0
    for i in range(n):
        e = eta[i]
        sp = e + np.log1p(np.exp(-e)) if e > 0 else np.log1p(np.exp(e))
        ll += w[i] * (y[i] * e - sp)

    it = 0
    score = np.empty(k)
    gram = np.empty((k, k))
    while True:
        for j in range(k):
            score[j] = 0.0
        for a in range(k):
            for b in range(k):
                gram[a, b] = 0.0
        for i in range(n):
            e = eta[i]
            mu = 1.0 / (1.0 + np.exp(-e)) if e >= 0 else np.exp(e) / (1.0 + np.exp(e))
            r = w[i] * (y[i] - mu)
            d = w[i] * mu * (1.0 - mu)
            for a in range(k):
                score[a] += r * x[i, a]
                for b in range(a, k):
                    gram[a, b] += d * x[i, a] * x[i, b]
        for a in range(k):
            for b in range(a + 1, k):
                gram[b, a] = gram[a, b]
        smax = 0.0
        for j in range(k):
            if abs(score[j]) > smax:
                smax = abs(score[j])
        if smax < tol:
            return beta, ll, it, 0
        if it >= max_iter:
            return beta, ll, it, 1
        it += 1
        L, ok = _chol_py(gram, PIVOT_TOL)
        if not ok:
            return beta, ll, it - 1, 2
        step = _backward_py(L, _forward_py(L, score))
        scale = 1.0
        accepted = False
        floor = ll - LL_SLACK * (1.0 + abs(ll))
        cand = np.empty(k)
        eta_c = np.empty(n)
        ll_c = 0.0
        for _ in range(max_halvings + 1):
            for j in range(k):
                cand[j] = beta[j] + scale * step[j]
            ll_c = 0.0
            for i in range(n):
                e = offset[i]
                for j in range(k):
                    e += x[i, j] * cand[j]
                eta_c[i] = e
                sp = e + np.log1p(np.exp(-e)) if e > 0 else np.log1p(np.exp(e))
                ll_c += w[i] * (y[i] * e - sp)
            if ll_c >= floor:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            return beta, ll, it, 1
        for j in range(k):
            beta[j] = cand[j]
        for i in range(n):
            eta[i] = eta_c[i]
        ll = ll_c


def _gaussian_sandwich_py(x_a, resid, w, pi, s2, with_dispersion):
    n, kb = x_a.shape
    k = kb + 1 if with_dispersion else kb
    amat = np.zeros((k, k))
    bmat = np.zeros((k, k))
    s = np.empty(k)
    for i in range(n):
        r = resid[i]
        for a in range(kb):
            s[a] = r * x_a[i, a] / s2
        if with_dispersion:
            s[kb] = -0.5 + r * r / (2.0 * s2)
        cb = (1.0 - pi[i]) * w[i] * w[i]
        for a in range(k):
            for b in range(a, k):
                bmat[a, b] += cb * s[a] * s[b]
        for a in range(kb):
            for b in range(a, kb):
                amat[a, b] -= w[i] * x_a[i, a] * x_a[i, b] / s2
        if with_dispersion:
            for a in range(kb):
                amat[a, kb] -= w[i] * r * x_a[i, a] / s2
            amat[kb, kb] -= w[i] * r * r / (2.0 * s2)
    for a in range(k):
        for b in range(a + 1, k):
            amat[b, a] = amat[a, b]
            bmat[b, a] = bmat[a, b]
    return amat, bmat


def _binomial_sandwich_py(x_a, y, mu, w, pi):
    n, k = x_a.shape
    amat = np.zeros((k, k))
    bmat = np.zeros((k, k))
    for i in range(n):
        r = y[i] - mu[i]
        d = w[i] * mu[i] * (1.0 - mu[i])
        cb = (1.0 - pi[i]) * w[i] * w[i] * r * r
        for a in range(k):
            for b in range(a, k):
                amat[a, b] -= d * x_a[i, a] * x_a[i, b]
                bmat[a, b] += cb * x_a[i, a] * x_a[i, b]
    for a in range(k):
        for b in range(a + 1, k):
            amat[b, a] = amat[a, b]
            bmat[b, a] = bmat[a, b]
    return amat, bmat


def _model_log_marginals_py(theta_hat, v_hat, active, theta0, prior_mean, prior_var):
    n_models, p = active.shape
    logm = np.zeros(n_models)
    status = np.zeros(n_models, dtype=np.int64)
    lognorm = -0.5 * (LOG2PI + np.log(prior_var))
    a_idx = np.empty(p, dtype=np.int64)
    r_idx = np.empty(p, dtype=np.int64)
    for m in range(n_models):
        na = 0
        nr = 0
        for j in range(p):
            if active[m, j]:
                a_idx[na] = j
                na += 1
            else:
                r_idx[nr] = j
                nr += 1
        if nr == 0:
            acc = 0.0
            for j in range(na):
                dev = theta_hat[a_idx[j]] - prior_mean
                acc += dev * dev
            logm[m] = na * lognorm - 0.5 * acc / prior_var
            continue
        vrr = np.empty((nr, nr))
        for a in range(nr):
            for b in range(nr):
                vrr[a, b] = v_hat[r_idx[a], r_idx[b]]
        L, ok = _chol_py(vrr, PIVOT_TOL)
        if not ok:
            status[m] = 1
            continue
        d = np.empty(nr)
        for a in range(nr):
            d[a] = theta0[m, r_idx[a]] - theta_hat[r_idx[a]]
        z = _forward_py(L, d)
        logdet = 0.0
        quad = 0.0
        for a in range(nr):
            logdet += 2.0 * np.log(L[a, a])
            quad += z[a] * z[a]
        mvn_term = -0.5 * (nr * LOG2PI + logdet + quad)
        u = _backward_py(L, z)
        acc = 0.0
        for j in range(na):
            t = theta_hat[a_idx[j]]
            for b in range(nr):
                t += v_hat[a_idx[j], r_idx[b]] * u[b]
            dev = t - prior_mean
            acc += dev * dev
        logm[m] = mvn_term + na * lognorm - 0.5 * acc / prior_var
    return logm, status


if NUMBA_ENABLED:
    _chol_py = njit(cache=True)(_chol_py)
    _forward_py = njit(cache=True)(_forward_py)
    _backward_py = njit(cache=True)(_backward_py)
    logistic_newton_nb = njit(cache=True)(_logistic_newton_py)
    gaussian_sandwich_sums_nb = njit(cache=True)(_gaussian_sandwich_py)
    binomial_sandwich_sums_nb = njit(cache=True)(_binomial_sandwich_py)
    model_log_marginals_nb = njit(cache=True)(_model_log_marginals_py)

    logistic_newton = logistic_newton_nb
    gaussian_sandwich_sums = gaussian_sandwich_sums_nb
    binomial_sandwich_sums = binomial_sandwich_sums_nb
    model_log_marginals = model_log_marginals_nb
else:
    logistic_newton = logistic_newton_np
    gaussian_sandwich_sums = gaussian_sandwich_sums_np
    binomial_sandwich_sums = binomial_sandwich_sums_np
    model_log_marginals = model_log_marginals_np
