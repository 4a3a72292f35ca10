"""Backend-equivalence tests: every kernel's numba and numpy implementations
must agree, and both must agree with the reference compositions."""

import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.special import expit

from mibma import kernels
from mibma import (
    DesignInfo,
    NormalPrior,
    approx_log_marginal,
    enumerate_models,
    fit_pseudo_mle,
    fit_with_variance,
    score_hessian,
)

from conftest import make_binomial_data, make_gaussian_data

needs_numba = pytest.mark.skipif(
    not kernels.NUMBA_ENABLED, reason="numba backend disabled or unavailable"
)


def _logistic_inputs(seed=0, n=150, k=3):
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.normal(0, 1, (n, k - 1))])
    beta = rng.normal(0, 0.5, k)
    y = (rng.random(n) < expit(x @ beta)).astype(float)
    w = rng.uniform(1.0, 3.0, n)
    offset = rng.normal(0, 0.1, n)
    return x, y, w, offset


@needs_numba
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_logistic_newton_backends_agree(seed):
    x, y, w, offset = _logistic_inputs(seed)
    args = (x, y, w, offset, np.zeros(x.shape[1]), 1e-8, 50, 30)
    b_np, ll_np, it_np, st_np = kernels.logistic_newton_np(*args)
    b_nb, ll_nb, it_nb, st_nb = kernels.logistic_newton_nb(*args)
    assert st_np == st_nb == 0
    assert np.max(np.abs(b_np - b_nb)) < 1e-8
    assert ll_np == pytest.approx(ll_nb, abs=1e-8)


@needs_numba
def test_sandwich_sums_backends_agree():
    rng = np.random.default_rng(5)
    n, kb = 120, 4
    x = np.column_stack([np.ones(n), rng.normal(0, 1, (n, kb - 1))])
    resid = rng.normal(0, 1, n)
    pi = rng.uniform(0.2, 0.9, n)
    w = 1.0 / pi
    a1, b1 = kernels.gaussian_sandwich_sums_np(x, resid, w, pi, 1.3, True)
    a2, b2 = kernels.gaussian_sandwich_sums_nb(x, resid, w, pi, 1.3, True)
    assert np.max(np.abs(a1 - a2)) < 1e-9
    assert np.max(np.abs(b1 - b2)) < 1e-9

    y = (rng.random(n) < 0.5).astype(float)
    mu = expit(rng.normal(0, 1, n))
    a1, b1 = kernels.binomial_sandwich_sums_np(x, y, mu, w, pi)
    a2, b2 = kernels.binomial_sandwich_sums_nb(x, y, mu, w, pi)
    assert np.max(np.abs(a1 - a2)) < 1e-9
    assert np.max(np.abs(b1 - b2)) < 1e-9


@needs_numba
def test_model_log_marginals_backends_agree():
    data = make_gaussian_data(n=100, p_free=5, seed=7)
    fit = fit_with_variance(data, data.full_model(), DesignInfo.poisson())
    models = enumerate_models(5, dispersion=True)
    active = np.stack([m.active_bool() for m in models])
    theta0 = np.stack([m.theta0_full() for m in models])
    lm_np, st_np = kernels.model_log_marginals_np(
        fit.theta_hat, fit.v_hat, active, theta0, 0.0, 1e5
    )
    lm_nb, st_nb = kernels.model_log_marginals_nb(
        fit.theta_hat, fit.v_hat, active, theta0, 0.0, 1e5
    )
    assert np.array_equal(st_np, st_nb)
    assert np.max(np.abs(lm_np - lm_nb)) < 1e-9


def test_model_log_marginals_matches_reference_composition():
    data = make_gaussian_data(n=100, p_free=4, seed=8)
    fit = fit_with_variance(data, data.full_model(), DesignInfo.poisson())
    models = enumerate_models(4, dispersion=True)
    prior = NormalPrior()
    active = np.stack([m.active_bool() for m in models])
    theta0 = np.stack([m.theta0_full() for m in models])
    lm, status = kernels.model_log_marginals(
        fit.theta_hat, fit.v_hat, active, theta0, prior.mean, prior.variance
    )
    assert not status.any()
    ref = np.array([approx_log_marginal(fit, m, prior) for m in models])
    assert np.max(np.abs(lm - ref)) < 1e-9


def test_sandwich_sums_match_per_unit_reference():
    for family, maker in (("gaussian", make_gaussian_data), ("binomial", make_binomial_data)):
        data = maker(n=90, p_free=3, seed=9)
        fit = fit_pseudo_mle(data, data.full_model())
        scores, hess = score_hessian(data, fit.theta_hat, data.full_model())
        a_ref = np.einsum("i,ijk->jk", data.w, hess)
        cb = (1.0 - data.pi) * data.w**2
        b_ref = np.einsum("i,ij,ik->jk", cb, scores, scores)
        eta = data.x @ fit.theta_hat[: data.p_design]
        if family == "gaussian":
            a, b = kernels.gaussian_sandwich_sums(
                data.x, np.ascontiguousarray(data.y - eta), data.w, data.pi,
                float(np.exp(fit.theta_hat[-1])), True,
            )
        else:
            a, b = kernels.binomial_sandwich_sums(
                data.x, data.y, np.ascontiguousarray(expit(eta)), data.w, data.pi
            )
        assert np.max(np.abs(a - a_ref)) < 1e-8 * max(1.0, np.max(np.abs(a_ref)))
        assert np.max(np.abs(b - b_ref)) < 1e-8 * max(1.0, np.max(np.abs(b_ref)))


def test_logistic_newton_singular_gram_status():
    n = 30
    x = np.column_stack([np.ones(n), np.ones(n)])  # collinear
    y = (np.arange(n) < 20).astype(float)  # unbalanced so the score is nonzero
    w = np.ones(n)
    _, _, _, status = kernels.logistic_newton_np(
        x, y, w, np.zeros(n), np.zeros(2), 1e-8, 50, 30
    )
    assert status == 2


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, MIBMA_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from mibma import kernels; print(kernels.BACKEND)"],
        capture_output=True,
        text=True,
        env=env,
        check=True,
    )
    assert out.stdout.strip() == "numpy"


def test_default_backend_reported():
    assert kernels.BACKEND in ("numba", "numpy")
