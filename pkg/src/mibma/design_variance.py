"""Design-consistent sandwich variance for pseudo-MLE fits.

V = A^-1 B A^-T with A the weighted sum of per-unit Hessians and B the
double sum over units of ((pi_ij - pi_i pi_j) / pi_ij) w_i l'_i w_j l'_j^T.
Under Poisson sampling the joint inclusion probabilities factor, the
off-diagonal terms vanish, and B collapses to sum_i (1 - pi_i) w_i^2 l'_i
l'_i^T; that specialization is the hot path and runs through the compiled
kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from . import kernels
from .errors import SingularBread
from .glm_pseudo_mle import GAUSSIAN, Dataset, FitResult, fit_pseudo_mle, score_hessian
from .model_space import ModelId

POISSON = "poisson"
GENERAL_PAIRWISE = "general_pairwise"


@dataclass(frozen=True)
class DesignInfo:
    """Sampling-design knowledge needed by the variance estimator.

    Poisson designs need nothing beyond the unit inclusion probabilities
    already on the Dataset; a general design supplies the full matrix of
    joint inclusion probabilities (diagonal pi_ii = pi_i).
    """

    kind: str
    pi_joint: Optional[np.ndarray] = None

    @classmethod
    def poisson(cls) -> "DesignInfo":
        return cls(POISSON)

    @classmethod
    def general(cls, pi_joint: np.ndarray) -> "DesignInfo":
        pj = np.ascontiguousarray(pi_joint, dtype=np.float64)
        if pj.ndim != 2 or pj.shape[0] != pj.shape[1]:
            raise ValueError("pi_joint must be a square matrix")
        return cls(GENERAL_PAIRWISE, pj)


def _poisson_sums(data: Dataset, fit: FitResult) -> tuple[np.ndarray, np.ndarray]:
    b_act = fit.kappa.active_indices()
    b_act = b_act[b_act <= fit.kappa.p_free]
    x_a = np.ascontiguousarray(data.x[:, b_act])
    eta = data.x @ fit.theta_hat[: data.p_design]
    if data.family == GAUSSIAN:
        s2 = float(np.exp(fit.theta_hat[data.p_design]))
        resid = np.ascontiguousarray(data.y - eta)
        return kernels.gaussian_sandwich_sums(
            x_a, resid, data.w, data.pi, s2, True
        )
    mu = np.ascontiguousarray(expit(eta))
    return kernels.binomial_sandwich_sums(x_a, data.y, mu, data.w, data.pi)


def _general_sums(
    data: Dataset, fit: FitResult, pi_joint: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    if pi_joint.shape != (data.n, data.n):
        raise ValueError("pi_joint must be n x n for this dataset")
    scores, hess = score_hessian(data, fit.theta_hat, fit.kappa)
    amat = np.einsum("i,ijk->jk", data.w, hess)
    coef = (pi_joint - np.outer(data.pi, data.pi)) / pi_joint
    s = scores * data.w[:, None]
    bmat = s.T @ coef @ s
    return amat, bmat


def sandwich_variance(
    data: Dataset, fit: FitResult, design: DesignInfo
) -> np.ndarray:
    """Sandwich variance of the active parameters at ``fit.theta_hat``,
    returned padded to the full dimension (zeros on restricted rows/columns).

    Raises SingularBread when the summed Hessian cannot be inverted.
    """
    if not fit.converged:
        raise ValueError("sandwich_variance requires a converged fit")
    if design.kind == POISSON:
        amat, bmat = _poisson_sums(data, fit)
    elif design.kind == GENERAL_PAIRWISE:
        if design.pi_joint is None:
            raise ValueError("general design requires a pi_joint matrix")
        amat, bmat = _general_sums(data, fit, design.pi_joint)
    else:
        raise ValueError(f"unknown design kind {design.kind!r}")

    # A is negative definite at a proper maximum; factor -A.
    try:
        la = cho_factor(-amat, lower=True)
    except np.linalg.LinAlgError:
        raise SingularBread("summed Hessian is not invertible") from None
    if np.any(la[0].diagonal() ** 2 <= kernels.PIVOT_TOL):
        raise SingularBread("summed Hessian is numerically singular")
    half = cho_solve(la, bmat)
    v_active = cho_solve(la, half.T)
    v_active = 0.5 * (v_active + v_active.T)

    idx = fit.kappa.active_indices()
    v_full = np.zeros((fit.kappa.p_full, fit.kappa.p_full))
    v_full[np.ix_(idx, idx)] = v_active
    return v_full


def fit_with_variance(
    data: Dataset, kappa: ModelId, design: DesignInfo
) -> FitResult:
    """Fit the pseudo-MLE under ``kappa`` and attach its sandwich variance.

    Non-converged logistic fits come back without a variance; callers decide
    whether to retry or fail.
    """
    fit = fit_pseudo_mle(data, kappa)
    if not fit.converged:
        return fit
    return fit.with_v_hat(sandwich_variance(data, fit, design))
