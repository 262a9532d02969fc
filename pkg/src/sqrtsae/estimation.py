"""Estimation of (a, beta) from surrogate covariates, and empirical predictors.

Two moment schemes are provided:

* ``pr``: ordinary least squares on the surrogates, then the Prasad-Rao
  moment estimator of ``a`` with the surrogate hat matrix.
* ``yl``: Ybarra-Lohr style modified least squares that removes the
  measurement-error covariance from the cross-product matrix (equal weights,
  single pass), then a residual moment estimator of ``a``.

Negative variance estimates are truncated to zero in both cases.
"""

from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from .model import (
    SAMPLING_VAR,
    AreaObservation,
    ModelParameters,
    PredictorKind,
    PredictorReport,
    Provenance,
    derive_profile,
    stack_observations,
)
from .numerics import is_singular, least_squares_solve, pseudo_solve
from . import predictors as pred

logger = logging.getLogger(__name__)


def _check_sizes(x_hat: np.ndarray) -> tuple[int, int]:
    m, p = x_hat.shape
    if m <= p:
        raise ValueError(f"need more areas than covariates (m={m}, p={p})")
    return m, p


def pr_arrays(z, x_hat):
    """Prasad-Rao estimates from arrays.

    Returns ``(a_hat, beta_hat, raw_a, used_pinv)`` where ``raw_a`` is the
    untruncated moment estimate.
    """
    m, p = _check_sizes(x_hat)
    xtx = x_hat.T @ x_hat
    used_pinv = is_singular(xtx)
    beta = least_squares_solve(x_hat, z)
    resid = z - x_hat @ beta
    leverage = np.einsum("ij,ji->i", x_hat, pseudo_solve(xtx, x_hat.T))
    raw_a = (resid @ resid - SAMPLING_VAR * np.sum(1.0 - leverage)) / (m - p)
    return max(raw_a, 0.0), beta, raw_a, used_pinv


def yl_arrays(z, x_hat, t, sigma, *, sigma_per_draw: bool = True):
    """Ybarra-Lohr estimates from arrays.

    ``sigma`` is (m, p, p) single-draw covariances, so the covariance of the
    averaged surrogate is ``sigma / t`` and that is what the modified least
    squares step removes. The variance step subtracts the single-draw
    ``beta' sigma beta`` by default; with ``sigma_per_draw=False`` it
    subtracts ``beta' (sigma / t) beta`` instead, which makes ``a_hat``
    roughly unbiased when the t are large.

    Returns ``(a_hat, beta_hat, raw_a, used_pinv)``.
    """
    m, p = _check_sizes(x_hat)
    sigma_avg = sigma / t[:, None, None]
    corrected = x_hat.T @ x_hat - sigma_avg.sum(axis=0)
    used_pinv = is_singular(corrected)
    beta = pseudo_solve(corrected, x_hat.T @ z)
    resid = z - x_hat @ beta
    me_var = np.einsum("j,ijk,k->i", beta, sigma if sigma_per_draw else sigma_avg, beta)
    raw_a = float(np.sum(resid * resid - me_var - SAMPLING_VAR) / (m - p))
    return max(raw_a, 0.0), beta, raw_a, used_pinv


def estimate_pr(areas: Sequence[AreaObservation]) -> ModelParameters:
    z, x_hat, _, _ = stack_observations(areas)
    a_hat, beta, _, used_pinv = pr_arrays(z, x_hat)
    if used_pinv:
        logger.warning("singular surrogate design; PR estimate uses the pseudo-inverse")
    return ModelParameters(a_hat, beta, Provenance.ESTIMATED_PR, used_pinv)


def estimate_yl(areas: Sequence[AreaObservation], *, sigma_per_draw: bool = True) -> ModelParameters:
    z, x_hat, t, sigma = stack_observations(areas)
    a_hat, beta, _, used_pinv = yl_arrays(z, x_hat, t, sigma, sigma_per_draw=sigma_per_draw)
    if used_pinv:
        logger.warning("singular corrected cross-product; YL estimate uses the pseudo-inverse")
    return ModelParameters(a_hat, beta, Provenance.ESTIMATED_YL, used_pinv)


ESTIMATORS = {"pr": estimate_pr, "yl": estimate_yl}


def predict_area(
    kind: PredictorKind | str,
    obs: AreaObservation,
    params: ModelParameters,
) -> PredictorReport:
    """One predictor for one area; X_hat @ beta stands in for X @ beta."""
    kind = PredictorKind(kind)
    xhat_beta = float(obs.x_hat @ params.beta)
    if kind is PredictorKind.DIRECT:
        value = pred.direct_predict(obs.z)
        return PredictorReport(
            area_id=obs.area_id,
            predictor_kind=kind,
            weight=1.0,
            correction=-SAMPLING_VAR,
            value=value,
            theoretical_bias=0.0,
            theoretical_mspe=xhat_beta ** 2 + params.a + 0.125,
        )
    profile = derive_profile(params, obs, xhat_beta)
    if kind is PredictorKind.PROPOSED:
        return pred.proposed_predict(obs.z, xhat_beta, params, profile, area_id=obs.area_id)
    if kind is PredictorKind.B_SUBSTITUTE:
        return pred.b_substitute_predict(obs.z, xhat_beta, params, profile, area_id=obs.area_id)
    if kind is PredictorKind.OPTIMAL:
        return pred.optimal_predict(obs.z, xhat_beta, params, profile, area_id=obs.area_id)
    raise ValueError(f"predictor {kind.value!r} is not available without the true covariates")


def empirical_predict(
    kind: PredictorKind | str,
    areas: Sequence[AreaObservation],
    method: str = "pr",
    params: Optional[ModelParameters] = None,
) -> list[PredictorReport]:
    """Estimate (a, beta) with ``method`` and predict every area.

    Passing ``params`` skips estimation and uses them as given.
    """
    if params is None:
        try:
            params = ESTIMATORS[method](areas)
        except KeyError:
            raise ValueError(f"unknown estimation method {method!r}") from None
    return [predict_area(kind, obs, params) for obs in areas]
