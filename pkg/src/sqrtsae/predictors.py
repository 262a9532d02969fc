"""Squared shrinkage predictors of lambda_i = theta_i^2 and their exact moments.

The predictor class is::

    lam_hat(w) = {w * Z + (1 - w) * xhat_beta}^2 + C(w)

with C(w) the negative bias of the uncorrected square. The kernels in the first
half take floats or numpy arrays in (w, xbeta, a, q = b/t) and broadcast, which
is what the simulator uses; the functions taking ``ModelParameters`` and
``ShrinkageProfile`` wrap them for single areas.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .model import (
    SAMPLING_VAR,
    ModelParameters,
    PredictorKind,
    PredictorReport,
    ShrinkageProfile,
)
from .numerics import CubicCoefficients, cubic_roots, normal_cdf


# ---------------------------------------------------------------------------
# vectorized kernels in (w, xbeta, a, q)
# ---------------------------------------------------------------------------

def combo_variance(w, a, q):
    """Variance of w*Z + (1-w)*xhat_beta around X*beta."""
    return w * w * (a + SAMPLING_VAR) + (1.0 - w) ** 2 * q


def squared_bias(w, a, q):
    """E[{w Z + (1-w) xhat_beta}^2 - lambda]."""
    return combo_variance(w, a, q) - a


def mspe_parts(w, a, q):
    """(g1, g2) with MSPE(w) = xbeta^2 * g1(w) + g2(w)."""
    v = combo_variance(w, a, q)
    # 4s w^2 - 8(a+q) w + 4(a+q), in a form that is exactly 1 at w = 1
    g1 = 4.0 * (a + q) * (1.0 - w) ** 2 + w * w
    g2 = (
        3.0 * v * v
        - (v - a) ** 2
        + 3.0 * a * a
        - 6.0 * a * a * w * w
        - 0.5 * a * w * w
        - 2.0 * a * q * (1.0 - w) ** 2
    )
    return g1, g2


def mspe_value(w, xbeta, a, q):
    g1, g2 = mspe_parts(w, a, q)
    return np.asarray(xbeta) ** 2 * g1 + g2


def mspe_derivative_cubic(xbeta, a, q):
    """Monic cubic proportional to d MSPE / dw.

    Coefficients ``(1, c2, c1, c0)`` written in the variance shares
    gamma_a, gamma_b and gamma_x = xbeta^2 / (a + 1/4 + q).
    """
    total = a + SAMPLING_VAR + q
    ga = a / total
    gb = q / total
    gx = np.asarray(xbeta, dtype=float) ** 2 / total
    c2 = -3.0 * gb
    c1 = 2.0 * gb * gb - ga * ga + gb + gx
    c0 = -(gb * gb + (ga + gb) * gx)
    return np.ones_like(c1), c2 * np.ones_like(c1), c1, c0


def g2_derivative_cubic(a, q):
    """Coefficients of d g2 / dw (not normalized)."""
    s = a + SAMPLING_VAR + q
    c3 = 8.0 * s * s
    c2 = -24.0 * s * q
    c1 = 2.0 * (8.0 * q * q + 4.0 * s * q + 2.0 * a * s - 6.0 * a * a - 0.5 * a - 2.0 * a * q)
    c0 = -8.0 * q * q
    return c3, c2, c1, c0


def negative_probabilities(w, xbeta, a, q):
    """P[lam_hat(w) < 0], vectorized; zero wherever the raw square is unbiased or low."""
    c = np.asarray(squared_bias(w, a, q), dtype=float)
    var = np.asarray(combo_variance(w, a, q), dtype=float)
    pos = c > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        sd = np.sqrt(np.where(pos, var, 1.0))
        root = np.sqrt(np.where(pos, c, 0.0))
        lo = (-np.asarray(xbeta) - root) / sd
        hi = (-np.asarray(xbeta) + root) / sd
    # evaluate on the tail that keeps precision
    upper = normal_cdf(-lo) - normal_cdf(-hi)
    lower = normal_cdf(hi) - normal_cdf(lo)
    return np.where(pos, np.where(lo > 0.0, upper, lower), 0.0)


def _argmin_on_unit_interval(roots, objective):
    """Minimize ``objective`` over interior roots plus the endpoints 0 and 1.

    ``roots`` is (n, k) with NaN for unused slots. Ties go to the smaller w.
    """
    n = roots.shape[0]
    inside = np.where((roots > 0.0) & (roots < 1.0), roots, np.nan)
    cands = np.concatenate([np.zeros((n, 1)), inside, np.ones((n, 1))], axis=1)
    cands = np.sort(cands, axis=1)  # NaN sorts last
    vals = objective(cands)
    vals = np.where(np.isnan(cands), np.inf, vals)
    idx = np.argmin(vals, axis=1)  # first occurrence => smallest w among ties
    rows = np.arange(n)
    return cands[rows, idx], vals[rows, idx]


def optimal_weights(xbeta, a, q):
    """MSPE-minimizing weights over [0, 1], vectorized.

    Returns ``(w0, mspe_at_w0)``. Without measurement error (q == 0) the
    derivative factors as (w - gamma_a)(w^2 + gamma_a w + gamma_x), whose
    quadratic factor has no positive root, so gamma_a is used directly.
    """
    xbeta, a, q = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float)) for v in (xbeta, a, q)))
    roots = cubic_roots(*mspe_derivative_cubic(xbeta, a, q))
    no_error = q == 0.0
    if np.any(no_error):
        exact = np.full((int(no_error.sum()), 3), np.nan)
        # written exactly as 1 - B so the two agree bit for bit
        exact[:, 0] = 1.0 - SAMPLING_VAR / (SAMPLING_VAR + a[no_error])
        roots[no_error] = exact
    xb, aa, qq = xbeta[:, None], a[:, None], q[:, None]
    return _argmin_on_unit_interval(roots, lambda w: mspe_value(w, xb, aa, qq))


def g2_minimizers(a, q):
    a, q = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float)) for v in (a, q)))
    roots = cubic_roots(*g2_derivative_cubic(a, q))
    aa, qq = a[:, None], q[:, None]
    return _argmin_on_unit_interval(roots, lambda w: mspe_parts(w, aa, qq)[1])


# ---------------------------------------------------------------------------
# scalar API on ModelParameters / ShrinkageProfile
# ---------------------------------------------------------------------------

def _check_weight(w: float) -> float:
    w = float(w)
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"weight must lie in [0, 1], got {w}")
    return w


def bias(w: float, params: ModelParameters, profile: ShrinkageProfile) -> float:
    """Bias of the uncorrected squared predictor at weight ``w``."""
    return float(squared_bias(w, params.a, profile.b_over_t))


def correction_constant(w: float, params: ModelParameters, profile: ShrinkageProfile) -> float:
    return -bias(w, params, profile)


def mspe_split(w: float, xbeta: float, params: ModelParameters, profile: ShrinkageProfile):
    """(xbeta^2 * g1, g2) for the bias-corrected predictor."""
    w = _check_weight(w)
    g1, g2 = mspe_parts(w, params.a, profile.b_over_t)
    return float(xbeta) ** 2 * float(g1), float(g2)


def mspe_theoretical(w: float, xbeta: float, params: ModelParameters, profile: ShrinkageProfile) -> float:
    """Exact MSPE of the bias-corrected predictor at weight ``w``."""
    head, tail = mspe_split(w, xbeta, params, profile)
    return head + tail


def mspe_oracle_terms(w: float, xbeta: float, params: ModelParameters, profile: ShrinkageProfile):
    """The six expectations of E[(S^2 + C - lambda)^2], S = wZ + (1-w)xhat_beta.

    Returned in the order E[S^4], C^2, E[lambda^2], 2C E[S^2], -2C E[lambda],
    -2 E[lambda S^2]; their plain sum is the MSPE. Each term is computed from
    normal moments independently of ``mspe_theoretical``.
    """
    a = params.a
    q = profile.b_over_t
    mu2 = float(xbeta) ** 2
    v = w * w * (a + SAMPLING_VAR) + (1.0 - w) ** 2 * q
    c = a - v
    fourth = mu2 * mu2 + 6.0 * mu2 * v + 3.0 * v * v
    c_sq = c * c
    lam_sq = mu2 * mu2 + 6.0 * mu2 * a + 3.0 * a * a
    cross_s = 2.0 * c * (mu2 + v)
    cross_lam = -2.0 * c * (mu2 + a)
    # E[theta^2 S^2] expanded over the independent pieces of Z and xhat_beta
    e_theta2 = mu2 + a
    e_theta4 = lam_sq
    e_theta3_times_mu = (mu2 * float(xbeta) + 3.0 * float(xbeta) * a) * float(xbeta)
    e_lam_s2 = (
        w * w * (e_theta4 + SAMPLING_VAR * e_theta2)
        + 2.0 * w * (1.0 - w) * e_theta3_times_mu
        + (1.0 - w) ** 2 * e_theta2 * (mu2 + q)
    )
    return fourth, c_sq, lam_sq, cross_s, cross_lam, -2.0 * e_lam_s2


def bayes_predict(z: float, xbeta_true: float, params: ModelParameters) -> float:
    """Posterior mean of lambda given Z when X*beta is known."""
    big_b = params.big_b
    return ((1.0 - big_b) * z + big_b * xbeta_true) ** 2 + (1.0 - big_b) * SAMPLING_VAR


def direct_predict(z: float) -> float:
    return z * z - SAMPLING_VAR


def predict_with_weight(
    w: float,
    z: float,
    xhat_beta: float,
    params: ModelParameters,
    profile: ShrinkageProfile,
    *,
    area_id=None,
    kind: PredictorKind = PredictorKind.CUSTOM_WEIGHT,
    xbeta_for_mspe: Optional[float] = None,
) -> PredictorReport:
    """Bias-corrected predictor at weight ``w``.

    The theoretical MSPE is reported when ``xbeta_for_mspe`` is given; by
    default the surrogate ``xhat_beta`` is used.
    """
    w = _check_weight(w)
    corr = correction_constant(w, params, profile)
    value = (w * z + (1.0 - w) * xhat_beta) ** 2 + corr
    xb = xhat_beta if xbeta_for_mspe is None else xbeta_for_mspe
    return PredictorReport(
        area_id=area_id,
        predictor_kind=kind,
        weight=w,
        correction=corr,
        value=value,
        theoretical_bias=0.0,
        theoretical_mspe=mspe_theoretical(w, xb, params, profile),
        xbeta_is_surrogate=xbeta_for_mspe is None,
    )


def proposed_weight(profile: ShrinkageProfile) -> float:
    return 1.0 - profile.gamma


def proposed_predict(z, xhat_beta, params, profile, **kwargs) -> PredictorReport:
    return predict_with_weight(
        proposed_weight(profile), z, xhat_beta, params, profile, kind=PredictorKind.PROPOSED, **kwargs
    )


def b_substitute_bias(params: ModelParameters, profile: ShrinkageProfile) -> float:
    return params.big_b ** 2 * profile.b_over_t


def b_substitute_predict(
    z: float,
    xhat_beta: float,
    params: ModelParameters,
    profile: ShrinkageProfile,
    *,
    area_id=None,
    xbeta_for_mspe: Optional[float] = None,
) -> PredictorReport:
    """Bayes predictor with xhat_beta plugged in for X*beta (biased by B^2 b/t).

    Its MSPE equals the corrected predictor's MSPE at w = 1-B plus the
    squared bias.
    """
    big_b = params.big_b
    w = 1.0 - big_b
    corr = (1.0 - big_b) * SAMPLING_VAR
    value = (w * z + big_b * xhat_beta) ** 2 + corr
    bias_b = b_substitute_bias(params, profile)
    xb = xhat_beta if xbeta_for_mspe is None else xbeta_for_mspe
    return PredictorReport(
        area_id=area_id,
        predictor_kind=PredictorKind.B_SUBSTITUTE,
        weight=w,
        correction=corr,
        value=value,
        theoretical_bias=bias_b,
        theoretical_mspe=mspe_theoretical(w, xb, params, profile) + bias_b ** 2,
        xbeta_is_surrogate=xbeta_for_mspe is None,
    )


def optimal_weight(xbeta: float, params: ModelParameters, profile: ShrinkageProfile):
    """(w0, MSPE(w0)): the minimizer of the exact MSPE over [0, 1]."""
    if not np.isfinite(xbeta):
        raise ValueError("xbeta must be finite")
    w0, val = optimal_weights(xbeta, params.a, profile.b_over_t)
    return float(w0[0]), float(val[0])


def mspe_derivative_coefficients(xbeta: float, params: ModelParameters, profile: ShrinkageProfile) -> CubicCoefficients:
    c = mspe_derivative_cubic(float(xbeta), params.a, profile.b_over_t)
    return CubicCoefficients(*(float(x) for x in c))


def optimal_predict(
    z: float,
    xhat_beta: float,
    params: ModelParameters,
    profile: ShrinkageProfile,
    *,
    xbeta: Optional[float] = None,
    area_id=None,
) -> PredictorReport:
    """Predictor at the MSPE-optimal weight.

    The weight is computed from ``xbeta`` when the true value is known and
    from the surrogate ``xhat_beta`` otherwise.
    """
    xb = xhat_beta if xbeta is None else xbeta
    w0, _ = optimal_weight(xb, params, profile)
    return predict_with_weight(
        w0, z, xhat_beta, params, profile, area_id=area_id, kind=PredictorKind.OPTIMAL, xbeta_for_mspe=xbeta
    )


def weight_gap_bound(xbeta: float, params: ModelParameters, profile: ShrinkageProfile) -> float:
    """Upper bound on |w0 - (1 - gamma)|, shrinking like 1/|xbeta|."""
    if xbeta == 0:
        raise ValueError("bound is undefined for xbeta == 0")
    a, q = params.a, profile.b_over_t
    _, g2_min = g2_minimizers(a, q)
    _, g2_prop = mspe_parts(1.0 - profile.gamma, a, q)
    gap = max(float(g2_prop) - float(g2_min[0]), 0.0)
    return float(np.sqrt(gap / (float(xbeta) ** 2 * (4.0 * a + 4.0 * q + 1.0))))


def negative_probability(w: float, xbeta: float, params: ModelParameters, profile: ShrinkageProfile) -> float:
    """P[lam_hat(w) < 0] for the bias-corrected predictor."""
    w = _check_weight(w)
    if bias(w, params, profile) > 0.0 and combo_variance(w, params.a, profile.b_over_t) <= 0.0:
        raise ValueError("combination has zero variance (w == 0 with b == 0)")
    return float(negative_probabilities(w, float(xbeta), params.a, profile.b_over_t))


def truncate_nonneg(report: PredictorReport) -> PredictorReport:
    return report.with_updates(value_truncated=max(0.0, report.value))


def mle_xbeta(z: float, xhat_beta: float, params: ModelParameters, profile: ShrinkageProfile) -> float:
    """MLE of X*beta from the two independent unbiased observations."""
    gb = profile.gamma_b
    return gb * z + (1.0 - gb) * xhat_beta
