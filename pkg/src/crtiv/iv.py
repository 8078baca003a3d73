"""Cluster-level estimators: assignment effect, Wald ratio, two-stage fit.

All three consume the per-cluster summaries produced by :mod:`crtiv.collapse`.
The two-stage fit regresses the adherence fraction on assignment (plus any
cluster covariates), then the outcome summary on the fitted adherence; with a
single binary instrument and no weights this reproduces the Wald ratio of arm
means exactly.

Standard errors for the second stage are built from structural residuals,
i.e. residuals formed with the *actual* adherence fractions rather than the
first-stage fitted values.  Plugging stage-two OLS residuals into the usual
formulas understates the variance, which is why :class:`~crtiv.wls.DesignFit`
covariances are rebuilt here instead of reused.

The weak-instrument screen uses the unadjusted, unweighted first stage even
when the analysis itself is adjusted or weighted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import collapse, wls
from .errors import (
    CovariateShapeMismatch,
    EmptyArm,
    MissingIcc,
    WeakDenominator,
    ZeroDenominator,
)
from .model import (
    AnalysisOptions,
    ClusterSummary,
    LateFit,
    OutcomeKind,
    SeMode,
    TrialDataset,
    Weights,
    validate,
)

_RELEVANCE_TOL = 1e-12


@dataclass(frozen=True)
class TslsInternals:
    """Both stages of the two-stage system, for inspection and testing.

    ``structural_residuals`` are computed with the actual adherence
    fractions, never the first-stage fitted values.
    """

    gamma0: float
    gamma_z: float
    gamma_w: tuple[float, ...]
    beta0: float
    beta_iv: float
    beta_w: tuple[float, ...]
    first_stage_fitted: np.ndarray
    structural_residuals: np.ndarray


def _summary_arrays(summaries: Sequence[ClusterSummary], need_w: bool):
    if not summaries:
        raise EmptyArm("no cluster summaries")
    y = np.array([s.y_bar for s in summaries], dtype=float)
    d = np.array([s.d_bar for s in summaries], dtype=float)
    z = np.array([s.z for s in summaries], dtype=float)
    sizes = np.array([s.n for s in summaries], dtype=float)
    w_mat = None
    if need_w:
        widths = {len(s.w) for s in summaries}
        if len(widths) != 1 or widths == {0}:
            raise CovariateShapeMismatch(
                "cluster covariates must be present, with equal length, for every cluster"
            )
        w_mat = np.array([s.w for s in summaries], dtype=float)
    return y, d, z, sizes, w_mat


def resolve_weights(
    summaries: Sequence[ClusterSummary], options: AnalysisOptions, icc: float | None = None
) -> np.ndarray:
    """Regression weights for the requested scheme.

    For minimum-variance weights the ICC comes from ``options.icc`` when
    fixed, otherwise from the ``icc`` argument (an estimate supplied by the
    caller, e.g. :func:`late_from_dataset`).
    """
    sizes = np.array([s.n for s in summaries], dtype=float)
    if options.weights is Weights.NONE:
        return np.ones(len(sizes))
    if options.weights is Weights.CLUSTER_SIZE:
        return sizes
    rho = options.icc if options.icc is not None else icc
    if rho is None:
        raise MissingIcc(
            "minimum-variance weights need an ICC: fix one in AnalysisOptions.icc "
            "or pass an estimate"
        )
    return wls.mv_weights(sizes, rho)


def _design(z_or_d: np.ndarray, w_mat) -> np.ndarray:
    pieces = [np.ones(len(z_or_d)), z_or_d]
    if w_mat is not None:
        pieces.append(w_mat)
    return np.column_stack(pieces)


def itt(
    summaries: Sequence[ClusterSummary],
    options: AnalysisOptions,
    icc: float | None = None,
) -> LateFit:
    """Assignment-effect regression of the outcome summary on assignment."""
    y, _, z, _, w_mat = _summary_arrays(summaries, options.adjust_w)
    weights = resolve_weights(summaries, options, icc)
    fit = wls.fit_wls(_design(z, w_mat), y, weights)
    cov = fit.cov_robust if options.se_mode is SeMode.HUBER_WHITE else fit.cov_model
    se = math.sqrt(max(0.0, float(cov[1, 1])))
    estimate = float(fit.coefficients[1])
    ci_low, ci_high, p_value, df = wls.inference(
        estimate, se, options.df_mode, len(summaries), fit.n_params
    )
    return LateFit(
        estimate=estimate,
        se=se,
        ci=(ci_low, ci_high),
        p=p_value,
        df=df,
        first_stage_f=None,
        n_clusters=len(summaries),
        options_used=options,
    )


def wald_late(summaries: Sequence[ClusterSummary]) -> float:
    """Ratio of unweighted arm-mean differences of outcome and adherence."""
    y, d, z, _, _ = _summary_arrays(summaries, need_w=False)
    treated = z == 1.0
    if not treated.any() or treated.all():
        raise EmptyArm("both arms required for the ratio estimator")
    numerator = float(y[treated].mean() - y[~treated].mean())
    denominator = float(d[treated].mean() - d[~treated].mean())
    if abs(denominator) < _RELEVANCE_TOL:
        raise ZeroDenominator("arm means of treatment received coincide")
    return numerator / denominator


def first_stage_f(summaries: Sequence[ClusterSummary]) -> float:
    """Screening F: squared t-ratio of assignment in the unadjusted,
    unweighted first stage, with model-based SE and (1, J-2) degrees of
    freedom.  Deterministic adherence (zero residuals) returns ``inf``."""
    _, d, z, _, _ = _summary_arrays(summaries, need_w=False)
    fit = wls.fit_wls(_design(z, None), d)
    gamma_z = float(fit.coefficients[1])
    # Treat residuals at rounding-noise level as identically zero; adherence
    # fractions live in [0, 1] so an absolute threshold is safe.
    if float(np.max(np.abs(fit.residuals), initial=0.0)) <= 1e-12:
        return math.inf if abs(gamma_z) > _RELEVANCE_TOL else 0.0
    se = math.sqrt(float(fit.cov_model[1, 1]))
    return (gamma_z / se) ** 2


def _two_stage(summaries, options, icc):
    y, d, z, _, w_mat = _summary_arrays(summaries, options.adjust_w)
    weights = resolve_weights(summaries, options, icc)

    stage1 = wls.fit_wls(_design(z, w_mat), d, weights)
    gamma = stage1.coefficients
    if abs(float(gamma[1])) < _RELEVANCE_TOL:
        raise WeakDenominator("first-stage assignment coefficient is numerically zero")
    d_hat = _design(z, w_mat) @ gamma

    fitted_design = _design(d_hat, w_mat)
    stage2 = wls.fit_wls(fitted_design, y, weights)
    beta = stage2.coefficients

    structural = y - _design(d, w_mat) @ beta
    n_clusters, n_params = len(summaries), stage2.n_params
    sigma2 = (
        float(weights @ structural**2) / (n_clusters - n_params)
        if n_clusters > n_params
        else 0.0
    )
    cov_model = sigma2 * stage2.xtwx_inv
    rows = fitted_design * (weights * structural)[:, None]
    cov_robust = stage2.xtwx_inv @ (rows.T @ rows) @ stage2.xtwx_inv

    internals = TslsInternals(
        gamma0=float(gamma[0]),
        gamma_z=float(gamma[1]),
        gamma_w=tuple(float(g) for g in gamma[2:]),
        beta0=float(beta[0]),
        beta_iv=float(beta[1]),
        beta_w=tuple(float(b) for b in beta[2:]),
        first_stage_fitted=d_hat,
        structural_residuals=structural,
    )
    return internals, cov_model, cov_robust, n_params


def tsls_system(
    summaries: Sequence[ClusterSummary],
    options: AnalysisOptions,
    icc: float | None = None,
) -> TslsInternals:
    """Coefficients, fitted values, and structural residuals of both stages."""
    internals, _, _, _ = _two_stage(summaries, options, icc)
    return internals


def tsls(
    summaries: Sequence[ClusterSummary],
    options: AnalysisOptions,
    icc: float | None = None,
) -> LateFit:
    """Two-stage least squares on cluster summaries.

    Stage one regresses the adherence fraction on assignment, stage two the
    outcome summary on the fitted adherence, with identical weights in both
    stages and cluster covariates in both when ``options.adjust_w``.  The
    reported SE follows ``options.se_mode``; interval and p-value follow
    ``options.df_mode`` with degrees of freedom ``J - p``, ``p`` counting
    second-stage parameters only.
    """
    internals, cov_model, cov_robust, n_params = _two_stage(summaries, options, icc)
    cov = cov_robust if options.se_mode is SeMode.HUBER_WHITE else cov_model
    se = math.sqrt(max(0.0, float(cov[1, 1])))
    estimate = internals.beta_iv
    ci_low, ci_high, p_value, df = wls.inference(
        estimate, se, options.df_mode, len(summaries), n_params
    )
    return LateFit(
        estimate=estimate,
        se=se,
        ci=(ci_low, ci_high),
        p=p_value,
        df=df,
        first_stage_f=first_stage_f(summaries),
        n_clusters=len(summaries),
        options_used=options,
    )


def _prepared_inputs(dataset, options, x_columns):
    """Summaries plus an ICC estimate (when needed) for one dataset fit.

    ``x_columns`` selects individual-level covariates for the adjusted
    outcome summary; ``None`` keeps the raw means.  The ICC backing
    minimum-variance weights is re-estimated from whichever outcome variant
    is analysed: raw outcomes or the individual-level adjustment residuals.
    """
    validate(dataset)
    if x_columns is None:
        summaries = collapse.cluster_means(dataset)
        icc_values = dataset.columns().y
    elif dataset.outcome_kind is OutcomeKind.BINARY:
        icc_values = collapse.binary_residuals(dataset, x_columns)
        summaries = collapse.summaries_from_values(dataset, icc_values)
    else:
        icc_values = collapse.continuous_residuals(dataset, x_columns)
        summaries = collapse.summaries_from_values(dataset, icc_values)

    icc = None
    if options.weights is Weights.MIN_VARIANCE and options.icc is None:
        icc = collapse.anova_icc(icc_values, dataset.columns().codes).rho
    return summaries, icc


def late_from_dataset(
    dataset: TrialDataset,
    options: AnalysisOptions,
    x_columns: Sequence[int] | None = None,
) -> LateFit:
    """Validate, collapse, and fit the two-stage estimator in one call."""
    summaries, icc = _prepared_inputs(dataset, options, x_columns)
    return tsls(summaries, options, icc=icc)


def itt_from_dataset(
    dataset: TrialDataset,
    options: AnalysisOptions,
    x_columns: Sequence[int] | None = None,
) -> LateFit:
    """Validate, collapse, and fit the assignment-effect regression."""
    summaries, icc = _prepared_inputs(dataset, options, x_columns)
    return itt(summaries, options, icc=icc)
