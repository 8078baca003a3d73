"""Cluster-level summaries, covariate-adjusted outcomes, and ICC estimation.

The summary step turns individual records into one row per cluster: the mean
outcome, the fraction receiving active treatment, the cluster size, and any
cluster-level covariates.  Individual-level covariates cannot enter the
cluster-level regressions directly, so adjustment happens here instead: a
single individual-level regression of the outcome on the selected covariates
(no treatment terms, clustering ignored) is fitted, and the within-cluster
means of its residuals replace the raw outcome means.  For binary outcomes
the regression is logistic and the residual is the observed-minus-predicted
success count scaled by cluster size.

The treatment summary ``d_bar`` is never adjusted; first-stage regressions
always see the raw adherence fractions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import wls
from .errors import (
    NoCovariatesSelected,
    NonConvergence,
    RankDeficient,
    RankDeficientDesign,
    SeparationDetected,
)
from .model import ClusterSummary, OutcomeKind, TrialDataset

_SCORE_TOL = 1e-10
_MAX_NEWTON_ITER = 100
_SEPARATION_BOUND = 30.0


@dataclass(frozen=True)
class IccEstimate:
    """Intra-cluster correlation with its variance components.

    ``rho`` is ``sigma2_between / (sigma2_between + sigma2_within)`` and is 0
    when both components vanish; the between component is truncated at zero
    when the moment estimator goes negative.
    """

    rho: float
    sigma2_between: float
    sigma2_within: float


def cluster_means(dataset: TrialDataset) -> list[ClusterSummary]:
    """Collapse a dataset to unadjusted per-cluster summaries.

    Output is ordered lexicographically by cluster id and is invariant to the
    order of the input records.
    """
    cols = dataset.columns()
    return _assemble(dataset, cluster_values=_cluster_means_of(cols.y, cols))


def summaries_from_values(dataset: TrialDataset, values) -> list[ClusterSummary]:
    """Summaries whose outcome column is the cluster mean of ``values``.

    ``values`` is one number per record, in record order.  Used for adjusted
    outcomes; also handy for custom residual definitions.
    """
    cols = dataset.columns()
    values = np.asarray(values, dtype=float)
    if values.shape != cols.y.shape:
        raise ValueError(f"need one value per record, got shape {values.shape}")
    return _assemble(dataset, cluster_values=_cluster_means_of(values, cols))


def _cluster_means_of(values, cols):
    # Sum each cluster in sorted-value order so the means are bit-identical
    # under any permutation of the input records.
    order = np.lexsort((values, cols.codes))
    starts = np.searchsorted(cols.codes[order], np.arange(len(cols.cluster_ids)))
    return np.add.reduceat(values[order], starts) / cols.sizes


def _assemble(dataset, cluster_values):
    cols = dataset.columns()
    d_bar = _cluster_means_of(cols.d, cols)
    z_sums = np.bincount(cols.codes, weights=cols.z, minlength=len(cols.cluster_ids))
    return [
        ClusterSummary(
            cluster_id=cid,
            n=int(n),
            z=int(z_sum > 0),
            d_bar=float(db),
            y_bar=float(yb),
            w=dataset.covariate_vector(cid),
        )
        for cid, n, z_sum, db, yb in zip(
            cols.cluster_ids, cols.sizes, z_sums, d_bar, cluster_values
        )
    ]


def _adjustment_design(dataset, x_columns, allow_empty):
    cols = dataset.columns()
    x_columns = tuple(int(c) for c in x_columns)
    if not x_columns and not allow_empty:
        raise NoCovariatesSelected("select at least one individual-level covariate")
    k = cols.x.shape[1]
    for c in x_columns:
        if not 0 <= c < k:
            raise NoCovariatesSelected(f"covariate index {c} out of range for {k} columns")
    design = np.column_stack([np.ones(len(cols.y))] + [cols.x[:, c] for c in x_columns])
    return design, cols


def continuous_residuals(dataset: TrialDataset, x_columns: Sequence[int]) -> np.ndarray:
    """Per-record residuals of OLS of the outcome on intercept + selected x."""
    design, cols = _adjustment_design(dataset, x_columns, allow_empty=False)
    try:
        fit = wls.fit_wls(design, cols.y)
    except RankDeficient as exc:
        raise RankDeficientDesign(str(exc)) from exc
    return fit.residuals


def binary_residuals(dataset: TrialDataset, x_columns: Sequence[int] = ()) -> np.ndarray:
    """Per-record ``y - p_hat`` from a logistic fit on intercept + selected x.

    An empty selection fits the intercept-only model.
    """
    design, cols = _adjustment_design(dataset, x_columns, allow_empty=True)
    coef = _fit_logistic(design, cols.y)
    return cols.y - expit(design @ coef)


def adjust_continuous(dataset: TrialDataset, x_columns: Sequence[int]) -> list[ClusterSummary]:
    """Summaries with ``y_bar`` replaced by covariate-adjusted residual means.

    Requires a continuous outcome and at least one selected covariate.  The
    treatment summary is recomputed from the raw data, identical to
    :func:`cluster_means`.
    """
    if dataset.outcome_kind is not OutcomeKind.CONTINUOUS:
        raise ValueError("adjust_continuous requires a continuous outcome")
    return summaries_from_values(dataset, continuous_residuals(dataset, x_columns))


def adjust_binary(dataset: TrialDataset, x_columns: Sequence[int] = ()) -> list[ClusterSummary]:
    """Summaries with ``y_bar`` replaced by logistic difference-residuals.

    Each cluster gets ``(observed successes - predicted successes) / n``,
    treated downstream as a continuous outcome.
    """
    if dataset.outcome_kind is not OutcomeKind.BINARY:
        raise ValueError("adjust_binary requires a binary outcome")
    return summaries_from_values(dataset, binary_residuals(dataset, x_columns))


def _fit_logistic(design, y):
    """Maximum-likelihood logistic coefficients via damped Newton steps.

    Converges when the largest absolute score falls below 1e-10; declares
    separation when any coefficient exceeds 30 on the logit scale.
    """
    n, p = design.shape
    if np.linalg.matrix_rank(design, tol=1e-10 * max(1.0, float(np.abs(design).max()))) < p:
        raise RankDeficientDesign("logistic design is collinear")

    beta = np.zeros(p)
    ll = _log_likelihood(design, y, beta)
    for _ in range(_MAX_NEWTON_ITER):
        eta = design @ beta
        probs = expit(eta)
        score = design.T @ (y - probs)
        if np.max(np.abs(score)) < _SCORE_TOL:
            return beta
        info = design.T @ (design * (probs * (1.0 - probs))[:, None])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise SeparationDetected("singular information matrix") from exc

        # Accept any step that does not worsen the log-likelihood beyond its
        # own rounding noise, which scales with |ll|; an absolute tolerance
        # here stalls the final near-optimum Newton steps on large samples.
        noise = 1e-12 * (1.0 + abs(ll))
        scale = 1.0
        while scale > 1e-10:
            candidate = beta + scale * step
            ll_new = _log_likelihood(design, y, candidate)
            if ll_new >= ll - noise:
                break
            scale *= 0.5
        else:
            raise NonConvergence("step halving stalled")
        beta, ll = candidate, ll_new
        if np.max(np.abs(beta)) > _SEPARATION_BOUND:
            raise SeparationDetected(
                f"coefficient magnitude exceeded {_SEPARATION_BOUND} on the logit scale"
            )
    raise NonConvergence(f"no convergence in {_MAX_NEWTON_ITER} Newton iterations")


def _log_likelihood(design, y, beta):
    eta = design @ beta
    return float(y @ eta - np.logaddexp(0.0, eta).sum())


def anova_icc(values, clusters) -> IccEstimate:
    """One-way ANOVA moment estimator of the intra-cluster correlation.

    Parameters
    ----------
    values : array of individual-level measurements.
    clusters : parallel array of cluster labels.

    The between-cluster variance component is ``(MSB - MSW) / n0`` with
    ``n0 = (N - sum(n_j^2)/N) / (J - 1)``, truncated at zero; ``rho`` is the
    between share of the total.  Identical values everywhere give ``rho = 0``.
    """
    values = np.asarray(values, dtype=float)
    _, codes = np.unique(np.asarray(clusters), return_inverse=True)
    n_clusters = int(codes.max()) + 1 if codes.size else 0
    if n_clusters < 2:
        raise ValueError("ICC estimation needs at least 2 clusters")

    sizes = np.bincount(codes, minlength=n_clusters).astype(float)
    total = float(sizes.sum())
    means = np.bincount(codes, weights=values, minlength=n_clusters) / sizes
    grand = float(values.mean())

    ss_between = float(sizes @ (means - grand) ** 2)
    ss_within = float(((values - means[codes]) ** 2).sum())
    ms_between = ss_between / (n_clusters - 1)
    ms_within = ss_within / (total - n_clusters) if total > n_clusters else 0.0

    n0 = (total - float(sizes @ sizes) / total) / (n_clusters - 1)
    sigma2_between = max(0.0, (ms_between - ms_within) / n0)
    sigma2_within = ms_within
    denom = sigma2_between + sigma2_within
    rho = sigma2_between / denom if denom > 0.0 else 0.0
    return IccEstimate(rho=rho, sigma2_between=sigma2_between, sigma2_within=sigma2_within)


def icc_oneway_anova(dataset: TrialDataset, variable: str = "outcome") -> IccEstimate:
    """ICC of the outcome or of treatment received, pooled across arms."""
    cols = dataset.columns()
    if variable == "outcome":
        values = cols.y
    elif variable in ("treatment", "treatment_received"):
        values = cols.d
    else:
        raise ValueError(f"unknown variable selector {variable!r}")
    return anova_icc(values, cols.codes)
