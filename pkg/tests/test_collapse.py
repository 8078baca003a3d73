import numpy as np
import pytest
from scipy.special import expit

from crtiv.collapse import (
    adjust_binary,
    adjust_continuous,
    anova_icc,
    binary_residuals,
    cluster_means,
    continuous_residuals,
    icc_oneway_anova,
    summaries_from_values,
)
from crtiv.errors import (
    NoCovariatesSelected,
    RankDeficientDesign,
    SeparationDetected,
)
from crtiv.iv import tsls
from crtiv.model import AnalysisOptions, OutcomeKind, TrialDataset, validate


def test_simple_means(make_dataset):
    ds = make_dataset(
        {"a": (1, [(1, 1.0), (1, 0.0), (0, 1.0), (0, 0.0)]), "b": (0, [(0, 2.0)])}
    )
    summaries = cluster_means(validate(ds))
    by_id = {s.cluster_id: s for s in summaries}
    assert by_id["a"].y_bar == 0.5
    assert by_id["a"].d_bar == 0.5
    assert by_id["a"].n == 4
    assert by_id["b"].y_bar == 2.0


def test_perfect_adherence_dbar_equals_assignment(make_dataset):
    ds = make_dataset({"a": (1, [(1, 0.3), (1, 1.2)]), "b": (0, [(0, 0.1)])})
    for s in cluster_means(validate(ds)):
        assert s.d_bar == s.z


def test_means_match_bruteforce_oracle(make_dataset):
    rng = np.random.default_rng(5)
    rows = {
        "p": (0, [(int(rng.integers(0, 2)), float(v)) for v in rng.normal(size=3)]),
        "q": (1, [(int(rng.integers(0, 2)), float(v)) for v in rng.normal(size=5)]),
    }
    ds = validate(make_dataset(rows))
    summaries = {s.cluster_id: s for s in cluster_means(ds)}
    for cid, (_, recs) in rows.items():
        y_sum = sum(r[1] for r in recs)
        d_sum = sum(r[0] for r in recs)
        assert summaries[cid].y_bar == pytest.approx(y_sum / len(recs), abs=1e-15)
        assert summaries[cid].d_bar == pytest.approx(d_sum / len(recs), abs=1e-15)


def test_order_invariance(make_dataset):
    rng = np.random.default_rng(11)
    ds = make_dataset(
        {
            f"c{i}": (i % 2, [(0, float(v)) for v in rng.normal(size=4)])
            for i in range(6)
        }
    )
    base = cluster_means(ds)
    shuffled = list(ds.records)
    rng.shuffle(shuffled)
    permuted = cluster_means(TrialDataset(records=shuffled, outcome_kind=ds.outcome_kind))
    assert base == permuted


def test_adjust_continuous_rank_deficient(make_dataset):
    ds = make_dataset(
        {"a": (0, [(0, 1.0, 2.0), (0, 2.0, 2.0)]), "b": (1, [(1, 3.0, 2.0)])}
    )
    with pytest.raises(RankDeficientDesign):
        adjust_continuous(ds, (0,))


def test_adjust_continuous_requires_covariates(make_dataset):
    ds = make_dataset({"a": (0, [(0, 1.0, 0.5)]), "b": (1, [(1, 2.0, 1.5)])})
    with pytest.raises(NoCovariatesSelected):
        adjust_continuous(ds, ())
    with pytest.raises(NoCovariatesSelected):
        adjust_continuous(ds, (3,))


def test_zero_coefficient_adjustment_is_intercept_shift(make_dataset):
    # x paired so that sum((x - xbar) * y) is exactly zero: slope estimate 0.
    ds = make_dataset(
        {
            "a": (0, [(0, 3.0, 1.0), (0, 3.0, -1.0)]),
            "b": (1, [(1, 5.0, 2.0), (1, 5.0, -2.0)]),
            "c": (0, [(0, 4.0, 0.0)]),
            "d": (1, [(1, 7.0, 0.0)]),
        }
    )
    validate(ds)
    adjusted = adjust_continuous(ds, (0,))
    grand_mean = np.mean([r.y for r in ds.records])
    for raw, adj in zip(cluster_means(ds), adjusted):
        assert adj.y_bar == pytest.approx(raw.y_bar - grand_mean, abs=1e-12)
        assert adj.d_bar == raw.d_bar
    base = tsls(cluster_means(ds), AnalysisOptions())
    shifted = tsls(adjusted, AnalysisOptions())
    assert shifted.estimate == pytest.approx(base.estimate, abs=1e-10)
    assert shifted.se == pytest.approx(base.se, abs=1e-10)


def test_adjustment_matches_hand_normal_equations(make_dataset):
    ds = make_dataset(
        {
            "a": (0, [(0, 1.0, 0.2), (0, 2.0, 0.7)]),
            "b": (1, [(1, 1.5, -0.4), (1, 3.0, 1.1), (1, 2.5, 0.9)]),
            "c": (0, [(0, 0.5, -1.0)]),
        }
    )
    validate(ds)
    y = np.array([r.y for r in ds.records])
    x = np.array([r.x[0] for r in ds.records])
    n = len(y)
    # 2x2 normal equations solved by hand (Cramer's rule).
    sx, sxx, sy, sxy = x.sum(), (x * x).sum(), y.sum(), (x * y).sum()
    det = n * sxx - sx * sx
    intercept = (sxx * sy - sx * sxy) / det
    slope = (n * sxy - sx * sy) / det
    resid = y - intercept - slope * x

    expected = {}
    for cid in ("a", "b", "c"):
        mask = np.array([r.cluster_id == cid for r in ds.records])
        expected[cid] = resid[mask].mean()
    for s in adjust_continuous(ds, (0,)):
        assert s.y_bar == pytest.approx(expected[s.cluster_id], abs=1e-12)


def test_adjusted_residual_means_weighted_to_zero(make_dataset):
    rng = np.random.default_rng(3)
    rows = {
        f"c{i}": (
            i % 2,
            [
                (int(rng.integers(0, 2)), float(rng.normal()), float(rng.normal()))
                for _ in range(int(rng.integers(2, 7)))
            ],
        )
        for i in range(8)
    }
    ds = validate(make_dataset(rows))
    for s in [adjust_continuous(ds, (0,))]:
        total = sum(item.n * item.y_bar for item in s)
        assert abs(total) < 1e-10


def test_binary_intercept_only_score_identity(make_dataset):
    rng = np.random.default_rng(13)
    rows = {
        f"c{i}": (
            i % 2,
            [(0, float(rng.integers(0, 2))) for _ in range(int(rng.integers(3, 9)))],
        )
        for i in range(6)
    }
    ds = validate(make_dataset(rows, outcome_kind=OutcomeKind.BINARY))
    summaries = adjust_binary(ds, ())
    assert abs(sum(s.n * s.y_bar for s in summaries)) < 1e-8


def test_binary_intercept_and_covariate_score_identity(make_dataset):
    rng = np.random.default_rng(14)
    rows = {
        f"c{i}": (
            i % 2,
            [
                (0, float(rng.integers(0, 2)), float(rng.normal()))
                for _ in range(int(rng.integers(3, 9)))
            ],
        )
        for i in range(6)
    }
    ds = validate(make_dataset(rows, outcome_kind=OutcomeKind.BINARY))
    summaries = adjust_binary(ds, (0,))
    assert abs(sum(s.n * s.y_bar for s in summaries)) < 1e-8


def test_perfect_prediction_limit_gives_zero_residual_means(make_dataset):
    # A hypothetical fit with p_hat identically equal to y collapses to zeros.
    ds = make_dataset(
        {"a": (0, [(0, 1.0), (0, 0.0)]), "b": (1, [(1, 1.0)])},
        outcome_kind=OutcomeKind.BINARY,
    )
    y = np.array([r.y for r in ds.records])
    for s in summaries_from_values(ds, y - y):
        assert s.y_bar == 0.0


def test_separation_detected(make_dataset):
    # x sign perfectly predicts y: the MLE runs off to infinity.
    ds = make_dataset(
        {
            "a": (0, [(0, 0.0, -2.0), (0, 0.0, -1.0), (0, 0.0, -0.5)]),
            "b": (1, [(1, 1.0, 0.5), (1, 1.0, 1.0), (1, 1.0, 2.0)]),
        },
        outcome_kind=OutcomeKind.BINARY,
    )
    with pytest.raises(SeparationDetected):
        adjust_binary(ds, (0,))


def irls_logistic(design, y, tol=1e-12, max_iter=200):
    """Independent iteratively-reweighted least squares fit."""
    beta = np.zeros(design.shape[1])
    for _ in range(max_iter):
        eta = design @ beta
        p = expit(eta)
        w = p * (1 - p)
        zvar = eta + (y - p) / w
        wx = design * w[:, None]
        new = np.linalg.solve(design.T @ wx, wx.T @ zvar)
        if np.max(np.abs(new - beta)) < tol:
            return new
        beta = new
    return beta


def test_binary_adjustment_matches_irls_oracle(make_dataset):
    rng = np.random.default_rng(21)
    rows = {}
    for i in range(8):
        cluster = []
        for _ in range(int(rng.integers(4, 10))):
            x1, x2 = rng.normal(), rng.normal()
            prob = expit(0.3 + 0.8 * x1 - 0.5 * x2)
            cluster.append((0, float(rng.random() < prob), x1, x2))
        rows[f"c{i}"] = (i % 2, cluster)
    ds = validate(make_dataset(rows, outcome_kind=OutcomeKind.BINARY))

    y = np.array([r.y for r in ds.records])
    x = np.array([r.x for r in ds.records])
    design = np.column_stack([np.ones(len(y)), x])
    beta = irls_logistic(design, y)
    resid = y - expit(design @ beta)
    cols = ds.columns()
    expected = {
        cid: resid[cols.codes == k].mean() for k, cid in enumerate(cols.cluster_ids)
    }
    for s in adjust_binary(ds, (0, 1)):
        assert s.y_bar == pytest.approx(expected[s.cluster_id], abs=1e-10)
    assert np.allclose(binary_residuals(ds, (0, 1)), resid, atol=1e-10)


def test_binary_adjustment_converges_on_moderate_samples(make_dataset):
    # Large-sample fits must not stall in the final Newton steps, where
    # log-likelihood changes sit at rounding-noise level.
    rng = np.random.default_rng(29)
    for _ in range(25):
        rows = {}
        for i in range(30):
            cluster = []
            for _ in range(int(rng.integers(15, 35))):
                x = rng.normal()
                prob = 0.3 + 0.05 * x + rng.normal(0, 0.03)
                cluster.append((0, float(rng.random() < np.clip(prob, 0.02, 0.98)), x))
            rows[f"c{i}"] = (i % 2, cluster)
        ds = validate(make_dataset(rows, outcome_kind=OutcomeKind.BINARY))
        summaries = adjust_binary(ds, (0,))
        assert abs(sum(s.n * s.y_bar for s in summaries)) < 1e-8


def test_icc_one_when_within_variance_zero(make_dataset):
    ds = make_dataset(
        {"a": (0, [(0, 1.0)] * 3), "b": (1, [(1, 5.0)] * 3), "c": (0, [(0, -2.0)] * 3)}
    )
    est = icc_oneway_anova(ds)
    assert est.rho == 1.0
    assert est.sigma2_within == 0.0


def test_icc_truncated_to_zero_when_msb_below_msw():
    # Between-cluster means equal, all spread within clusters.
    values = np.array([0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0])
    clusters = np.array([0, 0, 1, 1, 2, 2, 3, 3])
    est = anova_icc(values, clusters)
    assert est.rho == 0.0
    assert est.sigma2_between == 0.0


def test_icc_balanced_fixture_matches_hand_anova():
    values = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 2.0, 2.0, 2.0, 8.0, 9.0, 7.0])
    clusters = np.repeat(np.arange(4), 3)
    # Hand ANOVA table: balanced design, m = 3 per cluster.
    means = values.reshape(4, 3).mean(axis=1)
    grand = values.mean()
    msb = 3 * ((means - grand) ** 2).sum() / 3
    msw = ((values.reshape(4, 3) - means[:, None]) ** 2).sum() / 8
    sigma_b = max(0.0, (msb - msw) / 3)
    expected = sigma_b / (sigma_b + msw)
    est = anova_icc(values, clusters)
    assert est.rho == pytest.approx(expected, abs=1e-12)
    assert est.sigma2_within == pytest.approx(msw, abs=1e-12)


def test_icc_always_in_unit_interval():
    rng = np.random.default_rng(17)
    for _ in range(50):
        n_clusters = int(rng.integers(2, 12))
        sizes = rng.integers(1, 9, n_clusters)
        clusters = np.repeat(np.arange(n_clusters), sizes)
        values = rng.normal(size=len(clusters)) + rng.normal(size=n_clusters)[clusters]
        est = anova_icc(values, clusters)
        assert 0.0 <= est.rho <= 1.0


def test_icc_degenerate_constant_values():
    est = anova_icc(np.full(10, 3.3), np.repeat(np.arange(5), 2))
    assert est.rho == 0.0


def test_icc_treatment_selector(make_dataset):
    ds = make_dataset(
        {"a": (1, [(1, 0.1), (1, 0.4)]), "b": (0, [(0, 0.2), (0, 0.3)])}
    )
    est = icc_oneway_anova(ds, variable="treatment")
    assert est.rho == 1.0  # treatment constant within clusters, differs between
    with pytest.raises(ValueError):
        icc_oneway_anova(ds, variable="banana")


def test_continuous_residuals_shape_check(make_dataset):
    ds = make_dataset({"a": (0, [(0, 1.0, 0.1)]), "b": (1, [(1, 2.0, 0.2)])})
    with pytest.raises(ValueError):
        summaries_from_values(ds, np.zeros(5))
    res = continuous_residuals(ds, (0,))
    assert res.shape == (2,)
