import math

import numpy as np
import pytest
from scipy import stats

from crtiv.dgp import AdherenceLevel, PoissonSizes, ScenarioConfig
from crtiv.mc import (
    ClOutcome,
    VariantKey,
    bias_and_mce,
    coverage_and_mce,
    run_study,
    variant_grid,
)
from crtiv.model import DfMode, SeMode, Weights

FAST_CONFIG = ScenarioConfig(
    adherence=AdherenceLevel.CLUSTER,
    n_clusters=12,
    sizes=PoissonSizes(6.0),
    pi=0.6,
    beta_cz=0.4,
)

ONE_VARIANT = (
    VariantKey(ClOutcome.UNADJUSTED, False, Weights.NONE, SeMode.HUBER_WHITE, DfMode.SMALL_SAMPLE),
)


def test_variant_grid_is_full_cross():
    grid = variant_grid()
    assert len(grid) == 48
    assert len(set(grid)) == 48


def test_bias_constant_sample():
    bias, mce = bias_and_mce([0.5, 0.5, 0.5], truth=0.4)
    assert bias == pytest.approx(0.1, abs=1e-12)
    assert mce == 0.0


def test_bias_two_point_formula():
    bias, mce = bias_and_mce([0.3, 0.5], truth=0.4)
    assert bias == pytest.approx(0.0, abs=1e-15)
    assert mce == pytest.approx(0.1, abs=1e-15)


def test_bias_symmetric_sample_is_zero():
    bias, _ = bias_and_mce([0.25, 0.75], truth=0.5)
    assert bias == 0.0


def test_bias_single_estimate():
    bias, mce = bias_and_mce([0.9], truth=0.4)
    assert bias == pytest.approx(0.5, abs=1e-15)
    assert math.isnan(mce)


def test_bias_permutation_invariance_bitwise():
    rng = np.random.default_rng(0)
    estimates = rng.normal(size=101)
    shuffled = rng.permutation(estimates)
    assert bias_and_mce(estimates, 0.2) == bias_and_mce(shuffled, 0.2)


def test_coverage_extremes_and_mce():
    ses = np.ones(4)
    crits = np.full(4, 2.0)
    full, _ = coverage_and_mce(np.full(4, 0.1), ses, crits, truth=0.0)
    assert full == 1.0
    half, _ = coverage_and_mce(np.array([0.0, 0.0, 5.0, 5.0]), ses, crits, truth=0.0)
    assert half == 0.5
    _, mce = coverage_and_mce(np.zeros(2500), np.ones(2500), np.full(2500, 2.0), 0.0)
    assert mce == pytest.approx(math.sqrt(0.95 * 0.05 / 2500), abs=1e-15)


def test_coverage_never_decreases_when_intervals_widen():
    rng = np.random.default_rng(1)
    estimates = rng.normal(0.0, 1.0, 400)
    ses = rng.uniform(0.3, 1.5, 400)
    z = float(stats.norm.ppf(0.975))
    t = float(stats.t.ppf(0.975, 8))
    narrow, _ = coverage_and_mce(estimates, ses, np.full(400, z), 0.0)
    wide, _ = coverage_and_mce(estimates, ses, np.full(400, t), 0.0)
    assert wide >= narrow


def test_coverage_length_mismatch_rejected():
    with pytest.raises(ValueError):
        coverage_and_mce([0.1], [0.1, 0.2], [2.0, 2.0], 0.0)


def test_run_study_deterministic_for_fixed_seed():
    a = run_study(FAST_CONFIG, n_replicates=6, variants=ONE_VARIANT, master_seed=42)
    b = run_study(FAST_CONFIG, n_replicates=6, variants=ONE_VARIANT, master_seed=42)
    assert a.variants == b.variants
    assert a.rejected_weak == b.rejected_weak
    c = run_study(FAST_CONFIG, n_replicates=6, variants=ONE_VARIANT, master_seed=43)
    assert c.variants != a.variants


def test_run_study_thread_count_does_not_change_results():
    sequential = run_study(FAST_CONFIG, n_replicates=6, variants=ONE_VARIANT, master_seed=7)
    threaded = run_study(
        FAST_CONFIG, n_replicates=6, variants=ONE_VARIANT, master_seed=7, threads=2
    )
    assert sequential.variants == threaded.variants
    assert sequential.attempts == threaded.attempts
    assert sequential.rejected_weak == threaded.rejected_weak


def test_attempt_accounting():
    report = run_study(FAST_CONFIG, n_replicates=8, variants=ONE_VARIANT, master_seed=5)
    assert report.attempts == report.rejected_weak + report.n_replicates
    assert report.rejected_weak > 0  # small weak trial rejects some draws
    result = report.variants[ONE_VARIANT[0]]
    assert result.n_fits + result.n_fit_failures == report.n_replicates


def test_single_replicate_bias_is_estimate_minus_truth():
    report = run_study(FAST_CONFIG, n_replicates=1, variants=ONE_VARIANT, master_seed=11)
    result = report.variants[ONE_VARIANT[0]]
    assert math.isnan(result.mce_bias)
    assert result.n_fits == 1
    assert result.coverage in (0.0, 1.0)


def test_full_grid_study_smoke():
    report = run_study(FAST_CONFIG, n_replicates=2, master_seed=3)
    assert len(report.variants) == 48
    assert all(r.n_fits + r.n_fit_failures == 2 for r in report.variants.values())


def test_retained_replicates_all_pass_the_screen():
    from crtiv.collapse import cluster_means
    from crtiv.dgp import generate
    from crtiv.iv import first_stage_f
    from crtiv.mc import _replicate_seed

    report = run_study(FAST_CONFIG, n_replicates=8, variants=ONE_VARIANT, master_seed=17)
    f_stats = []
    for attempt in range(report.attempts):
        trial = generate(FAST_CONFIG, _replicate_seed(17, attempt))
        f_stats.append(first_stage_f(cluster_means(trial.dataset)))
    retained = [f for f in f_stats if f >= 10.0]
    assert len(retained) == report.n_replicates
    assert len(f_stats) - len(retained) == report.rejected_weak
    assert min(retained) >= 10.0
