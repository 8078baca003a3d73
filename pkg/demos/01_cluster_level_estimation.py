"""
Cluster-level estimation of a complier treatment effect
=======================================================

A small worked example: a two-arm trial randomised by cluster, where some
clusters assigned to the intervention never take it up.  We collapse the
individual records to one summary row per cluster and compare three
estimators: the assignment-effect (ITT) regression, the Wald ratio, and
two-stage least squares.
"""

import numpy as np

from crtiv import (
    AnalysisOptions,
    DfMode,
    IndividualRecord,
    SeMode,
    TrialDataset,
    Weights,
    cluster_means,
    first_stage_f,
    itt,
    tsls,
    validate,
    wald_late,
)

# 1. Build a toy trial: 12 clusters, 6 per arm.  In the intervention arm,
#    two thirds of the clusters actually adopt the treatment; control
#    clusters have no access to it.  Adopting raises the outcome by ~0.5.
rng = np.random.default_rng(7)
records = []
for i in range(12):
    z = 1 if i < 6 else 0
    adopts = z and (i % 3 != 0)
    cluster_effect = rng.normal(0.0, 0.25)
    for _ in range(rng.integers(15, 25)):
        d = int(adopts)
        y = 0.5 * d + cluster_effect + rng.normal(0.0, 1.0)
        records.append(IndividualRecord(f"clinic{i:02d}", z, d, float(y)))

dataset = validate(TrialDataset(records=records))
summaries = cluster_means(dataset)
print("per-cluster summaries (id, n, z, treated fraction, mean outcome):")
for s in summaries:
    print(f"  {s.cluster_id}  n={s.n:3d}  z={s.z}  d_bar={s.d_bar:.2f}  y_bar={s.y_bar:+.3f}")

# 2. The instrument screen: the regression of treated fraction on assignment
#    should have F of at least 10 before an instrumental analysis is trusted.
print(f"\nfirst-stage F(1, J-2) = {first_stage_f(summaries):.1f}")

# 3. ITT vs Wald vs TSLS.  With one third of intervention clusters refusing,
#    the assignment effect is diluted to about two thirds of the adoption
#    effect; the Wald ratio rescales it, and just-identified TSLS reproduces
#    the Wald ratio exactly while also providing standard errors.
options = AnalysisOptions(se_mode=SeMode.HUBER_WHITE, df_mode=DfMode.SMALL_SAMPLE)
assignment = itt(summaries, options)
late = tsls(summaries, options)
print(f"\nITT estimate   {assignment.estimate:+.3f}  CI ({assignment.ci[0]:+.3f}, {assignment.ci[1]:+.3f})")
print(f"Wald ratio     {wald_late(summaries):+.3f}")
print(f"TSLS estimate  {late.estimate:+.3f}  CI ({late.ci[0]:+.3f}, {late.ci[1]:+.3f})")
print(f"TSLS minus Wald: {late.estimate - wald_late(summaries):+.1e} (identical by construction)")

# 4. The options grid: weighting scheme x SE flavour x degrees-of-freedom
#    rule.  At 12 clusters the small-sample t intervals are visibly wider
#    than the normal-approximation ones.
print("\nestimate and CI across the options grid:")
for weights in Weights:
    for se_mode in SeMode:
        for df_mode in DfMode:
            opts = AnalysisOptions(
                weights=weights, se_mode=se_mode, df_mode=df_mode, icc=0.1
            )
            fit = tsls(summaries, opts)
            print(
                f"  {weights.value:4s} {se_mode.value:5s} {df_mode.value:6s}"
                f"  {fit.estimate:+.3f}  ({fit.ci[0]:+.3f}, {fit.ci[1]:+.3f})"
            )
