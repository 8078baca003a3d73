"""Domain types shared across the package.

Everything here is immutable after construction and safe to share between
concurrent workers.  A trial is a flat list of individual records grouped by
an opaque string cluster identifier; all deterministic output orders clusters
lexicographically by that identifier.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    CovariateShapeMismatch,
    EmptyArm,
    MixedAssignmentWithinCluster,
    NonBinaryOutcomeForBinaryKind,
    NonBinaryTreatment,
)


class OutcomeKind(enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class Weights(enum.Enum):
    """Weighting scheme for cluster-level regressions."""

    NONE = "none"
    CLUSTER_SIZE = "cs"
    MIN_VARIANCE = "mv"


class SeMode(enum.Enum):
    MODEL_BASED = "model"
    HUBER_WHITE = "hw"


class DfMode(enum.Enum):
    NORMAL_APPROX = "normal"
    SMALL_SAMPLE = "ssdf"


class ComplianceClass(enum.Enum):
    """Latent adherence type defined by potential treatment received.

    The built-in data generator only emits compliers and never-takers
    (one-sided non-adherence); the other two classes exist so external
    datasets can be described.
    """

    COMPLIER = "complier"
    NEVER_TAKER = "never_taker"
    ALWAYS_TAKER = "always_taker"
    DEFIER = "defier"


@dataclass(frozen=True, slots=True)
class IndividualRecord:
    """One participant: assignment ``z``, treatment received ``d``, outcome
    ``y``, and an optional vector of individual-level covariates ``x``."""

    cluster_id: str
    z: int
    d: int
    y: float
    x: tuple[float, ...] = ()


class Columns(NamedTuple):
    """Columnar view of a dataset, cached on first use.

    ``cluster_ids`` is lexicographically sorted and ``codes`` maps each record
    to its position in that ordering, so per-cluster reductions are cheap
    vectorised segment operations.
    """

    cluster_ids: tuple[str, ...]
    codes: np.ndarray
    z: np.ndarray
    d: np.ndarray
    y: np.ndarray
    x: np.ndarray
    sizes: np.ndarray


@dataclass(frozen=True)
class TrialDataset:
    """Individual-level trial data grouped by cluster.

    Parameters
    ----------
    records : sequence of IndividualRecord
    cluster_covariates : mapping from cluster id to a tuple of cluster-level
        covariate values; clusters absent from the mapping carry an empty
        vector.
    outcome_kind : whether ``y`` is continuous or 0/1.
    """

    records: tuple[IndividualRecord, ...]
    cluster_covariates: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    outcome_kind: OutcomeKind = OutcomeKind.CONTINUOUS

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(
            self,
            "cluster_covariates",
            {str(k): tuple(float(v) for v in vec) for k, vec in self.cluster_covariates.items()},
        )
        object.__setattr__(self, "_columns", None)

    @property
    def n_records(self) -> int:
        return len(self.records)

    def columns(self) -> Columns:
        """Return (and cache) the columnar view of the records."""
        cached = self._columns
        if cached is None:
            cached = _build_columns(self.records)
            object.__setattr__(self, "_columns", cached)
        return cached

    def _seed_columns(self, columns: Columns) -> None:
        # Used by the data generator, which already holds the arrays.
        object.__setattr__(self, "_columns", columns)

    def covariate_vector(self, cluster_id: str) -> tuple[float, ...]:
        return self.cluster_covariates.get(cluster_id, ())


def _build_columns(records: Sequence[IndividualRecord]) -> Columns:
    ids = np.array([r.cluster_id for r in records])
    cluster_ids, codes = np.unique(ids, return_inverse=True)
    k = len(records[0].x) if records else 0
    x = np.array([r.x for r in records], dtype=float).reshape(len(records), k)
    return Columns(
        cluster_ids=tuple(str(c) for c in cluster_ids),
        codes=codes.astype(np.intp),
        z=np.array([r.z for r in records], dtype=float),
        d=np.array([r.d for r in records], dtype=float),
        y=np.array([r.y for r in records], dtype=float),
        x=x,
        sizes=np.bincount(codes, minlength=len(cluster_ids)).astype(np.intp),
    )


@dataclass(frozen=True)
class ClusterSummary:
    """Per-cluster summary used by the cluster-level estimators.

    ``y_bar`` is either the raw outcome mean or a covariate-adjusted residual
    mean; ``d_bar`` is always the raw fraction receiving active treatment.
    """

    cluster_id: str
    n: int
    z: int
    d_bar: float
    y_bar: float
    w: tuple[float, ...] = ()


@dataclass(frozen=True)
class AnalysisOptions:
    """One cell of the estimation grid.

    ``icc`` fixes the intra-cluster correlation used by minimum-variance
    weights; leave it ``None`` to have the caller estimate it from the data
    being analysed.
    """

    weights: Weights = Weights.NONE
    se_mode: SeMode = SeMode.MODEL_BASED
    df_mode: DfMode = DfMode.NORMAL_APPROX
    adjust_w: bool = False
    icc: float | None = None

    def __post_init__(self):
        if self.icc is not None and not 0.0 <= self.icc <= 1.0:
            raise ValueError(f"fixed icc must be in [0, 1], got {self.icc}")


@dataclass(frozen=True)
class LateFit:
    """Point estimate with its standard error and interval.

    ``df`` is ``math.inf`` under the normal approximation.  ``first_stage_f``
    is the unadjusted, unweighted first-stage F statistic (``None`` for fits,
    such as the assignment-effect regression, that have no first stage).
    """

    estimate: float
    se: float
    ci: tuple[float, float]
    p: float
    df: float
    first_stage_f: float | None
    n_clusters: int
    options_used: AnalysisOptions


def validate(dataset: TrialDataset) -> TrialDataset:
    """Check dataset invariants and return the dataset unchanged.

    Raises
    ------
    NonBinaryTreatment
        ``z`` or ``d`` outside {0, 1}.
    NonBinaryOutcomeForBinaryKind
        declared-binary outcome with a value outside {0, 1}.
    CovariateShapeMismatch
        records carry ``x`` vectors of different lengths.
    MixedAssignmentWithinCluster
        assignment varies within a cluster.
    EmptyArm
        fewer than one cluster in either arm.
    """
    if not dataset.records:
        raise EmptyArm("dataset has no records")

    k = len(dataset.records[0].x)
    for r in dataset.records:
        if r.z not in (0, 1):
            raise NonBinaryTreatment(f"assignment z={r.z!r} in cluster {r.cluster_id}")
        if r.d not in (0, 1):
            raise NonBinaryTreatment(f"treatment d={r.d!r} in cluster {r.cluster_id}")
        if len(r.x) != k:
            raise CovariateShapeMismatch(
                f"record in cluster {r.cluster_id} has {len(r.x)} covariates, expected {k}"
            )
        if dataset.outcome_kind is OutcomeKind.BINARY and r.y not in (0.0, 1.0):
            raise NonBinaryOutcomeForBinaryKind(
                f"outcome y={r.y!r} in cluster {r.cluster_id}"
            )

    cols = dataset.columns()
    z_sums = np.bincount(cols.codes, weights=cols.z, minlength=len(cols.cluster_ids))
    for cid, total, size in zip(cols.cluster_ids, z_sums, cols.sizes):
        if total not in (0.0, float(size)):
            raise MixedAssignmentWithinCluster(f"cluster {cid} mixes z=0 and z=1")

    cluster_z = (z_sums > 0).astype(int)
    if cluster_z.all() or not cluster_z.any():
        raise EmptyArm("both trial arms must contain at least one cluster")
    return dataset
