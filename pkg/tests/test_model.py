import numpy as np
import pytest

from crtiv.errors import (
    CovariateShapeMismatch,
    EmptyArm,
    MixedAssignmentWithinCluster,
    NonBinaryOutcomeForBinaryKind,
    NonBinaryTreatment,
)
from crtiv.model import (
    IndividualRecord,
    OutcomeKind,
    TrialDataset,
    validate,
)


def test_mixed_assignment_within_cluster_rejected():
    ds = TrialDataset(
        records=[
            IndividualRecord("a", 0, 0, 1.0),
            IndividualRecord("a", 1, 1, 2.0),
            IndividualRecord("b", 1, 1, 0.5),
        ]
    )
    with pytest.raises(MixedAssignmentWithinCluster):
        validate(ds)


def test_single_arm_rejected(make_dataset):
    ds = make_dataset({"a": (1, [(1, 1.0)]), "b": (1, [(1, 2.0)])})
    with pytest.raises(EmptyArm):
        validate(ds)
    with pytest.raises(EmptyArm):
        validate(TrialDataset(records=[]))


def test_well_formed_dataset_returned_unchanged(make_dataset):
    ds = make_dataset(
        {
            "a": (0, [(0, 1.0), (0, 2.0)]),
            "b": (1, [(1, 0.5)]),
            "c": (1, [(0, 1.5), (1, 2.5)]),
            "d": (0, [(0, 0.0)]),
        }
    )
    assert validate(ds) is ds
    assert validate(validate(ds)) is ds


def test_non_binary_treatment_rejected(make_dataset):
    ds = make_dataset({"a": (0, [(2, 1.0)]), "b": (1, [(1, 2.0)])})
    with pytest.raises(NonBinaryTreatment):
        validate(ds)
    bad_z = TrialDataset(
        records=[IndividualRecord("a", 3, 0, 1.0), IndividualRecord("b", 0, 0, 1.0)]
    )
    with pytest.raises(NonBinaryTreatment):
        validate(bad_z)


def test_binary_kind_requires_binary_outcome(make_dataset):
    ds = make_dataset(
        {"a": (0, [(0, 0.5)]), "b": (1, [(1, 1.0)])},
        outcome_kind=OutcomeKind.BINARY,
    )
    with pytest.raises(NonBinaryOutcomeForBinaryKind):
        validate(ds)
    ok = make_dataset(
        {"a": (0, [(0, 0.0)]), "b": (1, [(1, 1.0)])},
        outcome_kind=OutcomeKind.BINARY,
    )
    validate(ok)


def test_covariate_length_mismatch_rejected():
    ds = TrialDataset(
        records=[
            IndividualRecord("a", 0, 0, 1.0, (1.0,)),
            IndividualRecord("b", 1, 1, 2.0, (1.0, 2.0)),
        ]
    )
    with pytest.raises(CovariateShapeMismatch):
        validate(ds)


def test_cluster_index_partitions_records(make_dataset):
    rng = np.random.default_rng(0)
    rows = {
        f"c{i}": (int(i % 2), [(0, float(v)) for v in rng.normal(size=rng.integers(1, 9))])
        for i in range(12)
    }
    ds = validate(make_dataset(rows))
    cols = ds.columns()
    assert int(cols.sizes.sum()) == ds.n_records
    assert len(cols.cluster_ids) == 12
    assert list(cols.cluster_ids) == sorted(cols.cluster_ids)


def test_records_coerced_to_tuple(make_dataset):
    ds = make_dataset({"a": (0, [(0, 1.0)]), "b": (1, [(1, 2.0)])})
    assert isinstance(ds.records, tuple)
