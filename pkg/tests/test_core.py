import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivbounds.core import (
    COMPATIBLE,
    INCIDENCE,
    CondProbs,
    Interval,
    IvDataset,
    Labels,
    build_dataset,
    cell_index,
    check_strata,
    decode_stratum,
    sate_of_strata,
    strata_to_condprobs,
    stratum_effect,
    stratum_index,
    stratum_name,
)
from ivbounds.errors import DataError

strata_dists = st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=16, max_size=16).map(
    lambda v: np.array(v) / np.sum(v)
)


def test_stratum_encoding():
    assert stratum_index(0, 0, 0, 0) == 0
    assert stratum_index(0, 1, 0, 1) == 5
    for s in range(16):
        assert stratum_index(*decode_stratum(s)) == s


def test_stratum_index_rejects_non_bits():
    with pytest.raises(DataError):
        stratum_index(0, 2, 0, 1)
    with pytest.raises(DataError):
        decode_stratum(16)


def test_stratum_effects():
    assert stratum_effect(stratum_index(0, 1, 0, 1)) == 1
    assert stratum_effect(stratum_index(1, 1, 1, 0)) == -1
    for s in range(16):
        _, _, y0, y1 = decode_stratum(s)
        if y0 == y1:
            assert stratum_effect(s) == 0


def test_stratum_names():
    assert stratum_name(5) == "CO-EF"
    assert stratum_name(stratum_index(0, 0, 1, 1)) == "NT-AG"
    assert stratum_name(stratum_index(1, 0, 1, 0)) == "DE-HF"
    assert len({stratum_name(s) for s in range(16)}) == 16


def test_incidence_structure():
    assert INCIDENCE.sum() == 32
    # the four cells of each instrument slice partition the strata
    assert np.array_equal(INCIDENCE[:4].sum(axis=0), np.ones(16))
    assert np.array_equal(INCIDENCE[4:].sum(axis=0), np.ones(16))
    assert list(COMPATIBLE[cell_index(0, 0, 0)]) == [0, 1, 4, 5]


def test_point_mass_condprobs():
    q = np.zeros(16)
    q[5] = 1.0
    p = strata_to_condprobs(q)
    assert p.p00_0 == 1.0
    assert p.p11_1 == 1.0
    assert sum(p) == 2.0

    q = np.zeros(16)
    q[stratum_index(0, 0, 1, 1)] = 1.0
    p = strata_to_condprobs(q)
    assert p.p10_0 == 1.0
    assert p.p10_1 == 1.0


def test_uniform_condprobs():
    p = strata_to_condprobs(np.full(16, 1 / 16))
    assert np.allclose(p.as_array(), 0.25)
    assert p.cell(1, 0, 1) == pytest.approx(0.25)


def test_sate_of_strata():
    q = np.zeros(16)
    q[5] = 1.0
    assert sate_of_strata(q) == 1.0
    assert sate_of_strata(np.full(16, 1 / 16)) == pytest.approx(0.0)
    q = np.zeros(16)
    q[5] = 0.7
    q[stratum_index(0, 0, 1, 0)] = 0.3
    assert sate_of_strata(q) == pytest.approx(0.4)


def test_vectorized_maps():
    q = np.random.default_rng(0).dirichlet(np.ones(16), size=5)
    p = strata_to_condprobs(q)
    assert p.p00_0.shape == (5,)
    assert sate_of_strata(q).shape == (5,)


@given(strata_dists)
@settings(max_examples=200, deadline=None)
def test_slices_sum_to_one(q):
    assert np.allclose(strata_to_condprobs(q).slice_sums(), 1.0, atol=1e-12)


def test_check_strata():
    with pytest.raises(DataError):
        check_strata(np.full(16, 0.1))
    q = np.full(16, 1 / 16)
    q[0] = -q[0]
    with pytest.raises(DataError):
        check_strata(q)
    with pytest.raises(DataError):
        check_strata(np.ones(8) / 8)


def test_condprobs_validation():
    with pytest.raises(DataError):
        CondProbs(0.5, 0.5, 0.5, 0.0, 0.25, 0.25, 0.25, 0.25).validate()
    with pytest.raises(DataError):
        CondProbs.from_array(np.ones(7))
    p = CondProbs(1.0, 1.0, 1.0, 1.0, 2.0, 0.0, 0.0, 2.0).renormalized()
    assert p.as_array() == pytest.approx([0.25] * 4 + [0.5, 0, 0, 0.5])


def test_interval():
    interval = Interval(-0.2, 0.4)
    assert interval.width == pytest.approx(0.6)
    assert interval.contains(0.0)
    assert not interval.contains(0.5)
    assert interval.contains(0.4 + 1e-10, tol=1e-9)
    with pytest.raises(DataError):
        Interval(0.5, 0.1)
    with pytest.raises(DataError):
        Interval(float("nan"), 0.1)


def test_labels():
    labels = Labels(0.1, -0.2, 0.4)
    assert labels.bounds == Interval(-0.2, 0.4)
    assert Labels(0.1).bounds is None
    assert labels.scaled(2.0).to_dict() == pytest.approx({"sate": 0.2, "lower": -0.4, "upper": 0.8})
    with pytest.raises(DataError):
        Labels(0.5, -0.2, 0.4)
    with pytest.raises(DataError):
        Labels(0.1, -0.2)


def test_dataset_validation():
    x = np.zeros((3, 1))
    with pytest.raises(DataError):
        IvDataset(x, [0, 1, 2], [0, 1, 1], [0.0, 1.0, 0.5])
    with pytest.raises(DataError):
        IvDataset(x, [0, 1, 1], [0, 1, 1], [0.0, 1.0, 1.5])
    with pytest.raises(DataError):
        IvDataset(x, [0, 1], [0, 1, 1], [0.0, 1.0, 1.0])

    dataset = IvDataset(x, [0, 1, 1], [0, 1, 1], [0.0, 1.0, 0.5])
    assert (dataset.n, dataset.d) == (3, 1)
    assert not dataset.is_binary
    assert dataset.binarized(0.5).is_binary
    assert list(dataset.binarized(0.5).y) == [0.0, 1.0, 1.0]


def test_build_dataset_rescales():
    dataset = build_dataset(np.zeros((3, 1)), [0, 1, 1], [0, 1, 1], [0.0, 5.0, 10.0], labels=Labels(2.0))
    assert list(dataset.y) == [0.0, 0.5, 1.0]
    assert dataset.y_scale == (0.0, 10.0)
    assert dataset.labels.sate == pytest.approx(0.2)
    raw = dataset.to_original_scale(Interval(0.1, 0.2))
    assert (raw.lower, raw.upper) == pytest.approx((1.0, 2.0))

    unit = build_dataset(np.zeros((2, 1)), [0, 1], [0, 1], [0.0, 1.0])
    assert unit.y_scale is None
