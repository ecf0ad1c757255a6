"""Synthetic blob data and the train/holdout split."""

import numpy as np
import pytest

from neuralign.data import make_blobs, split_dataset


def test_shapes_and_dtypes():
    ds = make_blobs(90, 7, 3, seed=1)
    assert ds.inputs.shape == (90, 7)
    assert ds.labels.shape == (90,)
    assert ds.labels.dtype == np.int64


def test_labels_balanced():
    ds = make_blobs(90, 5, 3, seed=2)
    counts = np.bincount(ds.labels, minlength=3)
    assert counts.tolist() == [30, 30, 30]


def test_near_balance_when_not_divisible():
    ds = make_blobs(31, 4, 3, seed=0)
    counts = np.bincount(ds.labels, minlength=3)
    assert counts.max() - counts.min() <= 1


def test_deterministic_per_seed():
    a = make_blobs(40, 6, 2, seed=9)
    b = make_blobs(40, 6, 2, seed=9)
    c = make_blobs(40, 6, 2, seed=10)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.inputs, c.inputs)


def test_classes_are_separated():
    """Class means should sit far apart relative to the within-class spread."""
    ds = make_blobs(300, 8, 4, spread=0.1, seed=3)
    means = np.stack([ds.inputs[ds.labels == c].mean(axis=0) for c in range(4)])
    for i in range(4):
        for j in range(i + 1, 4):
            assert np.linalg.norm(means[i] - means[j]) > 0.5


def test_every_dimension_varies_across_classes():
    ds = make_blobs(400, 10, 4, spread=0.05, seed=4)
    means = np.stack([ds.inputs[ds.labels == c].mean(axis=0) for c in range(4)])
    assert (means.std(axis=0) > 0.01).all()


def test_blob_argument_validation():
    with pytest.raises(ValueError, match="sample"):
        make_blobs(2, 4, 3)
    with pytest.raises(ValueError, match="dimension"):
        make_blobs(10, 1, 2)
    with pytest.raises(ValueError, match="class"):
        make_blobs(10, 4, 1)
    with pytest.raises(ValueError, match="spread"):
        make_blobs(10, 4, 2, spread=0.0)


def test_split_sizes_and_disjoint():
    ds = make_blobs(100, 5, 2, seed=5)
    train, held = split_dataset(ds, 30, seed=1)
    assert len(train) == 70 and len(held) == 30
    seen = {row.tobytes() for row in train.inputs} | {row.tobytes() for row in held.inputs}
    assert len(seen) == 100


def test_split_deterministic():
    ds = make_blobs(100, 5, 2, seed=5)
    a_train, a_held = split_dataset(ds, 30, seed=1)
    b_train, b_held = split_dataset(ds, 30, seed=1)
    np.testing.assert_array_equal(a_train.inputs, b_train.inputs)
    np.testing.assert_array_equal(a_held.labels, b_held.labels)


def test_split_keeps_label_pairing():
    ds = make_blobs(60, 4, 3, seed=6)
    pairs = {ds.inputs[i].tobytes(): int(ds.labels[i]) for i in range(60)}
    train, held = split_dataset(ds, 20, seed=2)
    for part in (train, held):
        for x, y in zip(part.inputs, part.labels):
            assert pairs[x.tobytes()] == int(y)


def test_split_validation():
    ds = make_blobs(10, 4, 2, seed=0)
    with pytest.raises(ValueError):
        split_dataset(ds, 0)
    with pytest.raises(ValueError):
        split_dataset(ds, 10)
