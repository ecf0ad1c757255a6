"""Synthetic classification data: Gaussian blobs around per-class anchors."""

from __future__ import annotations

import numpy as np

from .network import Dataset


def make_blobs(
    samples: int,
    input_dim: int,
    classes: int,
    spread: float = 0.15,
    seed: int = 0,
) -> Dataset:
    """Balanced blobs; anchors sit on a 2-D grid with seeded offsets in the
    remaining dimensions so every input dimension carries signal."""
    if samples < classes:
        raise ValueError("need at least one sample per class")
    if input_dim < 2:
        raise ValueError("need at least two input dimensions")
    if classes < 2:
        raise ValueError("need at least two classes")
    if spread <= 0:
        raise ValueError("spread must be positive")
    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(classes)))
    anchors = np.zeros((classes, input_dim))
    for c in range(classes):
        gx, gy = c % side, c // side
        anchors[c, 0] = -1.0 + 2.0 * gx / max(side - 1, 1)
        anchors[c, 1] = -1.0 + 2.0 * gy / max(side - 1, 1)
    anchors[:, 2:] = rng.uniform(-0.8, 0.8, size=(classes, input_dim - 2))
    labels = np.arange(samples) % classes
    rng.shuffle(labels)
    inputs = anchors[labels] + rng.normal(0.0, spread, size=(samples, input_dim))
    return Dataset(inputs=inputs, labels=labels.astype(np.int64))


def split_dataset(ds: Dataset, holdout: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Deterministic shuffle split into (train, heldout)."""
    if not 0 < holdout < len(ds):
        raise ValueError("holdout size must leave a non-empty training set")
    order = np.random.default_rng(seed).permutation(len(ds))
    hold, keep = order[:holdout], order[holdout:]
    return (
        Dataset(ds.inputs[keep], ds.labels[keep]),
        Dataset(ds.inputs[hold], ds.labels[hold]),
    )
