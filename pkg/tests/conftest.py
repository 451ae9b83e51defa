"""Shared builders for the test suite."""

import numpy as np
import pytest

from proker.featurestore import FeatureSet, FewShotTask, TextClassifier


def f32(a):
    """Round-trip an array through float32 so it is exactly representable."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def unit_rows(a):
    """Scale the rows of a plain array to unit Euclidean norm."""
    a = np.asarray(a, dtype=np.float64)
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def random_featureset(rng, rows, dim, num_classes=0, normalized=False, metadata=None):
    """Build a FeatureSet with float32-representable rows."""
    data = rng.standard_normal((rows, dim))
    if normalized:
        # Normalize twice around the float32 cast so the flag stays honest.
        data = unit_rows(f32(unit_rows(data)))
    data = f32(data)
    labels = None
    if num_classes:
        labels = rng.integers(0, num_classes, size=rows)
        if rows >= num_classes:
            labels[:num_classes] = np.arange(num_classes)
            rng.shuffle(labels)
    return FeatureSet(
        data,
        labels=labels,
        num_classes=num_classes,
        normalized=normalized,
        metadata=dict(metadata or {}),
    )


def random_classifier(rng, dim, num_classes, names=True):
    """Build a TextClassifier with unit-norm float32 columns."""
    w = rng.standard_normal((dim, num_classes))
    w = f32(w / np.linalg.norm(w, axis=0, keepdims=True))
    class_names = [f"class_{j}" for j in range(num_classes)] if names else None
    return TextClassifier(w, class_names=class_names)


def balanced_support(rng, num_classes, shots, dim, spread=0.3):
    """Few-shot support features clustered around per-class unit anchors."""
    anchors = unit_rows(rng.standard_normal((num_classes, dim)))
    rows = np.repeat(anchors, shots, axis=0)
    rows = unit_rows(rows + spread * rng.standard_normal(rows.shape))
    labels = np.repeat(np.arange(num_classes), shots)
    return FeatureSet(unit_rows(f32(rows)), labels=labels,
                      num_classes=num_classes, normalized=True)


def random_task(rng, num_classes=4, shots=3, dim=8, queries=20, spread=0.3):
    """A complete FewShotTask with clustered support and matching queries."""
    support = balanced_support(rng, num_classes, shots, dim, spread=spread)
    anchors = np.stack([
        support.data[support.labels == c].mean(axis=0) for c in range(num_classes)
    ])
    qlabels = rng.integers(0, num_classes, size=queries)
    qrows = anchors[qlabels] + spread * rng.standard_normal((queries, dim))
    query = FeatureSet(unit_rows(f32(unit_rows(qrows))), labels=qlabels,
                       num_classes=num_classes, normalized=True)
    text = TextClassifier(f32(unit_rows(anchors).T))
    return FewShotTask(support=support, query=query, text=text,
                       shots=shots, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
