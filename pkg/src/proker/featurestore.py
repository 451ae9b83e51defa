"""FSF v1 feature files, in-memory feature sets, and few-shot task sampling.

FSF v1 layout, little-endian throughout:

    bytes 0-3    magic ``b"FSF1"``
    bytes 4-7    u32 rows
    bytes 8-11   u32 dim
    byte  12     u8 flags (bit 0 = has_labels, bit 1 = normalized)
    rows*dim     f32 feature payload, row-major
    rows         i32 labels, only present when bit 0 is set
    u32          metadata byte length, then that many bytes of UTF-8 JSON

The metadata object must carry ``"num_classes"``; ``"class_names"``,
``"source_model"``, ``"dataset"`` and ``"kind"`` are optional.  Features are
stored as float32 on disk and promoted to float64 in memory so that every
downstream solve runs at full precision.

A text classifier (one weight column per class) reuses the same container
with ``has_labels = 0``: the file's ``rows`` is the feature dimension, its
``dim`` is the number of classes, and the payload is the ``D x N`` weight
matrix row-major.  Such files set ``"kind": "text_classifier"``.

Loading never rewrites the payload.  Callers that need unit-norm rows apply
:func:`ensure_unit_norm`, which normalizes only when the file's flag says
the features are unnormalized; this keeps ``save -> load`` bit-exact.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .errors import (
    BadMagic,
    BadMetadata,
    CorruptLabel,
    DimMismatch,
    InsufficientSamples,
    InvalidConfig,
    IoError,
    NonFinite,
    ZeroNormRow,
)

logger = logging.getLogger(__name__)

MAGIC = b"FSF1"
FLAG_HAS_LABELS = 0x01
FLAG_NORMALIZED = 0x02

#: Tolerance on row norms when a set claims to be normalized.
UNIT_NORM_TOL = 1e-5

_HEADER = struct.Struct("<4sIIB")
_U32 = struct.Struct("<I")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """An immutable ``rows x dim`` block of features with optional labels.

    ``data`` is always float64 and C-contiguous in memory.  ``labels`` is
    int32 when present and each entry lies in ``[0, num_classes)``.  A set
    constructed with ``normalized=True`` must actually have unit-norm rows.
    An empty set (``rows == 0``) is legal in memory but cannot be written
    to disk; the file format requires at least one row.
    """

    data: np.ndarray
    labels: np.ndarray | None = None
    num_classes: int = 0
    normalized: bool = False
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64, order="C")
        if data.ndim != 2:
            raise DimMismatch(f"feature data must be 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise DimMismatch("feature dimension must be >= 1")
        if not np.isfinite(data).all():
            raise NonFinite("feature data contains NaN or Inf")
        labels = self.labels
        if labels is not None:
            labels = np.array(labels, dtype=np.int32, order="C")
            if labels.shape != (data.shape[0],):
                raise DimMismatch(
                    f"expected {data.shape[0]} labels, got shape {labels.shape}"
                )
            if int(self.num_classes) < 1:
                raise CorruptLabel("num_classes must be >= 1 when labels are present")
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise CorruptLabel(f"labels must lie in [0, {self.num_classes})")
            _frozen(labels)
        if self.normalized and data.shape[0]:
            norms = np.linalg.norm(data, axis=1)
            if np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
                raise ValueError(
                    "normalized flag is set but some rows are not unit norm"
                )
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", int(self.num_classes))
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class OneHotLabels:
    """Dense one-hot target matrix; every row sums to exactly one."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=np.float64, order="C")
        if m.ndim != 2:
            raise DimMismatch(f"one-hot matrix must be 2-D, got shape {m.shape}")
        if m.size:
            values_ok = np.all((m == 0.0) | (m == 1.0))
            if not values_ok or not np.all(m.sum(axis=1) == 1.0):
                raise CorruptLabel("one-hot rows must contain a single 1")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True, eq=False)
class TextClassifier:
    """Frozen linear classifier: a ``dim x num_classes`` weight matrix.

    Logits for a query batch ``X`` are ``X @ weights``.  Column norms are
    not forced to one; loaders record the observed range in ``metadata``.
    """

    weights: np.ndarray
    class_names: list[str] | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.float64, order="C")
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise DimMismatch(f"classifier weights must be 2-D, got shape {w.shape}")
        if not np.isfinite(w).all():
            raise NonFinite("classifier weights contain NaN or Inf")
        names = self.class_names
        if names is not None:
            names = [str(n) for n in names]
            if len(names) != w.shape[1]:
                raise DimMismatch(
                    f"{len(names)} class names for {w.shape[1]} classes"
                )
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True, eq=False)
class FewShotTask:
    """A sampled episode: balanced support, query pool, frozen classifier.

    The support holds exactly ``shots`` rows of every class in
    ``[0, num_classes)``.  Feature dimensions of support, query, validation
    and classifier must agree.
    """

    support: FeatureSet
    query: FeatureSet
    text: TextClassifier | None
    shots: int
    seed: int
    validation: FeatureSet | None = None
    name: str = "task"

    def __post_init__(self) -> None:
        sup, qry = self.support, self.query
        if sup.labels is None:
            raise CorruptLabel("support set must carry labels")
        if sup.dim != qry.dim:
            raise DimMismatch(f"support dim {sup.dim} != query dim {qry.dim}")
        counts = np.bincount(sup.labels, minlength=sup.num_classes)
        if not np.all(counts == self.shots):
            raise InsufficientSamples(
                f"support must hold exactly {self.shots} rows per class, "
                f"got counts {counts.tolist()}"
            )
        if self.validation is not None and self.validation.dim != sup.dim:
            raise DimMismatch("validation dim differs from support dim")
        if self.text is not None:
            if self.text.dim != sup.dim:
                raise DimMismatch(
                    f"classifier dim {self.text.dim} != feature dim {sup.dim}"
                )
            if self.text.num_classes != sup.num_classes:
                raise DimMismatch(
                    f"classifier has {self.text.num_classes} columns but the "
                    f"task has {sup.num_classes} classes"
                )

    @property
    def num_classes(self) -> int:
        return self.support.num_classes


# --- row transforms ------------------------------------------------------

def l2_normalize(fs: FeatureSet) -> FeatureSet:
    """Scale every row to unit Euclidean norm.

    Raises ``ZeroNormRow`` if any row norm falls below ``1e-12``.
    """
    norms = np.linalg.norm(fs.data, axis=1)
    if fs.rows and norms.min() < 1e-12:
        raise ZeroNormRow(f"row {int(norms.argmin())} has near-zero norm")
    data = fs.data / norms[:, None] if fs.rows else fs.data
    return FeatureSet(
        data, fs.labels, fs.num_classes, normalized=True, metadata=fs.metadata
    )


def ensure_unit_norm(fs: FeatureSet) -> FeatureSet:
    """Return ``fs`` unchanged when already normalized, else normalize it."""
    return fs if fs.normalized else l2_normalize(fs)


def one_hot(fs: FeatureSet) -> OneHotLabels:
    """One-hot encode the labels of ``fs`` into a ``rows x num_classes`` matrix."""
    if fs.labels is None:
        raise CorruptLabel("feature set carries no labels")
    m = np.zeros((fs.rows, fs.num_classes))
    if fs.rows:
        m[np.arange(fs.rows), fs.labels] = 1.0
    return OneHotLabels(m)


# --- binary serialization -------------------------------------------------

def featureset_to_bytes(fs: FeatureSet) -> bytes:
    """Serialize to the FSF v1 byte layout described in the module docstring."""
    if fs.rows < 1:
        raise DimMismatch("cannot serialize an empty FeatureSet")
    flags = 0
    if fs.labels is not None:
        flags |= FLAG_HAS_LABELS
    if fs.normalized:
        flags |= FLAG_NORMALIZED
    meta = dict(fs.metadata)
    meta["num_classes"] = int(fs.num_classes)
    blob = json.dumps(meta, separators=(",", ":"), sort_keys=True).encode("utf-8")
    parts = [
        _HEADER.pack(MAGIC, fs.rows, fs.dim, flags),
        fs.data.astype("<f4").tobytes(),
    ]
    if fs.labels is not None:
        parts.append(fs.labels.astype("<i4").tobytes())
    parts.append(_U32.pack(len(blob)))
    parts.append(blob)
    return b"".join(parts)


def featureset_from_bytes(buf: bytes) -> FeatureSet:
    """Parse an FSF v1 byte string, validating sizes, labels and finiteness."""
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("not an FSF v1 file (bad magic)")
    if len(buf) < _HEADER.size:
        raise DimMismatch("truncated FSF header")
    _, rows, dim, flags = _HEADER.unpack_from(buf, 0)
    if rows < 1 or dim < 1:
        raise DimMismatch(f"invalid matrix shape {rows}x{dim}")
    has_labels = bool(flags & FLAG_HAS_LABELS)
    normalized = bool(flags & FLAG_NORMALIZED)

    off = _HEADER.size
    payload = rows * dim * 4
    if len(buf) < off + payload:
        raise DimMismatch(
            f"declared shape {rows}x{dim} needs {payload} payload bytes, "
            f"file holds {len(buf) - off}"
        )
    data32 = np.frombuffer(buf, dtype="<f4", count=rows * dim, offset=off)
    off += payload

    labels: np.ndarray | None = None
    if has_labels:
        if len(buf) < off + rows * 4:
            raise DimMismatch("label block shorter than declared row count")
        labels = np.frombuffer(buf, dtype="<i4", count=rows, offset=off).copy()
        off += rows * 4

    if len(buf) < off + 4:
        raise DimMismatch("missing metadata length field")
    (meta_len,) = _U32.unpack_from(buf, off)
    off += 4
    if len(buf) != off + meta_len:
        raise DimMismatch(
            f"metadata length {meta_len} disagrees with remaining "
            f"{len(buf) - off} bytes"
        )
    try:
        meta = json.loads(buf[off : off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadMetadata(f"metadata is not valid JSON: {exc}") from None
    if not isinstance(meta, dict) or "num_classes" not in meta:
        raise BadMetadata('metadata must be a JSON object with "num_classes"')
    num_classes = meta["num_classes"]
    if not isinstance(num_classes, int) or isinstance(num_classes, bool) or num_classes < 0:
        raise BadMetadata('"num_classes" must be a non-negative integer')

    data = data32.astype(np.float64).reshape(rows, dim)
    if not np.isfinite(data).all():
        raise NonFinite("feature payload contains NaN or Inf")
    if labels is not None:
        if num_classes < 1:
            raise CorruptLabel("file has labels but num_classes < 1")
        if labels.min() < 0 or labels.max() >= num_classes:
            raise CorruptLabel(
                f"labels outside [0, {num_classes}): "
                f"min {labels.min()}, max {labels.max()}"
            )
    return FeatureSet(
        data, labels, num_classes, normalized=normalized, metadata=meta
    )


def save_featureset(fs: FeatureSet, path: str | Path) -> None:
    """Write ``fs`` to ``path`` in FSF v1 form; OS failures become ``IoError``."""
    blob = featureset_to_bytes(fs)
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def load_featureset(path: str | Path) -> FeatureSet:
    """Read and validate an FSF v1 file; the payload is never rewritten."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    return featureset_from_bytes(buf)


# --- text classifier files --------------------------------------------------

def text_classifier_to_featureset(tc: TextClassifier) -> FeatureSet:
    """Wrap classifier weights in the label-free FSF representation."""
    meta = dict(tc.metadata)
    meta["kind"] = "text_classifier"
    if tc.class_names is not None:
        meta["class_names"] = list(tc.class_names)
    return FeatureSet(
        tc.weights, labels=None, num_classes=tc.num_classes, metadata=meta
    )


def text_classifier_from_featureset(fs: FeatureSet) -> TextClassifier:
    """Interpret a loaded FSF block as classifier weights.

    Requires ``kind == "text_classifier"``, no label block, and a column
    count matching the metadata ``num_classes``.  The observed column norm
    range is recorded in the returned metadata; columns are kept as stored.
    """
    if fs.metadata.get("kind") != "text_classifier":
        raise BadMetadata('expected metadata "kind": "text_classifier"')
    if fs.labels is not None:
        raise BadMetadata("text classifier files must not carry labels")
    if fs.num_classes != fs.dim:
        raise DimMismatch(
            f"metadata num_classes {fs.num_classes} != column count {fs.dim}"
        )
    norms = np.linalg.norm(fs.data, axis=0)
    meta = dict(fs.metadata)
    meta["column_norm_min"] = float(norms.min())
    meta["column_norm_max"] = float(norms.max())
    names = meta.get("class_names")
    return TextClassifier(fs.data, class_names=names, metadata=meta)


def save_text_classifier(tc: TextClassifier, path: str | Path) -> None:
    save_featureset(text_classifier_to_featureset(tc), path)


def load_text_classifier(path: str | Path) -> TextClassifier:
    return text_classifier_from_featureset(load_featureset(path))


# --- episode sampling --------------------------------------------------------

def sample_task(
    pool: FeatureSet,
    shots: int,
    query_fraction: float,
    seed: int,
    *,
    text: TextClassifier | None = None,
    val_shots: int = 0,
    name: str = "task",
) -> FewShotTask:
    """Draw a class-balanced episode from a labeled pool.

    For every class the generator ``default_rng(seed)`` permutes that
    class's row indices, takes the first ``shots`` rows as support, the
    next ``val_shots`` as validation, and then
    ``max(1, round(query_fraction * remaining))`` rows (capped at the
    remainder) as query.  Classes are visited in ascending label order, so
    the draw is fully determined by ``seed``.  Support, validation and
    query are pairwise disjoint.  Every class must keep at least one row
    for the query split, otherwise ``InsufficientSamples`` is raised.
    """
    if pool.labels is None:
        raise CorruptLabel("pool must carry labels to sample a task")
    if shots < 1:
        raise InvalidConfig("shots must be >= 1")
    if val_shots < 0:
        raise InvalidConfig("val_shots must be >= 0")
    if not 0.0 < query_fraction <= 1.0:
        raise InvalidConfig("query_fraction must lie in (0, 1]")

    rng = np.random.default_rng(seed)
    sup_idx: list[np.ndarray] = []
    val_idx: list[np.ndarray] = []
    qry_idx: list[np.ndarray] = []
    for cls in range(pool.num_classes):
        rows = np.flatnonzero(pool.labels == cls)
        needed = shots + val_shots + 1
        if rows.size < needed:
            raise InsufficientSamples(
                f"class {cls} has {rows.size} rows, needs {needed} "
                f"(shots={shots}, val_shots={val_shots}, plus one query)"
            )
        perm = rng.permutation(rows)
        sup_idx.append(perm[:shots])
        val_idx.append(perm[shots : shots + val_shots])
        rest = perm[shots + val_shots :]
        take = min(rest.size, max(1, round(query_fraction * rest.size)))
        qry_idx.append(rest[:take])

    def subset(chunks: list[np.ndarray]) -> FeatureSet:
        idx = np.concatenate(chunks)
        return FeatureSet(
            pool.data[idx],
            pool.labels[idx],
            pool.num_classes,
            normalized=pool.normalized,
            metadata=pool.metadata,
        )

    validation = subset(val_idx) if val_shots > 0 else None
    task = FewShotTask(
        support=subset(sup_idx),
        query=subset(qry_idx),
        text=text,
        shots=shots,
        seed=seed,
        validation=validation,
        name=name,
    )
    logger.debug(
        "sampled task %s: %d-way %d-shot, %d query rows",
        name, pool.num_classes, shots, task.query.rows,
    )
    return task


def with_query(task: FewShotTask, query: FeatureSet) -> FewShotTask:
    """A copy of ``task`` whose query split is replaced."""
    return replace(task, query=query)
