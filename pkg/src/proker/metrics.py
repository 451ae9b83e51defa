"""Data-driven Mahalanobis metric from pooled within-class covariance.

The estimate centers each class at its own mean, pools the squared
deviations with divisor ``rows - groups``, then shrinks toward a scaled
identity before inverting:

    cov_shrunk = (1 - eps) * cov + eps * (trace(cov) / dim) * I

The precision matrix is the Cholesky-based inverse of ``cov_shrunk``.  With
``eps = 1`` the metric degenerates to the scaled identity
``(dim / trace(cov)) * I``, i.e. plain Euclidean geometry up to a global
rescaling of the bandwidth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidConfig, SingularCovariance
from .featurestore import FeatureSet


@dataclass(frozen=True, eq=False)
class PrecisionEstimate:
    """Symmetric positive-definite precision matrix plus its provenance."""

    precision: np.ndarray
    shrinkage: float
    source_rows: int

    def __post_init__(self) -> None:
        p = np.array(self.precision, dtype=np.float64, order="C")
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise InvalidConfig(f"precision must be square, got shape {p.shape}")
        p.setflags(write=False)
        object.__setattr__(self, "precision", p)

    @property
    def dim(self) -> int:
        return self.precision.shape[0]


def pooled_within_class_cov(support: FeatureSet) -> np.ndarray:
    """Covariance of class-centered support rows, divisor ``rows - groups``.

    Rows without labels are treated as a single group.  Requires the
    divisor to be positive.
    """
    data = support.data
    if support.labels is None:
        groups = [np.arange(support.rows)]
    else:
        present = np.unique(support.labels)
        groups = [np.flatnonzero(support.labels == c) for c in present]
    divisor = support.rows - len(groups)
    if divisor < 1:
        raise InvalidConfig(
            f"covariance needs rows > groups, got {support.rows} rows "
            f"in {len(groups)} groups"
        )
    acc = np.zeros((support.dim, support.dim))
    for idx in groups:
        centered = data[idx] - data[idx].mean(axis=0)
        acc += centered.T @ centered
    return acc / divisor


def estimate_precision(support: FeatureSet, shrinkage: float = 0.1) -> PrecisionEstimate:
    """Inverse of the shrunk pooled covariance of ``support``.

    ``shrinkage`` must lie in ``[0, 1]``.  If the shrunk covariance is not
    positive definite (which always happens at ``shrinkage = 0`` whenever
    ``rows - groups < dim``), ``SingularCovariance`` is raised with a hint
    to raise the shrinkage.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise InvalidConfig(f"shrinkage must lie in [0, 1], got {shrinkage}")
    if support.rows < 2:
        raise InvalidConfig("precision estimation needs at least two rows")
    cov = pooled_within_class_cov(support)
    dim = cov.shape[0]
    target = (np.trace(cov) / dim) * np.eye(dim)
    shrunk = (1.0 - shrinkage) * cov + shrinkage * target

    n_groups = len(np.unique(support.labels)) if support.labels is not None else 1
    if shrinkage == 0.0 and support.rows - n_groups < dim:
        raise SingularCovariance(
            f"{support.rows} rows in {n_groups} classes cannot determine a "
            f"{dim}x{dim} covariance; increase shrinkage"
        )
    try:
        cho = scipy.linalg.cho_factor(shrunk, lower=True)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise SingularCovariance(
            f"shrunk covariance is not positive definite ({exc}); "
            f"increase shrinkage"
        ) from None
    precision = scipy.linalg.cho_solve(cho, np.eye(dim))
    precision = 0.5 * (precision + precision.T)
    return PrecisionEstimate(
        precision=precision, shrinkage=float(shrinkage), source_rows=support.rows
    )


def mahalanobis_sq(precision: np.ndarray | PrecisionEstimate, x: np.ndarray, y: np.ndarray) -> float:
    """Squared Mahalanobis distance ``(x - y)^T P (x - y)``."""
    p = precision.precision if isinstance(precision, PrecisionEstimate) else np.asarray(precision, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise InvalidConfig(f"vector shapes differ: {x.shape} vs {y.shape}")
    if p.shape != (x.size, x.size):
        raise InvalidConfig(f"precision shape {p.shape} does not match dim {x.size}")
    d = x - y
    return float(d @ p @ d)
