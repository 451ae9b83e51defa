"""Kernel zoo, Gram matrices, and the separable multi-output kernel.

Four scalar families are supported, all over float64 inputs:

    rbf            exp(-beta/2 * ||x - y||^2)
    linear         x . y
    polynomial     (x . y)^degree            (homogeneous, integer degree)
    epanechnikov   max(0, 3/4 * (1 - ||x - y||^2))

The RBF family optionally measures distance in a Mahalanobis metric given
by a symmetric positive-definite precision matrix.  Pairwise blocks are
computed with the expanded-product identity
``||x||^2 + ||y||^2 - 2 x.y`` (clamped at zero) rather than per-pair
loops, so Gram assembly is a single matrix product.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .errors import DimMismatch, InvalidConfig
from .featurestore import FeatureSet

FAMILIES = ("rbf", "linear", "polynomial", "epanechnikov")


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Kernel family plus its parameters.

    ``beta`` may be left ``None`` for the RBF family, meaning "resolve via
    the median heuristic against the support at fit time"; evaluating a
    kernel with an unresolved bandwidth is an error.  A Mahalanobis
    ``precision`` matrix is accepted for RBF only; the other families are
    defined on the plain Euclidean inner product or distance.
    """

    family: str = "rbf"
    beta: float | None = None
    degree: int = 2
    precision: np.ndarray | None = None
    _whitener: np.ndarray | None = field(
        default=None, init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        family = str(self.family).lower()
        if family not in FAMILIES:
            raise InvalidConfig(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "family", family)
        if self.beta is not None:
            beta = float(self.beta)
            if not np.isfinite(beta) or beta <= 0.0:
                raise InvalidConfig(f"beta must be finite and > 0, got {self.beta}")
            object.__setattr__(self, "beta", beta)
        degree = int(self.degree)
        if degree < 1:
            raise InvalidConfig(f"polynomial degree must be >= 1, got {self.degree}")
        object.__setattr__(self, "degree", degree)
        if self.precision is not None:
            if family != "rbf":
                raise InvalidConfig(
                    "a Mahalanobis precision matrix is only supported for rbf"
                )
            p = np.array(self.precision, dtype=np.float64, order="C")
            if p.ndim != 2 or p.shape[0] != p.shape[1]:
                raise InvalidConfig(f"precision must be square, got shape {p.shape}")
            if np.abs(p - p.T).max() > 1e-8:
                raise InvalidConfig("precision matrix is not symmetric")
            try:
                chol = np.linalg.cholesky(p)
            except np.linalg.LinAlgError:
                raise InvalidConfig("precision matrix is not positive definite") from None
            p.setflags(write=False)
            chol.setflags(write=False)
            object.__setattr__(self, "precision", p)
            object.__setattr__(self, "_whitener", chol)

    @property
    def metric(self) -> str:
        return "euclidean" if self.precision is None else "mahalanobis"


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Kernel values between two point sets, ``a.rows x b.rows``."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64, order="C")
        if v.ndim != 2:
            raise DimMismatch(f"gram values must be 2-D, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class OutputKernel:
    """Symmetric PSD matrix coupling output coordinates of a vector fit.

    The identity matrix decouples the outputs, which is the only coupling
    the evaluation harness exercises; other PSD matrices are accepted.
    """

    matrix_b: np.ndarray

    def __post_init__(self) -> None:
        b = np.array(self.matrix_b, dtype=np.float64, order="C")
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise InvalidConfig(f"output kernel must be square, got shape {b.shape}")
        if b.size and np.abs(b - b.T).max() > 1e-10:
            raise InvalidConfig("output kernel must be symmetric")
        if b.size and np.linalg.eigvalsh(b).min() < -1e-10:
            raise InvalidConfig("output kernel must be positive semi-definite")
        b.setflags(write=False)
        object.__setattr__(self, "matrix_b", b)

    @classmethod
    def identity(cls, n: int) -> "OutputKernel":
        return cls(np.eye(n))

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.matrix_b, np.eye(self.matrix_b.shape[0])))


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances via the expanded product."""
    aa = np.einsum("ij,ij->i", a, a)[:, None]
    bb = np.einsum("ij,ij->i", b, b)[None, :]
    d = aa + bb - 2.0 * (a @ b.T)
    # rounding can push tiny distances a hair below zero
    return np.maximum(d, 0.0, out=d)


def _as_matrix(x: np.ndarray, dim: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimMismatch(f"{what} must have shape (*, {dim}), got {x.shape}")
    return x


def kernel_matrix(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense kernel block between row sets ``a`` and ``b`` (plain arrays)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimMismatch("kernel inputs must be 2-D arrays")
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"dim mismatch: {a.shape[1]} vs {b.shape[1]}")
    if spec.precision is not None:
        if spec.precision.shape[0] != a.shape[1]:
            raise DimMismatch(
                f"precision is {spec.precision.shape[0]}-dimensional but "
                f"features have dim {a.shape[1]}"
            )
        a = a @ spec._whitener
        b = b @ spec._whitener
    if spec.family == "rbf":
        if spec.beta is None:
            raise InvalidConfig(
                "rbf bandwidth is unresolved; call resolve_beta against a support set"
            )
        return np.exp(-0.5 * spec.beta * _sq_dists(a, b))
    if spec.family == "linear":
        return a @ b.T
    if spec.family == "polynomial":
        return (a @ b.T) ** spec.degree
    # epanechnikov
    return np.maximum(0.75 * (1.0 - _sq_dists(a, b)), 0.0)


def kernel_eval(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    """Scalar kernel value between two vectors, computed pairwise-direct."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise DimMismatch(f"vector shapes differ: {x.shape} vs {y.shape}")
    if spec.family == "linear":
        return float(x @ y)
    if spec.family == "polynomial":
        return float((x @ y) ** spec.degree)
    d = x - y
    if spec.precision is not None:
        if spec.precision.shape[0] != x.size:
            raise DimMismatch("precision dimension does not match the vectors")
        d = d @ spec._whitener
    sq = float(d @ d)
    if spec.family == "rbf":
        if spec.beta is None:
            raise InvalidConfig("rbf bandwidth is unresolved")
        return float(np.exp(-0.5 * spec.beta * sq))
    return max(0.75 * (1.0 - sq), 0.0)


def gram(spec: KernelSpec, a: FeatureSet, b: FeatureSet) -> GramMatrix:
    """Kernel values between two feature sets as a ``GramMatrix``."""
    if a.dim != b.dim:
        raise DimMismatch(f"feature dims differ: {a.dim} vs {b.dim}")
    return GramMatrix(kernel_matrix(spec, a.data, b.data))


def kernel_row(spec: KernelSpec, x: np.ndarray, support: FeatureSet) -> np.ndarray:
    """Kernel values between one query vector and every support row."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != support.dim:
        raise DimMismatch(f"query has dim {x.size}, support has dim {support.dim}")
    return kernel_matrix(spec, x[None, :], support.data)[0]


def median_heuristic_beta(support: np.ndarray | FeatureSet) -> float:
    """Bandwidth ``1 / median(||s_i - s_j||^2)`` over distinct support pairs.

    Pairs at zero distance (duplicate rows) are ignored; if every pair
    coincides there is no scale to infer and ``InvalidConfig`` is raised.
    """
    data = support.data if isinstance(support, FeatureSet) else np.asarray(support, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise InvalidConfig("median heuristic needs at least two support rows")
    d = _sq_dists(data, data)
    iu = np.triu_indices(data.shape[0], k=1)
    pair = d[iu]
    pair = pair[pair > 0.0]
    if pair.size == 0:
        raise InvalidConfig("all support rows coincide; bandwidth is undefined")
    return float(1.0 / np.median(pair))


def resolve_beta(spec: KernelSpec, support: np.ndarray | FeatureSet) -> KernelSpec:
    """Fill in an unset RBF bandwidth from the support via the median heuristic."""
    if spec.family != "rbf" or spec.beta is not None:
        return spec
    return replace(spec, beta=median_heuristic_beta(support))


# --- JSON form ---------------------------------------------------------------

def kernel_spec_to_dict(spec: KernelSpec) -> dict[str, Any]:
    d: dict[str, Any] = {"family": spec.family, "metric": spec.metric}
    if spec.family == "rbf" and spec.beta is not None:
        d["beta"] = spec.beta
    if spec.family == "polynomial":
        d["degree"] = spec.degree
    if spec.precision is not None:
        d["precision"] = spec.precision.tolist()
    return d


def kernel_spec_from_dict(d: dict[str, Any]) -> KernelSpec:
    """Inverse of :func:`kernel_spec_to_dict`; unknown keys are rejected."""
    if not isinstance(d, dict):
        raise InvalidConfig("kernel spec must be a JSON object")
    known = {"family", "beta", "degree", "metric", "precision"}
    extra = set(d) - known
    if extra:
        raise InvalidConfig(f"unknown kernel spec fields: {sorted(extra)}")
    family = d.get("family", "rbf")
    metric = d.get("metric", "euclidean")
    if metric not in ("euclidean", "mahalanobis"):
        raise InvalidConfig(f"unknown metric {metric!r}")
    precision = d.get("precision")
    if metric == "mahalanobis" and precision is None:
        raise InvalidConfig("mahalanobis metric requires a precision matrix")
    if metric == "euclidean" and precision is not None:
        raise InvalidConfig("euclidean metric must not carry a precision matrix")
    return KernelSpec(
        family=family,
        beta=d.get("beta"),
        degree=d.get("degree", 2),
        precision=None if precision is None else np.asarray(precision, dtype=np.float64),
    )


def kernel_spec_to_json(spec: KernelSpec) -> str:
    return json.dumps(kernel_spec_to_dict(spec), separators=(",", ":"), sort_keys=True)


def kernel_spec_from_json(text: str) -> KernelSpec:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"kernel spec is not valid JSON: {exc}") from None
    return kernel_spec_from_dict(d)
