"""Random Fourier features and prototype compression of fitted models.

A map of ``R`` frequencies approximates the RBF kernel
``exp(-beta/2 ||x - y||^2)`` through

    psi(x) = sqrt(2 / R) * cos(W x + b),   psi(x) . psi(y) ~ k(x, y)

with rows of ``W`` drawn from ``N(0, beta * I)`` and phases ``b`` uniform
on ``[0, 2 pi)``.  The orthogonal variant draws ``W`` in ``D x D`` blocks:
each block is a QR-orthogonalized Gaussian whose rows are rescaled by
fresh chi(D) norms, which keeps the rows exactly orthogonal within a block
while preserving the Gaussian marginals.

Compression replaces a fitted kernel model's support cache with ``R``
prototype rows: the dual coefficients are refit under the approximate
kernel ``psi(S) psi(S)^T`` and collapsed into ``psi(S)^T gamma_hat``, one
column per class, so that

    f(x) + psi(x) . (psi(S)^T gamma_hat)

reproduces the refit model's predictions exactly and the support set no
longer needs to be stored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Union

import numpy as np

from .adapters import (
    DEFAULT_JITTER,
    Logits,
    ProKeRModel,
    base_scores,
    read_container,
    save_model,
    spd_solve,
    write_container,
)
from .errors import BadMetadata, BetaMismatch, DimMismatch, InvalidConfig, NonFinite, SolveFailed
from .featurestore import (
    FeatureSet,
    TextClassifier,
    featureset_from_bytes,
    featureset_to_bytes,
    text_classifier_from_featureset,
    text_classifier_to_featureset,
)
from .kernels import kernel_matrix


@dataclass(frozen=True, eq=False)
class FourierMap:
    """Frozen feature map: frequencies ``R x D``, phases ``R``, bandwidth."""

    frequencies: np.ndarray
    phases: np.ndarray
    beta: float
    orthogonal: bool
    seed: int

    def __post_init__(self) -> None:
        w = np.array(self.frequencies, dtype=np.float64, order="C")
        b = np.array(self.phases, dtype=np.float64, order="C")
        if w.ndim != 2 or w.shape[0] < 1:
            raise DimMismatch(f"frequencies must be R x D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise DimMismatch(f"need {w.shape[0]} phases, got shape {b.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise NonFinite("Fourier map contains NaN or Inf")
        if not (float(self.beta) > 0.0 and np.isfinite(self.beta)):
            raise InvalidConfig(f"beta must be finite and > 0, got {self.beta}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "frequencies", w)
        object.__setattr__(self, "phases", b)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def count(self) -> int:
        return self.frequencies.shape[0]

    @property
    def dim(self) -> int:
        return self.frequencies.shape[1]

    @property
    def scale(self) -> float:
        return float(np.sqrt(2.0 / self.count))


def build_fourier_map(dim: int, count: int, beta: float, orthogonal: bool = False, seed: int = 0) -> FourierMap:
    """Draw a deterministic map from ``default_rng(seed)``.

    Frequencies are drawn first, then phases, so maps of different sizes
    share no draws.  The orthogonal variant fills ``D x D`` blocks (the
    last block truncated) and fixes QR signs so the construction is
    reproducible.
    """
    if dim < 1 or count < 1:
        raise InvalidConfig(f"dim and count must be >= 1, got {dim}, {count}")
    rng = np.random.default_rng(seed)
    root_beta = float(np.sqrt(beta))
    if orthogonal:
        rows: list[np.ndarray] = []
        remaining = count
        while remaining > 0:
            g = rng.standard_normal((dim, dim))
            q, r = np.linalg.qr(g)
            q = q * np.sign(np.diag(r))
            norms = np.sqrt(rng.chisquare(dim, size=dim))
            block = root_beta * norms[:, None] * q.T
            rows.append(block[: min(dim, remaining)])
            remaining -= dim
        freqs = np.vstack(rows)
    else:
        freqs = root_beta * rng.standard_normal((count, dim))
    phases = rng.uniform(0.0, 2.0 * np.pi, count)
    return FourierMap(freqs, phases, beta=float(beta), orthogonal=bool(orthogonal), seed=int(seed))


def featurize_matrix(fmap: FourierMap, x: np.ndarray) -> np.ndarray:
    """Map a batch of rows through ``sqrt(2/R) cos(W x + b)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != fmap.dim:
        raise DimMismatch(f"expected rows of dim {fmap.dim}, got shape {x.shape}")
    return fmap.scale * np.cos(x @ fmap.frequencies.T + fmap.phases)


def featurize(fmap: FourierMap, x: np.ndarray) -> np.ndarray:
    """Map a single vector; returns a length-``R`` vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != fmap.dim:
        raise DimMismatch(f"expected a vector of dim {fmap.dim}, got {x.size}")
    return featurize_matrix(fmap, x[None, :])[0]


@dataclass(frozen=True, eq=False)
class PrototypeModel:
    """Compressed model: ``R x N`` prototypes, the map, the classifier.

    Predictions are ``f(x) + psi(x) @ prototypes``; the support set is gone
    and memory scales with ``R`` instead of the support size.
    """

    prototypes: np.ndarray
    fmap: FourierMap
    text: TextClassifier
    lam: float

    def __post_init__(self) -> None:
        p = np.array(self.prototypes, dtype=np.float64, order="C")
        if p.shape != (self.fmap.count, self.text.num_classes):
            raise DimMismatch(
                f"prototypes must be {self.fmap.count}x{self.text.num_classes}, "
                f"got {p.shape}"
            )
        if not np.isfinite(p).all():
            raise NonFinite("prototypes contain NaN or Inf")
        p.setflags(write=False)
        object.__setattr__(self, "prototypes", p)


def compress(model: ProKeRModel, fmap: FourierMap, jitter: float = DEFAULT_JITTER) -> PrototypeModel:
    """Collapse a fitted model's support cache into prototype rows.

    Requires a Euclidean RBF model whose bandwidth matches the map's. The
    residual targets are reconstructed from the stored coefficients, refit
    under the approximate kernel ``psi(S) psi(S)^T``, and folded into
    ``psi(S)^T gamma_hat``.  By construction the compressed predictions
    equal the refit approximate-kernel model's predictions.
    """
    if model.output_kernel is not None and not model.output_kernel.is_identity:
        raise InvalidConfig("compression supports identity output kernels only")
    spec = model.kernel
    if spec.family != "rbf" or spec.precision is not None:
        raise BetaMismatch("prototype compression requires a Euclidean rbf kernel")
    if spec.beta is None:
        raise BetaMismatch("model kernel has no resolved bandwidth")
    if fmap.dim != model.support.dim:
        raise DimMismatch(
            f"map dim {fmap.dim} does not match support dim {model.support.dim}"
        )
    if not np.isclose(fmap.beta, spec.beta, rtol=1e-12, atol=0.0):
        raise BetaMismatch(
            f"map bandwidth {fmap.beta!r} != model bandwidth {spec.beta!r}"
        )
    s = model.support.data
    k = kernel_matrix(spec, s, s)
    k = 0.5 * (k + k.T)
    # exact residual targets: the fit solved (K + (lam + jitter) I) gamma = rho
    rho = (k + (model.lam + model.jitter) * np.eye(s.shape[0])) @ model.gamma
    psi = featurize_matrix(fmap, s)
    k_hat = psi @ psi.T
    k_hat = 0.5 * (k_hat + k_hat.T)
    gamma_hat, _ = spd_solve(
        k_hat + model.lam * np.eye(s.shape[0]), rho, jitter, SolveFailed, "compress"
    )
    return PrototypeModel(
        prototypes=psi.T @ gamma_hat, fmap=fmap, text=model.text, lam=model.lam
    )


def prototype_predict(model: PrototypeModel, queries: FeatureSet) -> Logits:
    """Base scores plus the prototype correction in feature space."""
    if queries.dim != model.fmap.dim:
        raise DimMismatch(f"query dim {queries.dim} != map dim {model.fmap.dim}")
    psi = featurize_matrix(model.fmap, queries.data)
    return Logits(base_scores(model.text.weights, queries.data) + psi @ model.prototypes)


# --- serialization ----------------------------------------------------------------

def save_prototype_model(model: PrototypeModel, path: str | Path) -> None:
    """Write a compressed model to the PKM1 container."""
    n = model.text.num_classes
    fm = model.fmap
    header = {
        "kind": "prototype",
        "lambda": model.lam,
        "map": {
            "beta": fm.beta,
            "orthogonal": fm.orthogonal,
            "seed": fm.seed,
            "count": fm.count,
            "dim": fm.dim,
        },
    }
    blocks = {
        "prototypes": featureset_to_bytes(
            FeatureSet(model.prototypes, num_classes=n, metadata={"kind": "prototypes"})
        ),
        "frequencies": featureset_to_bytes(
            FeatureSet(fm.frequencies, num_classes=0, metadata={"kind": "frequencies"})
        ),
        "phases": featureset_to_bytes(
            FeatureSet(fm.phases[:, None], num_classes=0, metadata={"kind": "phases"})
        ),
        "text": featureset_to_bytes(text_classifier_to_featureset(model.text)),
    }
    write_container(path, header, blocks)


def load_prototype_model(path: str | Path) -> PrototypeModel:
    header, blocks = read_container(path)
    if header.get("kind") != "prototype":
        raise BadMetadata(
            f"expected a prototype model, found kind {header.get('kind')!r}"
        )
    for name in ("prototypes", "frequencies", "phases", "text"):
        if name not in blocks:
            raise BadMetadata(f"model container is missing block {name!r}")
    try:
        meta: dict[str, Any] = header["map"]
        lam = float(header["lambda"])
        fmap = FourierMap(
            frequencies=featureset_from_bytes(blocks["frequencies"]).data,
            phases=featureset_from_bytes(blocks["phases"]).data[:, 0],
            beta=float(meta["beta"]),
            orthogonal=bool(meta["orthogonal"]),
            seed=int(meta["seed"]),
        )
    except KeyError as exc:
        raise BadMetadata(f"model header is missing {exc}") from None
    text = text_classifier_from_featureset(featureset_from_bytes(blocks["text"]))
    prototypes = featureset_from_bytes(blocks["prototypes"]).data
    return PrototypeModel(prototypes=prototypes, fmap=fmap, text=text, lam=lam)


Model = Union[ProKeRModel, PrototypeModel]


def load_any_model(path: str | Path) -> Model:
    """Load either model kind by peeking at the container header."""
    header, _ = read_container(path)
    kind = header.get("kind")
    if kind == "cached":
        from .adapters import load_model

        return load_model(path)
    if kind == "prototype":
        return load_prototype_model(path)
    raise BadMetadata(f"unknown model kind {kind!r}")


def save_any_model(model: Model, path: str | Path) -> None:
    if isinstance(model, ProKeRModel):
        save_model(model, path)
    else:
        save_prototype_model(model, path)
