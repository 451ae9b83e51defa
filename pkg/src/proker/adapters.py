"""Training-free few-shot estimators around a frozen linear classifier.

Every method starts from the base logits ``f(x) = x @ W`` of a frozen
classifier ``W`` and corrects them with a handful of labeled support rows
``S`` (targets ``Y``, usually one-hot).  ``NK`` denotes the number of
support rows.  Writing ``k(x) = (k(x, S_1), ..., k(x, S_NK))`` and
``Z(x) = sum_i k(x, S_i)``:

    zeroshot   f(x)
    tip        f(x) + alpha * k(x) @ Y
    nw         (lam * NK * f(x) + k(x) @ Y) / (lam * NK + Z(x))
    llr        per query: fit an affine map theta on the support under
               weights k(x), ridge-tethered to f at x, and evaluate it at x
    proker     f(x) + k(x) @ gamma  with  (K + lam * I) gamma = Y - S @ W

``nw`` is a locally-constant fit pulled toward the base predictor: the
proximal weight ``lam * NK`` acts like one virtual neighbor holding value
``f(x)``.  ``llr`` upgrades the local fit to affine.  ``proker`` solves one
global kernel ridge regression on the residuals ``Y - S @ W``, so its
correction generalizes beyond the support neighborhood; ``lam -> inf``
recovers the base predictor and ``lam -> 0`` interpolates the support
targets.  ``tip`` with ``alpha = 1 / (lam * NK)`` produces the same
ranking as ``nw`` because the two differ by the positive per-query factor
``(lam * NK + Z(x)) / (lam * NK)``.

All solves go through a Cholesky gate with an explicit jitter ridge and a
single escalation (``jitter * 100``); systems that remain non positive
definite raise instead of silently falling back.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .errors import (
    BadMagic,
    BadMetadata,
    DimMismatch,
    InvalidConfig,
    IoError,
    NonFinite,
    SingularSystem,
    SolveFailed,
)
from .featurestore import (
    FeatureSet,
    FewShotTask,
    OneHotLabels,
    TextClassifier,
    featureset_from_bytes,
    featureset_to_bytes,
    one_hot,
    text_classifier_from_featureset,
    text_classifier_to_featureset,
)
from .kernels import (
    KernelSpec,
    OutputKernel,
    kernel_matrix,
    kernel_spec_from_dict,
    kernel_spec_to_dict,
    resolve_beta,
)

METHODS = ("zeroshot", "tip", "nw", "llr", "proker")

DEFAULT_JITTER = 1e-8


@dataclass(frozen=True, eq=False)
class AdapterConfig:
    """Which estimator to run and with what knobs.

    ``lam`` is the proximal/ridge weight, ``alpha`` the additive cache
    weight used by ``tip`` only.  ``output_kernel`` optionally couples the
    output coordinates of the ``proker`` solve; ``None`` means identity.
    """

    method: str
    kernel: KernelSpec = field(default_factory=KernelSpec)
    lam: float = 1.0
    alpha: float = 1.0
    jitter: float = DEFAULT_JITTER
    output_kernel: OutputKernel | None = None

    def __post_init__(self) -> None:
        method = str(self.method).lower()
        if method not in METHODS:
            raise InvalidConfig(f"unknown method {self.method!r}; expected one of {METHODS}")
        object.__setattr__(self, "method", method)
        lam = float(self.lam)
        alpha = float(self.alpha)
        jitter = float(self.jitter)
        if not np.isfinite(lam) or lam < 0.0:
            raise InvalidConfig(f"lambda must be finite and >= 0, got {self.lam}")
        if not np.isfinite(alpha) or alpha < 0.0:
            raise InvalidConfig(f"alpha must be finite and >= 0, got {self.alpha}")
        if not np.isfinite(jitter) or jitter < 0.0:
            raise InvalidConfig(f"jitter must be finite and >= 0, got {self.jitter}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "jitter", jitter)
        if method in ("nw", "proker") and lam <= 0.0:
            raise InvalidConfig(f"lambda must be positive for {method}")
        if method == "tip" and self.kernel.family != "rbf":
            raise InvalidConfig("tip is defined for the rbf kernel only")


def validate_config(cfg: AdapterConfig, *, support_rows: int | None = None, dim: int | None = None) -> None:
    """Checks that need the data's shape, beyond the constructor's checks."""
    if cfg.method == "llr" and cfg.lam == 0.0:
        if support_rows is None or dim is None:
            raise InvalidConfig("llr with lambda = 0 requires known support shape")
        if support_rows < dim + 1:
            raise InvalidConfig(
                f"llr with lambda = 0 needs at least dim + 1 = {dim + 1} support "
                f"rows, got {support_rows}"
            )


@dataclass(frozen=True, eq=False)
class Logits:
    """Per-query scores, one row per query, one column per class."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64, order="C")
        if v.ndim != 2:
            raise DimMismatch(f"logits must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise NonFinite("logits contain NaN or Inf")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def argmax(self) -> np.ndarray:
        """Predicted class per row; ties resolve to the lowest index."""
        return self.values.argmax(axis=1)


@dataclass(frozen=True, eq=False)
class ProKeRModel:
    """Fitted kernel ridge correction: support rows plus dual coefficients.

    Satisfies ``(K + (lam + jitter) * I) @ gamma = Y - S @ W`` where ``K``
    is the support Gram matrix and ``jitter`` is the ridge actually used by
    the solve (recorded so the residual targets can be reconstructed
    exactly).  The stored kernel always carries a concrete bandwidth.
    """

    support: FeatureSet
    gamma: np.ndarray
    kernel: KernelSpec
    text: TextClassifier
    lam: float
    jitter: float = DEFAULT_JITTER
    output_kernel: OutputKernel | None = None

    def __post_init__(self) -> None:
        g = np.array(self.gamma, dtype=np.float64, order="C")
        if g.shape != (self.support.rows, self.text.num_classes):
            raise DimMismatch(
                f"gamma must be {self.support.rows}x{self.text.num_classes}, "
                f"got {g.shape}"
            )
        if not np.isfinite(g).all():
            raise NonFinite("gamma contains NaN or Inf")
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)


# --- shared solver gate -------------------------------------------------------

def spd_solve(a: np.ndarray, b: np.ndarray, jitter: float, error: type[Exception], what: str) -> tuple[np.ndarray, float]:
    """Solve ``(a + jitter * I) x = b`` for symmetric ``a`` via Cholesky.

    ``a`` may be a single matrix or a stack of them.  One escalation to
    ``jitter * 100`` is attempted before raising ``error``.  Returns the
    solution together with the jitter value that succeeded.
    """
    eye = np.eye(a.shape[-1])
    for boost in (jitter, jitter * 100.0):
        sys = a + boost * eye
        try:
            np.linalg.cholesky(sys)
        except np.linalg.LinAlgError:
            continue
        return np.linalg.solve(sys, b), boost
    raise error(
        f"{what}: system stayed non positive definite after jitter escalation "
        f"to {jitter * 100.0:g}"
    )


# --- array-level estimator math ----------------------------------------------
#
# These functions take plain float64 arrays so the synthetic-regression
# harness can reuse them with real-valued targets.  The FeatureSet-level
# operations below wrap them.

def base_scores(weights: np.ndarray, queries: np.ndarray) -> np.ndarray:
    return queries @ weights


def nw_blend(kernel_rows: np.ndarray, targets: np.ndarray, base: np.ndarray, lam: float, support_rows: int) -> np.ndarray:
    """Proximal locally-constant blend of cached targets and base scores."""
    z = kernel_rows.sum(axis=1, keepdims=True)
    pull = lam * support_rows
    denom = pull + z
    return (pull / denom) * base + (kernel_rows @ targets) / denom


def tip_scores(kernel_rows: np.ndarray, targets: np.ndarray, base: np.ndarray, alpha: float) -> np.ndarray:
    return base + alpha * (kernel_rows @ targets)


def llr_scores(
    spec: KernelSpec,
    support: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    queries: np.ndarray,
    lam: float,
    jitter: float = DEFAULT_JITTER,
    chunk: int = 256,
) -> np.ndarray:
    """Per-query kernel-weighted affine fit, tethered to the base scores.

    For query ``x`` with homogeneous coordinates ``xt = [1, x]`` and
    support coordinates ``St`` (one ``[1, s_i]`` row each), solve

        A theta = B
        A = St.T diag(k(x)) St + lam * NK * xt.T xt + jitter * I
        B = St.T diag(k(x)) Y  + lam * NK * xt.T f(x)

    and score the query as ``xt @ theta``.  Queries are processed in
    chunks with batched Cholesky-gated solves.
    """
    nk, d = support.shape
    st = np.hstack([np.ones((nk, 1)), support])
    out = np.empty((queries.shape[0], targets.shape[1]))
    pull = lam * nk
    for lo in range(0, queries.shape[0], chunk):
        xc = queries[lo : lo + chunk]
        k = kernel_matrix(spec, xc, support)
        xt = np.hstack([np.ones((xc.shape[0], 1)), xc])
        f = xc @ weights
        a = np.einsum("qn,nj,nl->qjl", k, st, st, optimize=True)
        a += pull * np.einsum("qj,ql->qjl", xt, xt)
        b = np.einsum("qn,nj,nc->qjc", k, st, targets, optimize=True)
        b += pull * xt[:, :, None] * f[:, None, :]
        theta, _ = spd_solve(a, b, jitter, SingularSystem, "llr")
        out[lo : lo + chunk] = np.einsum("qj,qjc->qc", xt, theta)
    return out


def krr_fit(
    spec: KernelSpec,
    support: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    lam: float,
    jitter: float = DEFAULT_JITTER,
    output_kernel: OutputKernel | None = None,
) -> tuple[np.ndarray, float]:
    """Dual coefficients of the kernel ridge fit on base-score residuals.

    Solves ``(K + lam * I) gamma = Y - S @ W`` (plus the jitter ridge).
    With a non-identity output kernel ``B = U diag(mu) U^T`` the system
    block-diagonalizes in the rotated targets: column ``j`` of
    ``gamma @ U`` solves ``(mu_j K + lam I)``; columns with ``mu_j = 0``
    cannot influence predictions and are set to zero.  Returns the
    coefficients and the jitter actually applied.
    """
    nk = support.shape[0]
    k = kernel_matrix(spec, support, support)
    k = 0.5 * (k + k.T)
    rho = targets - support @ weights
    if output_kernel is None or output_kernel.is_identity:
        return spd_solve(k + lam * np.eye(nk), rho, jitter, SolveFailed, "proker fit")
    mu, u = np.linalg.eigh(output_kernel.matrix_b)
    rot = rho @ u
    cols = np.zeros_like(rot)
    used = jitter
    for j, m in enumerate(mu):
        if m <= 1e-12:
            continue
        cols[:, j : j + 1], used = spd_solve(
            m * k + lam * np.eye(nk), rot[:, j : j + 1], jitter, SolveFailed, "proker fit"
        )
    return cols @ u.T, used


def krr_scores(
    spec: KernelSpec,
    support: np.ndarray,
    gamma: np.ndarray,
    weights: np.ndarray,
    queries: np.ndarray,
    output_kernel: OutputKernel | None = None,
) -> np.ndarray:
    correction = kernel_matrix(spec, queries, support) @ gamma
    if output_kernel is not None and not output_kernel.is_identity:
        correction = correction @ output_kernel.matrix_b
    return queries @ weights + correction


# --- FeatureSet-level operations -----------------------------------------------

def _check_instance(support: FeatureSet, labels: OneHotLabels, text: TextClassifier, queries: FeatureSet) -> None:
    if support.dim != queries.dim:
        raise DimMismatch(f"support dim {support.dim} != query dim {queries.dim}")
    if text.dim != support.dim:
        raise DimMismatch(f"classifier dim {text.dim} != feature dim {support.dim}")
    if labels.rows != support.rows:
        raise DimMismatch(f"{labels.rows} target rows for {support.rows} support rows")
    if labels.num_classes != text.num_classes:
        raise DimMismatch(
            f"targets have {labels.num_classes} columns, classifier has "
            f"{text.num_classes}"
        )


def zero_shot(text: TextClassifier, queries: FeatureSet) -> Logits:
    """Base classifier scores, untouched by the support set."""
    if text.dim != queries.dim:
        raise DimMismatch(f"classifier dim {text.dim} != query dim {queries.dim}")
    return Logits(base_scores(text.weights, queries.data))


def tip_predict(cfg: AdapterConfig, support: FeatureSet, labels: OneHotLabels, text: TextClassifier, queries: FeatureSet) -> Logits:
    """Additive cache correction ``f(x) + alpha * k(x) @ Y``."""
    _check_instance(support, labels, text, queries)
    if cfg.kernel.family != "rbf":
        raise InvalidConfig("tip is defined for the rbf kernel only")
    spec = resolve_beta(cfg.kernel, support.data)
    k = kernel_matrix(spec, queries.data, support.data)
    return Logits(tip_scores(k, labels.matrix, base_scores(text.weights, queries.data), cfg.alpha))


def proximal_nw_predict(cfg: AdapterConfig, support: FeatureSet, labels: OneHotLabels, text: TextClassifier, queries: FeatureSet) -> Logits:
    """Locally-constant estimate pulled toward the base scores.

    A query far from every support row (all kernel weights underflow to
    zero) receives exactly the base scores.
    """
    _check_instance(support, labels, text, queries)
    if cfg.lam <= 0.0:
        raise InvalidConfig("lambda must be positive for nw")
    spec = resolve_beta(cfg.kernel, support.data)
    k = kernel_matrix(spec, queries.data, support.data)
    base = base_scores(text.weights, queries.data)
    return Logits(nw_blend(k, labels.matrix, base, cfg.lam, support.rows))


def llr_predict(cfg: AdapterConfig, support: FeatureSet, labels: OneHotLabels, text: TextClassifier, queries: FeatureSet) -> Logits:
    """Per-query affine fit; see :func:`llr_scores` for the system solved."""
    _check_instance(support, labels, text, queries)
    validate_config(cfg, support_rows=support.rows, dim=support.dim)
    spec = resolve_beta(cfg.kernel, support.data)
    return Logits(
        llr_scores(
            spec, support.data, labels.matrix, text.weights, queries.data,
            cfg.lam, cfg.jitter,
        )
    )


def proker_fit(cfg: AdapterConfig, support: FeatureSet, labels: OneHotLabels, text: TextClassifier) -> ProKeRModel:
    """Fit the global kernel ridge correction on base-score residuals."""
    if cfg.method != "proker":
        raise InvalidConfig(f"proker_fit called with method {cfg.method!r}")
    if text.dim != support.dim:
        raise DimMismatch(f"classifier dim {text.dim} != support dim {support.dim}")
    if labels.rows != support.rows or labels.num_classes != text.num_classes:
        raise DimMismatch("target matrix shape does not match support/classifier")
    spec = resolve_beta(cfg.kernel, support.data)
    gamma, used = krr_fit(
        spec, support.data, labels.matrix, text.weights, cfg.lam, cfg.jitter,
        cfg.output_kernel,
    )
    return ProKeRModel(
        support=support, gamma=gamma, kernel=spec, text=text,
        lam=cfg.lam, jitter=used, output_kernel=cfg.output_kernel,
    )


def proker_predict(model: ProKeRModel, queries: FeatureSet) -> Logits:
    """Base scores plus the fitted kernel correction."""
    if queries.dim != model.support.dim:
        raise DimMismatch(f"query dim {queries.dim} != model dim {model.support.dim}")
    return Logits(
        krr_scores(
            model.kernel, model.support.data, model.gamma, model.text.weights,
            queries.data, model.output_kernel,
        )
    )


def predict(cfg: AdapterConfig, task: FewShotTask) -> Logits:
    """Dispatch on ``cfg.method`` over the task's query split."""
    if task.text is None:
        raise InvalidConfig("task carries no text classifier")
    if cfg.method == "zeroshot":
        return zero_shot(task.text, task.query)
    labels = one_hot(task.support)
    if cfg.method == "tip":
        return tip_predict(cfg, task.support, labels, task.text, task.query)
    if cfg.method == "nw":
        return proximal_nw_predict(cfg, task.support, labels, task.text, task.query)
    if cfg.method == "llr":
        return llr_predict(cfg, task.support, labels, task.text, task.query)
    model = proker_fit(cfg, task.support, labels, task.text)
    return proker_predict(model, task.query)


# --- model container (PKM1) -----------------------------------------------------
#
# Layout, little-endian:
#     bytes 0-3  magic b"PKM1"
#     u32        header length, then that many bytes of UTF-8 JSON
#     blocks     repeated [u32 name length, name, u32 payload length, payload]
# Each payload is a complete FSF v1 byte string.  The header carries the
# model kind, lambda, jitter, kernel spec, and (for prototype models) the
# Fourier map parameters.

PKM_MAGIC = b"PKM1"
_U32 = struct.Struct("<I")


def write_container(path: str | Path, header: dict[str, Any], blocks: dict[str, bytes]) -> None:
    head = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    parts = [PKM_MAGIC, _U32.pack(len(head)), head]
    for name, payload in blocks.items():
        raw = name.encode("utf-8")
        parts.extend([_U32.pack(len(raw)), raw, _U32.pack(len(payload)), payload])
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def read_container(path: str | Path) -> tuple[dict[str, Any], dict[str, bytes]]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    if len(buf) < 4 or buf[:4] != PKM_MAGIC:
        raise BadMagic("not a PKM1 model file (bad magic)")
    off = 4

    def take_u32() -> int:
        nonlocal off
        if len(buf) < off + 4:
            raise DimMismatch("truncated model container")
        (v,) = _U32.unpack_from(buf, off)
        off += 4
        return v

    def take(n: int) -> bytes:
        nonlocal off
        if len(buf) < off + n:
            raise DimMismatch("truncated model container")
        chunk = buf[off : off + n]
        off += n
        return chunk

    try:
        header = json.loads(take(take_u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadMetadata(f"model header is not valid JSON: {exc}") from None
    if not isinstance(header, dict) or "kind" not in header:
        raise BadMetadata('model header must be a JSON object with "kind"')
    blocks: dict[str, bytes] = {}
    while off < len(buf):
        name = take(take_u32()).decode("utf-8")
        blocks[name] = take(take_u32())
    return header, blocks


def save_model(model: ProKeRModel, path: str | Path) -> None:
    """Serialize a fitted model: support, dual coefficients, classifier."""
    if model.output_kernel is not None and not model.output_kernel.is_identity:
        raise InvalidConfig("only identity output kernels can be serialized")
    n = model.text.num_classes
    gamma_fs = FeatureSet(
        model.gamma, labels=None, num_classes=n, metadata={"kind": "proker_gamma"}
    )
    header = {
        "kind": "cached",
        "lambda": model.lam,
        "jitter": model.jitter,
        "kernel": kernel_spec_to_dict(model.kernel),
    }
    blocks = {
        "support": featureset_to_bytes(model.support),
        "gamma": featureset_to_bytes(gamma_fs),
        "text": featureset_to_bytes(text_classifier_to_featureset(model.text)),
    }
    write_container(path, header, blocks)


def _require_blocks(blocks: dict[str, bytes], names: tuple[str, ...]) -> None:
    missing = [n for n in names if n not in blocks]
    if missing:
        raise BadMetadata(f"model container is missing blocks: {missing}")


def load_model(path: str | Path) -> ProKeRModel:
    """Load a model written by :func:`save_model`.

    Coefficients are stored as float32, so reloaded predictions match the
    in-memory model to single precision, not bit-exactly.
    """
    header, blocks = read_container(path)
    if header.get("kind") != "cached":
        raise BadMetadata(
            f"expected a cached model, found kind {header.get('kind')!r}"
        )
    _require_blocks(blocks, ("support", "gamma", "text"))
    support = featureset_from_bytes(blocks["support"])
    gamma = featureset_from_bytes(blocks["gamma"])
    text = text_classifier_from_featureset(featureset_from_bytes(blocks["text"]))
    try:
        lam = float(header["lambda"])
        jitter = float(header.get("jitter", DEFAULT_JITTER))
        spec = kernel_spec_from_dict(header["kernel"])
    except KeyError as exc:
        raise BadMetadata(f"model header is missing {exc}") from None
    return ProKeRModel(
        support=support, gamma=gamma.data, kernel=spec, text=text,
        lam=lam, jitter=jitter,
    )
