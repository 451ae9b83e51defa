"""Image/text encoders behind one small interface.

Two families are registered, selected by the model identifier's prefix:

``hashed/<dim>``
    A fully offline, deterministic encoder for plumbing and tests.  Images
    are decoded, downscaled to a small grayscale thumbnail, and projected
    to ``dim`` with a fixed seeded matrix; text goes through hashed
    bag-of-tokens into the same dimension.  The outputs have no semantic
    value, but they are stable across runs and machines.

``clip/<huggingface-id>``
    A pretrained vision-language encoder loaded through ``transformers``.
    Any failure to import or fetch the model is reported as
    ``ModelLoadError``.
"""

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import ModelLoadError

PROJECTION_SEED = 1811
THUMB_SIZE = 8
TEXT_BUCKETS = 256


class Encoder(Protocol):
    dim: int

    def encode_images(self, paths: Sequence[Path]) -> np.ndarray: ...

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray: ...


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@dataclass
class HashedProjectionEncoder:
    """Deterministic offline encoder: thumbnails and hashed tokens, projected."""

    dim: int = 64
    _img_proj: np.ndarray = field(init=False, repr=False)
    _txt_proj: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ModelLoadError(f"hashed encoder needs a positive dim, got {self.dim}")
        rng = np.random.default_rng(PROJECTION_SEED)
        pixels = THUMB_SIZE * THUMB_SIZE + 1  # +1: constant bias channel
        self._img_proj = rng.standard_normal((pixels, self.dim)) / np.sqrt(pixels)
        self._txt_proj = rng.standard_normal((TEXT_BUCKETS + 1, self.dim)) / np.sqrt(
            TEXT_BUCKETS + 1)

    def encode_images(self, paths: Sequence[Path]) -> np.ndarray:
        from PIL import Image

        flats = np.empty((len(paths), THUMB_SIZE * THUMB_SIZE + 1))
        for i, path in enumerate(paths):
            with Image.open(path) as img:
                thumb = img.convert("L").resize(
                    (THUMB_SIZE, THUMB_SIZE), Image.Resampling.BILINEAR)
            flats[i, :-1] = np.asarray(thumb, dtype=np.float64).ravel() / 255.0
            flats[i, -1] = 1.0
        return _unit_rows(flats @ self._img_proj)

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        bags = np.zeros((len(texts), TEXT_BUCKETS + 1))
        for i, text in enumerate(texts):
            tokens = [t for t in "".join(
                c if c.isalnum() else " " for c in text.lower()).split() if t]
            for gram in tokens + [a + " " + b for a, b in zip(tokens, tokens[1:])]:
                digest = hashlib.blake2b(gram.encode(), digest_size=8).digest()
                value = int.from_bytes(digest, "little")
                sign = 1.0 if value & 1 else -1.0
                bags[i, (value >> 1) % TEXT_BUCKETS] += sign
            bags[i, -1] = 1.0
        return _unit_rows(bags @ self._txt_proj)


@dataclass
class TransformersClipEncoder:
    """Wrapper over a pretrained contrastive image/text model."""

    model_id: str
    device: str = "cpu"
    dim: int = field(init=False)

    def __post_init__(self) -> None:
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoProcessor
        except ImportError as exc:
            raise ModelLoadError(
                f"model '{self.model_id}' needs transformers and torch: {exc}"
            ) from exc
        try:
            self._model = AutoModel.from_pretrained(self.model_id).to(self.device)
            self._processor = AutoProcessor.from_pretrained(self.model_id)
        except Exception as exc:
            raise ModelLoadError(
                f"could not load pretrained model '{self.model_id}': {exc}"
            ) from exc
        self._model.eval()
        self.dim = int(self._model.config.projection_dim)

    def encode_images(self, paths: Sequence[Path]) -> np.ndarray:
        import torch
        from PIL import Image

        images = [Image.open(p).convert("RGB") for p in paths]
        inputs = self._processor(images=images, return_tensors="pt").to(self.device)
        with torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return _unit_rows(feats.cpu().numpy().astype(np.float64))

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        import torch

        inputs = self._processor(
            text=list(texts), return_tensors="pt", padding=True).to(self.device)
        with torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return _unit_rows(feats.cpu().numpy().astype(np.float64))


def make_encoder(model: str, device: str = "cpu") -> Encoder:
    """Construct the encoder named by ``model`` (``family/detail``)."""
    family, _, detail = model.partition("/")
    if family == "hashed":
        try:
            dim = int(detail or "64")
        except ValueError as exc:
            raise ModelLoadError(
                f"hashed encoder expects 'hashed/<dim>', got '{model}'") from exc
        return HashedProjectionEncoder(dim=dim)
    if family == "clip":
        if not detail:
            raise ModelLoadError("clip encoder expects 'clip/<model-id>'")
        return TransformersClipEncoder(model_id=detail, device=device)
    raise ModelLoadError(f"unknown model family '{family}' in '{model}'")
