"""Turn an image-folder dataset plus class prompts into FSF files.

Dataset layouts, discovered automatically:

* split layout — the root holds ``train/`` (and optionally ``test/``),
  each containing one subdirectory per class;
* flat layout — the root holds the class subdirectories directly, and
  everything is exported as the train split.

Class indices are assigned by the **sorted order of the train-split
subdirectory names**; the test split must not introduce new classes.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import make_encoder
from .errors import EmptyClassDir, TemplateError
from .writer import write_fsf

log = logging.getLogger("fsfexport")

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp"}
DEFAULT_TEMPLATE = "a photo of a {}"


def check_template(template: str) -> str:
    """Return ``template`` if it has exactly one ``{}`` placeholder."""
    if template.count("{}") != 1 or template.count("{") != 1 or template.count("}") != 1:
        raise TemplateError(
            f"template must contain exactly one '{{}}' placeholder: {template!r}")
    return template


@dataclass(frozen=True)
class ExportSpec:
    """Everything one export run needs."""

    data_root: Path
    out_dir: Path
    model: str = "hashed/64"
    templates: tuple[str, ...] = (DEFAULT_TEMPLATE,)
    batch_size: int = 32
    device: str = "cpu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "data_root", Path(self.data_root))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.templates:
            raise TemplateError("at least one prompt template is required")
        for t in self.templates:
            check_template(t)


def _class_images(class_dir: Path) -> list[Path]:
    files = sorted(p for p in class_dir.iterdir()
                   if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise EmptyClassDir(f"no images under {class_dir}")
    return files


def discover_layout(root: Path) -> dict[str, dict[str, list[Path]]]:
    """Map split name -> class name -> sorted image paths."""
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    subdirs = {p.name: p for p in root.iterdir() if p.is_dir()}
    if "train" in subdirs:
        splits = {"train": subdirs["train"]}
        if "test" in subdirs:
            splits["test"] = subdirs["test"]
    else:
        splits = {"train": root}
    out: dict[str, dict[str, list[Path]]] = {}
    for split, base in splits.items():
        classes = sorted(p.name for p in base.iterdir() if p.is_dir())
        if not classes:
            raise EmptyClassDir(f"no class subdirectories under {base}")
        out[split] = {name: _class_images(base / name) for name in classes}
    extra = set(out.get("test", {})) - set(out["train"])
    if extra:
        raise ValueError(
            f"test split has classes missing from train: {sorted(extra)}")
    return out


def _encode_split(encoder, images_by_class, class_index, batch_size):
    paths: list[Path] = []
    labels: list[int] = []
    for name, files in images_by_class.items():
        paths.extend(files)
        labels.extend([class_index[name]] * len(files))
        log.info("class %d %r: %d images", class_index[name], name, len(files))
    chunks = [encoder.encode_images(paths[lo:lo + batch_size])
              for lo in range(0, len(paths), batch_size)]
    return np.vstack(chunks), np.asarray(labels)


def _text_weights(encoder, class_names, templates):
    """Per-class unit prototypes, ensembled over templates, as a D x N matrix."""
    per_template = [encoder.encode_texts([t.format(name) for name in class_names])
                    for t in templates]
    mean = np.mean(per_template, axis=0)
    unit = mean / np.linalg.norm(mean, axis=1, keepdims=True)
    return unit.T


def export_features(spec: ExportSpec) -> dict[str, Path]:
    """Encode the dataset and write train/test/text FSF files.

    Returns a mapping from split name (plus ``"text"``) to the written
    path.  ``test.fsf`` is only written when the dataset has a test split.
    """
    encoder = make_encoder(spec.model, spec.device)
    layout = discover_layout(spec.data_root)
    class_names = sorted(layout["train"])
    class_index = {name: i for i, name in enumerate(class_names)}
    common = {
        "num_classes": len(class_names),
        "class_names": class_names,
        "source_model": spec.model,
        "dataset": spec.data_root.name,
    }

    written: dict[str, Path] = {}
    for split, images_by_class in layout.items():
        data, labels = _encode_split(
            encoder, images_by_class, class_index, spec.batch_size)
        written[split] = write_fsf(
            spec.out_dir / f"{split}.fsf", data, labels=labels,
            normalized=True, metadata=dict(common))
        log.info("wrote %s: %d rows of dim %d", written[split],
                 data.shape[0], data.shape[1])

    weights = _text_weights(encoder, class_names, spec.templates)
    written["text"] = write_fsf(
        spec.out_dir / "text.fsf", weights,
        metadata=dict(common, kind="text_classifier"))
    log.info("wrote %s: %d prototypes of dim %d", written["text"],
             weights.shape[1], weights.shape[0])
    return written
