"""Encode image-folder datasets and class prompts into FSF feature files."""

from .errors import EmptyClassDir, ExportError, ModelLoadError, TemplateError
from .export import ExportSpec, export_features
from .writer import write_fsf

__all__ = [
    "EmptyClassDir",
    "ExportError",
    "ExportSpec",
    "ModelLoadError",
    "TemplateError",
    "export_features",
    "write_fsf",
]
