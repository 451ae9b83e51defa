"""Error types raised while exporting feature files."""


class ExportError(Exception):
    """Base class for everything this package raises on purpose."""


class TemplateError(ExportError):
    """A prompt template does not contain exactly one ``{}`` placeholder."""


class EmptyClassDir(ExportError):
    """A class directory holds no readable images, or no classes were found."""


class ModelLoadError(ExportError):
    """The requested encoder could not be constructed."""
