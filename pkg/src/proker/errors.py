"""Exception hierarchy shared by every module.

Two broad branches matter to callers: ``DataError`` covers anything wrong
with inputs, files or configuration, while ``SolverError`` covers numerical
failures inside a fit.  The command-line layer maps the former to exit
code 2 and the latter to exit code 3.
"""


class ProkerError(Exception):
    """Base class for all library errors."""


class DataError(ProkerError):
    """Invalid input data, file contents, or configuration."""


class SolverError(ProkerError):
    """A numerical routine could not produce a usable result."""


# --- file format / data ------------------------------------------------

class BadMagic(DataError):
    """File does not start with the expected magic bytes."""


class DimMismatch(DataError):
    """Declared or implied shapes disagree."""


class CorruptLabel(DataError):
    """A label is missing or outside ``[0, num_classes)``."""


class NonFinite(DataError):
    """NaN or Inf encountered where finite values are required."""


class BadMetadata(DataError):
    """Metadata block is not valid JSON or lacks a required key."""


class ZeroNormRow(DataError):
    """A feature row has (near-)zero norm and cannot be normalized."""


class IoError(DataError):
    """Underlying OS error while reading or writing a file."""


class InsufficientSamples(DataError):
    """A class has too few samples for the requested split."""


class InvalidConfig(DataError):
    """A configuration value is out of range or inconsistent."""


class EmptyGrid(DataError):
    """A hyper-parameter grid has no points."""


class MissingAnchor(DataError):
    """Transfer protocol requires an anchor task but none was given."""


class MissingValidation(DataError):
    """Per-dataset protocol requires validation splits on every task."""


class BetaMismatch(DataError):
    """Fourier map and kernel disagree on bandwidth or kernel family."""


# --- numerical ----------------------------------------------------------

class SingularSystem(SolverError):
    """A per-query linear system stayed non positive definite."""


class SolveFailed(SolverError):
    """A kernel system stayed non positive definite after jitter escalation."""


class SingularCovariance(SolverError):
    """Covariance estimate is singular; increase shrinkage."""
