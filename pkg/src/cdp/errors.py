"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes, so raising the right class matters:
ConfigError -> 2, MissingInputError -> 3, InternalError -> 4,
StaleArtifactError -> 5. Everything derives from CdpError.
"""


class CdpError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CdpError):
    """Invalid configuration value or operation parameter."""


class ValidationError(CdpError):
    """Input data violates a documented invariant."""


class FormatError(CdpError):
    """A binary or CSV artifact is malformed (bad magic, version, header)."""


class DimensionMismatchError(CdpError):
    """Declared and actual dimensions disagree."""


class TruncationError(CdpError):
    """A file ends before the payload its header declares."""


class UnknownIdError(CdpError):
    """A sample id was not found where it is required to exist."""


class MissingInputError(CdpError):
    """A required input file or upstream stage artifact does not exist."""


class StaleArtifactError(CdpError):
    """An on-disk stage artifact was produced under a different config."""


class InternalError(CdpError):
    """An internal invariant failed; indicates a bug, not a user error."""
