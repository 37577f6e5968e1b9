"""Exception hierarchy.

The CLI maps ``ValidationError`` subclasses to exit code 2 and every other
``DysaugError`` to exit code 1.
"""


class DysaugError(Exception):
    """Base class for all package errors."""


class ValidationError(DysaugError, ValueError):
    """Input data or configuration failed a declared invariant."""


class ManifestError(ValidationError):
    """A manifest line could not be parsed or validated."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ValidationError):
    pass


class DomainError(ValidationError):
    """A numeric argument lies outside the domain of the operation."""


class ShapeError(ValidationError):
    pass


class VariantError(ValidationError):
    """Operation not defined for this generator variant."""


class RosterError(ValidationError, KeyError):
    """Speaker is not part of the roster (or has no learned code)."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class PairingError(ValidationError):
    pass


class TooShortError(ValidationError):
    """Waveform shorter than one analysis window."""


class ArchiveError(DysaugError):
    """Malformed feature archive or checkpoint."""
