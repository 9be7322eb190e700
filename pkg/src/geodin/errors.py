"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
OSError) -> 3, NumericError -> 4.
"""


class GeodinError(Exception):
    """Base class for all package errors."""


class ShapeError(GeodinError, ValueError):
    """Array dimensions do not match what an operation requires."""


class DomainError(GeodinError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class ConfigError(GeodinError, ValueError):
    """Invalid configuration file content or invalid run parameters."""


class DataError(GeodinError, ValueError):
    """External data is missing, malformed, or inconsistent."""


class FormatError(DataError):
    """A file does not conform to its documented format."""


class IntegrityError(DataError):
    """A checkpoint payload fails its checksum."""


class UnsupportedVersionError(DataError):
    """A checkpoint was written by an unknown format version."""


class MissingTokenError(DataError):
    """Class names could not be resolved in an embedding vocabulary."""

    def __init__(self, tokens):
        self.tokens = list(tokens)
        super().__init__("unresolvable class names: " + ", ".join(self.tokens))


class UnsupportedVariantError(GeodinError, ValueError):
    """The head variant does not support the requested operation."""


class StateError(GeodinError, RuntimeError):
    """An object is not in the state an operation requires (e.g. untrained model)."""


class NumericError(GeodinError, RuntimeError):
    """Training or evaluation produced non-finite values."""
