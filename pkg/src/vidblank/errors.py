"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are inconsistent with an operation's contract."""


class NumericError(ValueError):
    """A value that must be finite is NaN or infinite."""


class FormatError(ValueError):
    """A file does not conform to its declared format.

    Carries enough location detail (path, line or byte offset) to find the
    offending input.
    """


class IntegrityError(FormatError):
    """A binary file failed its magic, version, or checksum verification."""


class ConfigError(ValueError):
    """A run configuration is invalid or inconsistent with its inputs."""
