"""Exception hierarchy shared by the library and the command line."""


class CPIError(Exception):
    """Base class for all errors raised by :mod:`cpisim`."""


class ConfigError(CPIError, ValueError):
    """Invalid scenario, mask or command configuration."""

    def __init__(self, message, *, key=None, line=None, source=None):
        where = []
        if source is not None:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.key = key
        self.line = line
        self.source = source


class MaskOverlapError(ConfigError):
    """Slits of a mask overlap (pitch smaller than width)."""


class PreconditionError(CPIError, ValueError):
    """A numerical precondition (sampling, aliasing, Nyquist) is violated."""


class FormatError(CPIError, OSError):
    """A persisted file is corrupt, truncated or of an unsupported version."""
