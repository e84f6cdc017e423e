"""Exception types shared across the package."""


class ShortcutError(Exception):
    """Base class for errors raised by shortcut_mcmc."""


class ConfigError(ShortcutError, ValueError):
    """Invalid or inconsistent configuration."""


class NumericError(ShortcutError, ArithmeticError):
    """Non-finite values or an unsafe division."""


class ParseError(ShortcutError, ValueError):
    """Malformed input file."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class CheckpointVersionError(ParseError):
    """Checkpoint written by an unsupported format version."""


class StateError(ShortcutError, RuntimeError):
    """An object is missing state required for the requested operation."""
