"""Exception hierarchy shared by every subpackage."""


class ContextMetaError(Exception):
    """Base class for all package errors."""


class InputError(ContextMetaError, ValueError):
    """An operation rejected its input (shape, range, or precondition)."""


class LayoutError(InputError):
    """Two parameter vectors do not share a layout."""


class ConfigError(ContextMetaError, ValueError):
    """Configuration text failed schema validation."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DataError(ContextMetaError):
    """A dataset could not be loaded or generated."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{message}: {path}")
        self.path = path
