"""Context-agnostic meta-learning on a small numpy network substrate."""

from contextmeta.errors import ConfigError, ContextMetaError, DataError, InputError, LayoutError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContextMetaError",
    "DataError",
    "InputError",
    "LayoutError",
    "__version__",
]
