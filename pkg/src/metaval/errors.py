"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Input shape does not match what the model or op expects."""


class CsvFormatError(ValueError):
    """Malformed dataset file; message carries the 1-based line number."""


class SizingError(ValueError):
    """A class lacks enough samples for a requested resize; names the class."""


class ConfigError(ValueError):
    """Invalid experiment configuration, raised before any work starts."""
