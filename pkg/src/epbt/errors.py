"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: a bad value, a bad combination, or an unknown key."""


class DataFormatError(ValueError):
    """A dataset file could not be parsed."""
