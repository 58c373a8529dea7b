"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes or extents are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A configuration value violates a structural constraint."""


class ContractError(ValueError):
    """A call violates an operation's precondition."""
