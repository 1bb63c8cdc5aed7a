"""Exception types raised across the package."""


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class ConfigError(ValueError):
    """A configuration value is invalid.

    ``path`` names the offending field (e.g. ``operators[0].size``) when known.
    """

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class CoverageError(ValueError):
    """A canonical index received no contribution during aggregation."""

    def __init__(self, index):
        self.index = tuple(int(i) for i in index)
        super().__init__(f"canonical index {self.index} is not covered by any view")
