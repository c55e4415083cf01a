"""Exception types shared across the package."""


class InvalidConfigError(ValueError):
    """A configuration value is out of range or internally inconsistent."""


class InvalidInputError(ValueError):
    """A runtime argument violates an operation's preconditions."""


class DegenerateInputError(ValueError):
    """Input is technically valid but makes the requested quantity undefined."""


class InvalidStateError(RuntimeError):
    """Operation called on an object in the wrong lifecycle state."""


class MissingCheckpointError(InvalidInputError):
    """A referenced checkpoint file does not exist."""
