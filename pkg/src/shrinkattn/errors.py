"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A parameter container or configuration is inconsistent."""


class DomainError(ValueError):
    """An argument lies outside the operation's domain."""


class PreconditionError(ValueError):
    """Inputs violate an ordering or structural precondition."""


class UndefinedAPError(ValueError):
    """Average precision requested with no ground truth."""


class NoCheckableCoordinates(RuntimeError):
    """Every coordinate of a gradient check was excluded."""


class ParseError(ValueError):
    """A detections or ground-truth file is malformed."""
