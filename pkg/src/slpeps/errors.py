"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Axis lengths that should agree do not."""


class TopologyError(ValueError):
    """Sites that should be neighbours are not, or bonds are inconsistent."""


class DegenerateStateError(ArithmeticError):
    """A state or block with zero norm where a nonzero one is required."""


class ContractViolation(ValueError):
    """An operation was called on an object not in the required form."""


class CapacityError(MemoryError):
    """A dense object would exceed the configured size cap."""


class NumericError(ArithmeticError):
    """A matrix factorization failed to converge."""


class FormatError(ValueError):
    """A checkpoint file could not be parsed."""
