"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Malformed argument: wrong shape, out-of-range index, bad file content."""


class ContractViolation(ValueError):
    """A precondition of an operation was not met by the caller."""


class InvariantError(RuntimeError):
    """Internal state became inconsistent (for instance a corrupted count cache)."""


class TooLargeError(ValueError):
    """An exact enumeration would exceed its size guard."""
