"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called outside its documented contract."""


class DimensionError(ContractError):
    """Array shapes are incompatible for the requested operation."""
