"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with inputs that violate its contract."""


class DivergenceError(RuntimeError):
    """Training produced NaN or otherwise numerically diverged."""
