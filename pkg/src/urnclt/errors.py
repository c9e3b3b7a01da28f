"""Exception types shared across the package.

The CLI maps these onto exit codes: ``InfeasibleError`` -> 2, ``BudgetError`` -> 3.
"""


class InfeasibleError(ValueError):
    """Parameters admit no valid placement, root, or evaluation."""


class BudgetError(RuntimeError):
    """A computation was refused because it would exceed a configured size guard."""


class NotPositiveDefiniteError(ValueError):
    """A covariance matrix has a non-positive eigenvalue."""

    def __init__(self, message: str, eigenvalue: float):
        super().__init__(message)
        self.eigenvalue = eigenvalue
