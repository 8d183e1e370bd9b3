"""Exception types shared across the library."""


class SingularDiffusionError(ValueError):
    """A diffusion coefficient evaluated to a non-positive value."""


class AlignmentError(ValueError):
    """Evaluation grid and path grid are incompatible."""


class UnsupportedOrderError(ValueError):
    """Requested chaos order exceeds what the operation supports."""


class DegenerateIntegrandError(ValueError):
    """An integrand with zero norm was passed where a direction is required."""


class GridEmptyError(ValueError):
    """The bandwidth grid bracket contains no admissible value."""

    def __init__(self, order: int, lower: float, upper: float):
        self.order = order
        self.lower = lower
        self.upper = upper
        super().__init__(
            f"empty bandwidth grid for order {order}: no exp(-k) with k in N "
            f"lies in [{lower:.6g}, {upper:.6g}]"
        )


class IncompleteInputError(ValueError):
    """A required intermediate (e.g. a per-bandwidth fit) is missing."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""
