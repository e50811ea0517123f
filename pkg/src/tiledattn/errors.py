class AttentionError(ValueError):
    """Base class for every error raised by this package."""


class ShapeError(AttentionError):
    pass


class NaNError(AttentionError):
    pass


class CapacityError(AttentionError):
    """A tile working set does not fit the simulated SRAM."""

    def __init__(self, message, min_feasible_m=None):
        super().__init__(message)
        self.min_feasible_m = min_feasible_m


class PlanMismatchError(AttentionError):
    pass
