"""Exception types shared across the package."""


class SingularInertiaError(RuntimeError):
    """Equivalent inertia matrix is singular or numerically unusable."""

    def __init__(self, condition_number):
        super().__init__(
            "equivalent inertia matrix is ill conditioned "
            f"(condition number {condition_number:.3e})"
        )
        self.condition_number = condition_number


class NonFiniteStateError(RuntimeError):
    """Simulation state stopped being finite."""


class UnreachableTargetError(ValueError):
    """Cartesian target lies outside the reachable workspace."""

    def __init__(self, target):
        super().__init__(f"target {tuple(target)} is outside the reachable workspace")
        self.target = tuple(target)


class IllConditionedKernelError(RuntimeError):
    """Kernel matrix could not be factorized even at the maximum jitter."""


class RankDeficientRegressorError(RuntimeError):
    """Regressor matrix rank is too low for least squares, even with ridge rescue."""


class DataCoverageError(ValueError):
    """Training data misses a regime the requested model needs."""


class ModelFormatError(RuntimeError):
    """Persisted model file is unreadable or has an unsupported version."""
