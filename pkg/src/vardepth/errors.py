"""Exception types shared across modules."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation
    (non-positive depth, singular covariance, ...)."""


class ContractViolation(ValueError):
    """Arguments are inconsistent with each other (shape mismatch,
    out-of-raster pixel, NaN cost, ...)."""


def is_concrete(x) -> bool:
    """False for JAX tracers; checks are skipped while tracing."""
    import jax

    return not isinstance(x, jax.core.Tracer)


class NonFiniteGradient(FloatingPointError):
    """A gradient contains NaN or inf; ``component`` names the loss term
    whose own gradient is non-finite (or ``"total"`` if none is)."""

    def __init__(self, component: str, message: str):
        super().__init__(message)
        self.component = component


class OptimizationDiverged(RuntimeError):
    """The loss became non-finite.  ``history`` holds the rows logged so far."""

    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = history
