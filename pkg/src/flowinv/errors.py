"""Exception types shared across the package."""


class FlowInvError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FlowInvError, ValueError):
    """Invalid configuration (non-positive dims, bad dataset spec, ...)."""


class TokenRangeError(FlowInvError, ValueError):
    """Condition token outside the embedding table."""


class ShapeMismatchError(FlowInvError, ValueError):
    """Array dimensions inconsistent with the model metadata."""


class MetricError(FlowInvError, ValueError):
    """Metric preconditions violated (empty group, zero vector, N < 2)."""


class NumericError(FlowInvError, RuntimeError):
    """Non-finite value produced during a numeric routine."""


class LatentExplosionError(NumericError):
    """Latent left the sane range mid-trajectory; mirrors inversion drift blowup."""

    def __init__(self, step: int, direction: str, limit: float):
        self.step = step
        self.direction = direction
        self.limit = limit
        super().__init__(
            f"latent explosion at step {step} ({direction}): |coordinate| > {limit:g}"
        )


class NtiError(NumericError):
    """Non-finite loss inside the null-embedding optimization."""

    def __init__(self, step: int, inner: int):
        self.step = step
        self.inner = inner
        super().__init__(f"non-finite NTI loss at step {step}, inner iteration {inner}")


class TrainingDivergedError(NumericError):
    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"training loss became non-finite at iteration {iteration}")


class CheckpointError(FlowInvError, IOError):
    """Corrupt or unreadable checkpoint container."""


class CheckpointVersionError(CheckpointError):
    def __init__(self, found: int, supported: int):
        self.found = found
        self.supported = supported
        super().__init__(
            f"unsupported container version {found} (this build reads version {supported})"
        )


class UsageError(FlowInvError, ValueError):
    """Bad command-line arguments or config file entries."""
