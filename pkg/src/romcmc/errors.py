"""Exception types shared across the package."""


class DomainError(ValueError):
    """A parameter lies outside the admissible set (e.g. non-positive permeability)."""


class NumericalError(RuntimeError):
    """A linear solve or decomposition failed or missed its tolerance.

    ``residual`` carries the final residual norm when one is available.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StateError(RuntimeError):
    """An object is used before it holds the data the operation needs."""


class BasisCapacityError(RuntimeError):
    """The reduced basis already holds its maximum number of columns."""


class SwitchToFullTarget(RuntimeError):
    """The epsilon-approximate sampler hit the basis cap before adaptation finished.

    The caller should rerun with the full target sampler. ``step`` is the chain
    step at which the condition was detected.
    """

    def __init__(self, message, step=None, checkpoint=None):
        super().__init__(message)
        self.step = step
        self.checkpoint = checkpoint


class ChainAborted(RuntimeError):
    """A chain step failed; a checkpoint was written so the run can be resumed."""

    def __init__(self, message, step, checkpoint=None):
        super().__init__(message)
        self.step = step
        self.checkpoint = checkpoint


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
