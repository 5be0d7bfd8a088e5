"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific class that applies rather than bare ValueError/RuntimeError.
"""


class ValidationError(ValueError):
    """Invalid input: bad geometry, malformed config, shape mismatch."""


class DataFormatError(ValueError):
    """A file on disk is not what its header or manifest claims."""


class ConvergenceError(RuntimeError):
    """Self-consistency iteration ran out of iterations.

    Attributes
    ----------
    residual : float
        Largest density update at the final iteration (nm^-1).
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class StationaryStateError(RuntimeError):
    """The transition-rate graph has no unique stationary distribution."""

    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = components if components is not None else []


class StateError(RuntimeError):
    """Device landed outside the four-state taxonomy (three or more dots)."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimisation.

    Attributes
    ----------
    epoch : int
        Zero-based epoch index at which the divergence was detected.
    """

    def __init__(self, message, epoch=-1):
        super().__init__(message)
        self.epoch = epoch
