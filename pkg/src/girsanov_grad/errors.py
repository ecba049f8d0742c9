"""Exception hierarchy."""


class GirsanovGradError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GirsanovGradError, ValueError):
    pass


class SimulationDivergedError(GirsanovGradError):
    """A trajectory produced a non-finite state."""

    def __init__(self, sample_index, step):
        self.sample_index = int(sample_index)
        self.step = int(step)
        super().__init__(
            f"non-finite state in sample {self.sample_index} at step {self.step}"
        )


class DegenerateEstimateError(GirsanovGradError):
    """Every trajectory was censored, so no exit statistic is available."""


class EstimatorUnusableError(GirsanovGradError):
    """Likelihood weights over/underflowed; the estimate carries no information."""


class DegenerateControlError(GirsanovGradError):
    """Control variate has zero variance or a singular covariance."""


class IndefiniteHessianError(GirsanovGradError):
    def __init__(self, message, eigenvalues=None):
        self.eigenvalues = eigenvalues
        super().__init__(message)
