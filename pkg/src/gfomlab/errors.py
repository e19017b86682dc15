"""Exception types shared across the laboratory.

The CLI maps these onto exit codes: configuration problems exit 2,
numerical failures exit 3, tolerance failures exit 1.
"""


class ConfigError(ValueError):
    """Bad configuration: shapes, unknown keys, invalid parameter values."""


class NumericalError(RuntimeError):
    """Numerical failure: non-PSD covariance beyond repair, Newton stall, ..."""


class DivergenceError(NumericalError):
    """An iterate left the finite/bounded regime.

    Carries the step index so harness code can count divergent replicates
    instead of crashing.
    """

    def __init__(self, message, step=None, track=None):
        super().__init__(message)
        self.step = step
        self.track = track
