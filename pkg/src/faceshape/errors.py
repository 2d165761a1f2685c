"""Exception types shared across the toolkit."""


class FaceshapeError(Exception):
    """Base class for all toolkit errors."""


class DegenerateStatisticsError(FaceshapeError):
    """A feature column has no variance; normalization would divide by zero."""


class NotReadyError(FaceshapeError):
    """A component that requires prior training was used before training."""


class FrozenBackboneError(FaceshapeError):
    """Generator or landmark-detector parameters changed during training."""


class TrainingDivergedError(FaceshapeError):
    """The training loss became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
