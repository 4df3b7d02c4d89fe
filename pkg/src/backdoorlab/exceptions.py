"""Exception hierarchy shared by all modules."""


class BackdoorLabError(Exception):
    """Base class for errors raised by backdoorlab."""


class PreconditionError(BackdoorLabError, ValueError):
    """An operation was called outside its documented domain."""


class InvalidCovarianceError(PreconditionError):
    """Covariance matrix is asymmetric or has a negative eigenvalue."""


class OffSupportError(PreconditionError):
    """A density-based quantity was requested at a point of zero density."""


class DegenerateModelError(PreconditionError):
    """A full-rank covariance was required but the model is degenerate."""


class ConfigError(BackdoorLabError, ValueError):
    """Experiment configuration is malformed. ``path`` names the offending field."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
