"""Exception hierarchy shared by all charme_lab modules."""


class CharmeLabError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(CharmeLabError):
    """An array does not have the shape required by the operation."""


class DomainError(CharmeLabError):
    """An input lies outside the mathematical domain of the operation."""


class MomentUndefined(CharmeLabError):
    """The requested innovation moment does not exist or is not supported."""


class ModelMismatch(CharmeLabError):
    """Two models that must share structure (d, p, K, pi, innovation) do not."""


class NonFiniteLoss(CharmeLabError):
    """Training produced a non-finite objective value.

    Carries the per-epoch loss trace accumulated up to the failure in
    ``loss_trace``.
    """

    def __init__(self, message, loss_trace=None):
        super().__init__(message)
        self.loss_trace = list(loss_trace) if loss_trace is not None else []


class SingularBlock(CharmeLabError):
    """A block of the curvature matrix is numerically singular."""


class SingularCovariance(CharmeLabError):
    """A sample covariance matrix is singular or too ill-conditioned to invert."""


class SampleSizeOutOfRange(CharmeLabError):
    """Sample size outside the validity range of the statistical procedure."""


class IndexOutOfRange(CharmeLabError):
    """A coordinate index is outside the valid range or repeated."""
