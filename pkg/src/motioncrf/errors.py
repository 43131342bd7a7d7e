"""Error hierarchy shared by every module.

Two families map onto the command-line exit codes: ``ConfigError`` (exit 2)
for bad parameters or missing inputs, ``DataError`` (exit 3) for inputs that
exist but cannot be used.
"""


class MotionCRFError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(MotionCRFError, ValueError):
    """Invalid parameter, missing file or unusable output location."""

    exit_code = 2


class DataError(MotionCRFError, ValueError):
    """Input data that is malformed, inconsistent or degenerate."""

    exit_code = 3


# Parameters


class InvalidParameter(ConfigError):
    """A parameter violates its documented range."""


class NonPositiveBandwidth(ConfigError):
    """A kernel bandwidth is zero or negative."""


class UnsupportedFeatureDim(ConfigError):
    """The fast filter does not handle this many feature dimensions."""


# Tensors and fields


class TensorFormatError(DataError):
    """Base class for TNSR decoding failures."""


class BadMagic(TensorFormatError):
    """File does not start with the TNSR magic."""


class VersionMismatch(TensorFormatError):
    """Unsupported TNSR version byte."""


class TruncatedPayload(TensorFormatError):
    """Header or payload length disagrees with the declared dims."""


class DimOverflow(TensorFormatError):
    """Product of dims does not fit the format."""


class AllZeroPixel(DataError):
    """A pixel distribution sums to zero and cannot be normalized."""


class NonFiniteValue(DataError):
    """NaN or infinity where finite values are required."""


class ShapeMismatch(DataError):
    """Grid shapes or channel counts disagree."""


class SizeGuardExceeded(DataError):
    """Instance too large for an exhaustive or quadratic oracle."""


class LabelOutOfRange(DataError):
    """A label index is outside its label space."""


# Potentials


class SamePixel(DataError):
    """A pairwise term was requested for a pixel with itself."""


# Geometry


class NonPositiveDisparity(DataError):
    """Disparity must be strictly positive to lift a pixel."""


class NonPositiveDepth(DataError):
    """Depth must be strictly positive."""


class BehindCamera(DataError):
    """A transformed point has non-positive depth."""


class DegenerateConfiguration(DataError):
    """Fewer than three or collinear correspondences."""


class InsufficientData(DataError):
    """Not enough valid pixels to estimate ego-motion."""


class NoConsensus(DataError):
    """No rigid-motion hypothesis reached the minimum inlier ratio."""


class SingularCovariance(DataError):
    """Covariance is not symmetric positive definite."""


# Inference and learning


class NonFiniteUpdate(DataError):
    """A mean-field update produced non-finite values."""


class EmptyData(DataError):
    """No usable training instances or pixels."""


class DegenerateLabel(DataError):
    """A label has identical targets for every instance."""


class UntrainedModel(DataError):
    """A boosted model has too few rounds for the requested operation."""
