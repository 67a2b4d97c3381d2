"""Exception hierarchy shared by the codec modules."""


class IVPFError(Exception):
    """Base class for every error raised by this package."""


class PrecisionOverflow(IVPFError, OverflowError):
    """A fixed-point mantissa or intermediate product left the safe range."""


class ModelError(IVPFError, ValueError):
    """A flow model is malformed or violates a layer constraint."""


class LatentOutOfSupport(IVPFError, ValueError):
    """A latent fell outside the bounded coding window of its prior."""


class StreamError(IVPFError, ValueError):
    """A compressed stream is truncated, corrupted or mismatched."""
