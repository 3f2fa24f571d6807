"""Exception and warning classes raised across the package."""


class SpadeError(ValueError):
    """Base class for all validation and numerical errors."""


class InvalidImage(SpadeError):
    pass


class ShapeMismatch(SpadeError):
    pass


class BadMagic(SpadeError):
    pass


class HeaderMismatch(SpadeError):
    pass


class UnsupportedDtype(SpadeError):
    pass


class TooSmall(SpadeError):
    pass


class Diverged(SpadeError):
    """Training loss became non-finite."""


class SigmaMissing(SpadeError):
    pass


class NoRoom(SpadeError):
    """No noise patch satisfying the lateral offset rule fits in the image."""


class ZeroVariance(SpadeError):
    pass


class TooFewWavelengths(SpadeError):
    pass


class TargetOutOfBounds(SpadeError):
    pass


class ZeroImage(SpadeError):
    pass


class WavelengthMismatch(SpadeError):
    pass


class UnknownChromophore(SpadeError):
    pass


class ParseError(SpadeError):
    pass


class NonMonotoneWavelengths(SpadeError):
    pass


class EmptyInput(SpadeError):
    pass


class ConfigError(SpadeError):
    pass


class ConstantImageWarning(UserWarning):
    """normalize() received an image with max == min."""


class RankDeficientLibrary(UserWarning):
    """The spectrum library matrix does not have full column rank."""
