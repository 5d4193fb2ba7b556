"""Exception hierarchy shared by every gapfill module."""


class GapfillError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    exit_code = 1


class ConfigError(GapfillError):
    exit_code = 2


class FieldError(GapfillError):
    exit_code = 2


class AllMissing(FieldError):
    pass


class NonPositiveValue(FieldError):
    pass


class ZeroVariance(FieldError):
    pass


class ShapeMismatch(FieldError):
    pass


class EmptySelection(FieldError):
    pass


class EmptyMask(FieldError):
    pass


class ZeroTarget(FieldError):
    pass


class BadDimensions(ConfigError):
    pass


class RankTooLarge(ConfigError):
    pass


class InsufficientData(FieldError):
    pass


class PatchTooLarge(ConfigError):
    pass


class CoverageGap(FieldError):
    pass


class OddDimensions(ConfigError):
    pass


class InvalidSpec(ConfigError):
    pass


class FormatError(GapfillError):
    exit_code = 4


class BadMagic(FormatError):
    pass


class MalformedHeader(FormatError):
    pass


class GfdShapeMismatch(FormatError, ShapeMismatch):
    """Payload length disagrees with the header shape."""


class Diverged(GapfillError):
    exit_code = 3

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class NoConvergence(GapfillError):
    exit_code = 3
