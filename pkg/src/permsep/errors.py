"""Exception types shared across the package."""


class PermsepError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(PermsepError):
    pass


class InputTooShort(PermsepError):
    pass


class EmptyCorpus(PermsepError):
    pass


class InvalidDuration(PermsepError):
    pass


class DuplicateSpeaker(PermsepError):
    pass


class HeadMismatch(PermsepError):
    pass


class UnknownScenario(PermsepError):
    pass


class GradientShapeMismatch(PermsepError):
    pass


class ShapeMismatch(PermsepError):
    pass


class TooFewPoints(PermsepError):
    pass


class InvalidCost(PermsepError):
    pass


class NonFiniteGradient(PermsepError):
    pass


class EmptyDataset(PermsepError):
    pass


class ZeroReference(PermsepError):
    pass


class ScenarioMismatch(PermsepError):
    pass


class UnsupportedScenario(PermsepError):
    pass


class IoError(PermsepError):
    pass


class VerificationFailure(PermsepError):
    pass
