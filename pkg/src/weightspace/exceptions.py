"""Exception hierarchy shared by every subpackage."""


class WeightSpaceError(Exception):
    pass


class ShapeError(WeightSpaceError, ValueError):
    """Operand dimensions do not compose."""


class ConfigError(WeightSpaceError, ValueError):
    """A configuration value is invalid or unsupported."""


class ContractError(WeightSpaceError, RuntimeError):
    """A call violated a precondition (e.g. backward on a non-scalar)."""


class CapabilityError(WeightSpaceError, RuntimeError):
    """The request exceeds what the dense implementation supports."""


class NumericalError(WeightSpaceError, FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


class MissingArtifactError(WeightSpaceError, FileNotFoundError):
    """An upstream artifact (zoo, AE weights) has not been produced yet."""
