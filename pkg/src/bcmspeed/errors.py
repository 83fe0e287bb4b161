"""Exception hierarchy. Each family maps onto one CLI exit code."""


class BCMError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(BCMError, ValueError):
    exit_code = 2


class ScenarioError(ConfigError):
    """Scenario parameters out of range or the resulting speed is invalid."""


class SolverError(BCMError, RuntimeError):
    exit_code = 3


class CFLError(SolverError):
    """Time step violates the stability bound of the leapfrog scheme."""


class GridError(SolverError):
    """Control or field grid is incompatible with the medium grid."""


class RayError(SolverError):
    """A ray left the medium grid before reaching the requested c-length."""


class CausticError(SolverError):
    """The ray chart is not regular."""


class DatasetError(BCMError, IOError):
    exit_code = 3


class ChecksumError(DatasetError):
    pass


class ManifestMismatch(DatasetError):
    exit_code = 4


class InversionError(BCMError, ArithmeticError):
    exit_code = 4


class ValidationFailure(BCMError):
    exit_code = 5
