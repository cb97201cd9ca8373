"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class RobustLatticeError(Exception):
    exit_code = 1


class ConfigurationError(RobustLatticeError):
    exit_code = 2


class GainConditionError(ConfigurationError):
    pass


class InfeasibleTighteningError(ConfigurationError):
    def __init__(self, message, constraint=None):
        super().__init__(message)
        self.constraint = constraint


class ModelValidityError(ConfigurationError):
    pass


class ParseError(RobustLatticeError):
    exit_code = 3


class LibraryIncompleteError(RobustLatticeError):
    exit_code = 4


class StaleLibraryError(RobustLatticeError):
    exit_code = 5


class CorruptLibraryError(RobustLatticeError):
    exit_code = 5


class NoPathError(RobustLatticeError):
    exit_code = 6


class PlannerTimeoutError(NoPathError):
    pass


class SnapError(RobustLatticeError):
    exit_code = 7


class CertificationError(RobustLatticeError):
    exit_code = 8


class IntegrationDivergedError(RobustLatticeError):
    pass


class PrimitiveInfeasibleError(RobustLatticeError):
    pass


class SymmetryViolationError(RobustLatticeError):
    pass


class CorruptedPlanError(RobustLatticeError):
    pass
