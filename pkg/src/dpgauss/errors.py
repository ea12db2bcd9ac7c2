"""Exception hierarchy shared by every module.

Each class carries a stable ``code`` used by the command line front end
when it emits machine-readable error records.
"""


class DPGaussError(Exception):
    code = "Error"


class InvalidMatrix(DPGaussError, ValueError):
    code = "InvalidMatrix"


class InvalidInput(DPGaussError, ValueError):
    code = "InvalidInput"


class SingularCovariance(DPGaussError, ValueError):
    code = "SingularCovariance"


class EmptyCore(DPGaussError, ValueError):
    code = "EmptyCore"


class InsufficientData(DPGaussError, ValueError):
    code = "InsufficientData"


class ConfigError(DPGaussError, ValueError):
    code = "ConfigError"


class FilterDiverged(DPGaussError, RuntimeError):
    code = "FilterDiverged"


class RefinementUnstable(DPGaussError, RuntimeError):
    code = "RefinementUnstable"


class CalibrationFailed(DPGaussError, RuntimeError):
    code = "CalibrationFailed"


class ParseError(DPGaussError, ValueError):
    code = "ParseError"

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line
