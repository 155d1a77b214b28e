"""Exception hierarchy shared by all modules.

Each class carries a machine-readable ``code`` used by the command line
runner to choose an exit status.
"""


class StabfieldError(Exception):
    code = "error"


class ParameterError(StabfieldError, ValueError):
    """Invalid numeric parameter or malformed configuration."""

    code = "parameter"


class ContractError(StabfieldError, ValueError):
    """An input violated an operation precondition (e.g. no point at origin)."""

    code = "contract"


class InsufficientPointsError(ContractError):
    code = "insufficient_points"


class PatchTooSmallError(ContractError):
    code = "patch_too_small"


class CertificationError(StabfieldError, RuntimeError):
    """A functional value could not be certified at the available probe depth."""

    code = "certification"


class NumericError(StabfieldError, ArithmeticError):
    """Overflow, degenerate fit, or a non-finite intermediate."""

    code = "numeric"


class DegenerateFitError(NumericError):
    code = "degenerate_fit"
