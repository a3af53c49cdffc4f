"""Exception types raised across the package."""


class SafeReturnError(Exception):
    """Base class; ``code`` is the machine-readable tag printed by the CLI."""

    code = "Error"


class PolicyDomainMismatch(SafeReturnError):
    code = "PolicyDomainMismatch"


class NonAbsorbingSink(SafeReturnError):
    code = "NonAbsorbingSink"


class ParseError(SafeReturnError):
    code = "ParseError"


class UnsupportedAcceptance(SafeReturnError):
    code = "UnsupportedAcceptance"


class NondeterministicAutomaton(SafeReturnError):
    code = "NondeterministicAutomaton"


class UnsupportedTemplate(SafeReturnError):
    code = "UnsupportedTemplate"


class AlphabetMismatch(SafeReturnError):
    code = "AlphabetMismatch"


class EmptyTarget(SafeReturnError):
    code = "EmptyTarget"


class Infeasible(SafeReturnError):
    code = "Infeasible"


class EmptyAmec(SafeReturnError):
    code = "EmptyAmec"


class EmptyFeatureSet(SafeReturnError):
    code = "EmptyFeatureSet"


class TaskInfeasible(SafeReturnError):
    code = "TaskInfeasible"


class SafetyUnsatisfiable(SafeReturnError):
    code = "SafetyUnsatisfiable"


class PlanModelMismatch(SafeReturnError):
    code = "PlanModelMismatch"


class InvalidGrid(SafeReturnError):
    code = "InvalidGrid"


class InvalidTerrain(SafeReturnError):
    code = "InvalidTerrain"


class SolverCheckFailed(SafeReturnError):
    """An LP solution failed its independent value-iteration cross-check."""

    code = "SolverCheckFailed"
