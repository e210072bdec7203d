"""Exception hierarchy shared by the geometry managers and the engine."""


class FinslerMorseError(Exception):
    """Base class for every error raised by the engine"""


# Jets


class JetCapacityError(FinslerMorseError):
    pass


class JetDomainError(FinslerMorseError, ArithmeticError):
    pass


class UnknownGeneratorError(FinslerMorseError, KeyError):
    pass


# Expressions


class ExpressionSyntaxError(FinslerMorseError, ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownIdentifierError(FinslerMorseError, ValueError):
    def __init__(self, name: str, position: int):
        super().__init__(f"unknown identifier '{name}' at position {position}")
        self.name = name
        self.position = position


# Metric and frames


class ConicDomainError(FinslerMorseError, ValueError):
    pass


class NondegeneracyError(FinslerMorseError):
    pass


class SignatureError(FinslerMorseError):
    pass


# Curves


class DomainExitError(FinslerMorseError):
    def __init__(self, message: str, exit_time: float):
        super().__init__(f"{message} (exit time {exit_time:.10g})")
        self.exit_time = exit_time


class IntegrationError(FinslerMorseError):
    pass


class ConvergenceError(FinslerMorseError):
    pass


# Submanifolds


class SubmanifoldError(FinslerMorseError, ValueError):
    pass


class SplittingError(FinslerMorseError):
    pass


class NotPerpendicularError(FinslerMorseError):
    pass


# Jacobi fields and index forms


class PartitionError(FinslerMorseError):
    pass


class HypothesisViolationError(FinslerMorseError):
    pass


class PreconditionError(FinslerMorseError):
    pass


class MeshError(FinslerMorseError, ValueError):
    pass


# Harness


class ScenarioError(FinslerMorseError, ValueError):
    pass


class StageError(FinslerMorseError):
    """Wraps a failure with the pipeline stage it happened in"""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
