"""Exception hierarchy. ``exit_code`` is what the CLI returns for each."""


class MFChoiceError(Exception):
    exit_code = 1


class ScenarioError(MFChoiceError, ValueError):
    """Invalid scenario data; ``field`` names the offending entry."""

    exit_code = 2

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class OutOfRangeError(MFChoiceError, ValueError):
    exit_code = 2


class GridMismatchError(MFChoiceError, ValueError):
    exit_code = 2


class UncontrollableError(MFChoiceError, ValueError):
    exit_code = 2


class IntegrationDivergedError(MFChoiceError, ArithmeticError):
    """Non-finite value produced at grid index ``index``."""

    exit_code = 3

    def __init__(self, index, what="integration"):
        self.index = index
        super().__init__(f"{what} diverged: non-finite value at grid index {index}")


class RiccatiDivergedError(IntegrationDivergedError):
    def __init__(self, index):
        super().__init__(index, what="Riccati equation")


class ConvergenceError(MFChoiceError):
    """Iteration budget exhausted; ``history`` holds the residual trace."""

    exit_code = 3

    def __init__(self, message, history=()):
        self.history = list(history)
        super().__init__(message)


class EnumerationCapError(MFChoiceError):
    exit_code = 4
