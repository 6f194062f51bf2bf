"""Exception types raised by the solver."""


class MlpError(Exception):
    """Base class for all solver errors."""


class ConfigError(MlpError, ValueError):
    """Invalid experiment or problem configuration."""


class BudgetExceededError(MlpError):
    """The configured cap on driver evaluations was hit."""

    def __init__(self, budget, used):
        super().__init__(f"f-evaluation budget exceeded: {used} > {budget}")
        self.budget = budget
        self.used = used


class DivergenceError(MlpError, ArithmeticError):
    """An Euler iterate became non-finite."""

    def __init__(self, step, time, index=None):
        where = f" at index {index}" if index is not None else ""
        super().__init__(f"Euler state became non-finite at step {step} (t={time}){where}")
        self.step = step
        self.time = time
        self.index = index


class UnsupportedProblemError(MlpError, ValueError):
    """The requested operation is not available for this problem family."""


class MissingExactSolutionError(MlpError, ValueError):
    """The problem has no closed-form solution attached."""
