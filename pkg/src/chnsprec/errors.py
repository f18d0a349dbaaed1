"""Exception types shared across the package."""


class NonConvergenceError(RuntimeError):
    """An iteration hit its limit. ``history`` holds the residual norms seen."""

    def __init__(self, message, history=None, partial=None):
        super().__init__(message)
        self.history = list(history or [])
        self.partial = partial


class IndefiniteOperatorError(ArithmeticError):
    pass


class SingularMatrixError(ArithmeticError):
    pass


class ParseError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
