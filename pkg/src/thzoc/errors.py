"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or invalid input arguments."""


class ShapeError(ValueError):
    """Operands with incompatible shapes."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        desc = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class SolverError(RuntimeError):
    """Linear solve failure. `pivot` is the offending (0-based) pivot index."""

    def __init__(self, message, pivot=None):
        self.pivot = pivot
        super().__init__(message)


class ConvergenceError(RuntimeError):
    """Newton iteration did not reach its tolerance."""

    def __init__(self, message, history=(), slab=None):
        self.history = list(history)
        self.slab = slab
        super().__init__(message)


class NumericalError(RuntimeError):
    """NaN or inf encountered during a computation."""

    def __init__(self, message, where=None, dump=None):
        self.where = where
        self.dump = dump
        super().__init__(message)
