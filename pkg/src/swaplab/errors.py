"""Exception hierarchy shared by every swaplab module."""

from __future__ import annotations


class SwapLabError(Exception):
    pass


class ContractError(SwapLabError, ValueError):
    """A caller violated a documented precondition (shapes, sizes, ranges)."""


class DegenerateBatchError(ContractError):
    pass


class NumericError(SwapLabError, ArithmeticError):
    def __init__(self, layer: str, detail: str = "non-finite value"):
        self.layer = layer
        self.detail = detail
        super().__init__(f"{detail} in layer {layer!r}")

    def __reduce__(self):
        return (type(self), (self.layer, self.detail))


class DivergenceError(SwapLabError, RuntimeError):
    """Training produced a non-finite loss; carries where it happened."""

    def __init__(self, phase: int | str, step: int, worker: int | None = None,
                 cycle: int | None = None, detail: str = ""):
        self.phase = phase
        self.step = step
        self.worker = worker
        self.cycle = cycle
        self.detail = detail
        where = f"phase {phase}, step {step}"
        if worker is not None:
            where += f", worker {worker}"
        if cycle is not None:
            where += f", cycle {cycle}"
        msg = f"run diverged at {where}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)

    def __reduce__(self):
        return (type(self), (self.phase, self.step, self.worker, self.cycle, self.detail))


class IntegrityError(SwapLabError, RuntimeError):
    pass


class DegeneratePlaneError(SwapLabError, ValueError):
    pass


class ParseError(SwapLabError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        self.raw_message = message
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

    def __reduce__(self):
        return (type(self), (self.raw_message, self.line))


class SchemaError(ParseError):
    pass


class ConfigError(SwapLabError, ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        self.raw_message = message
        super().__init__(f"{path}: {message}")

    def __reduce__(self):
        return (type(self), (self.path, self.raw_message))


class GridPointError(SwapLabError, RuntimeError):
    """Evaluation failed at one point of a loss-surface grid."""

    def __init__(self, alpha: float, beta: float, detail: str):
        self.alpha = alpha
        self.beta = beta
        self.detail = detail
        super().__init__(f"grid point (alpha={alpha!r}, beta={beta!r}): {detail}")

    def __reduce__(self):
        return (type(self), (self.alpha, self.beta, self.detail))
