"""Exception hierarchy.

The CLI maps each family onto an exit code: configuration problems exit
with 2, data problems with 3 and numeric failures with 4.
"""


class OutskirtError(Exception):
    exit_code = 1


class ConfigError(OutskirtError, ValueError):
    exit_code = 2


class StateError(OutskirtError, RuntimeError):
    exit_code = 2


class DataError(OutskirtError, ValueError):
    exit_code = 3


class NumericError(OutskirtError, ArithmeticError):
    exit_code = 4


class TrainingDiverged(NumericError):
    """Raised when a loss turns NaN/Inf during training."""

    def __init__(self, epoch, batch, history):
        self.epoch = epoch
        self.batch = batch
        self.history = list(history)
        tail = ", ".join(f"{v:.6g}" for v in self.history[-5:])
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch}; "
            f"last losses: [{tail}]"
        )


class EmptyOutskirtError(ConfigError):
    """No catalog entry passed the selection rule at the requested alpha."""

    def __init__(self, rule, alpha):
        self.rule = rule
        self.alpha = alpha
        super().__init__(
            f"{rule} selector with alpha={alpha:g} selected no distributions; "
            "use a lower alpha"
        )


class DegenerateAxisError(NumericError):
    def __init__(self, axis):
        self.axis = axis
        super().__init__(f"meta-distribution variance is zero along axis {axis}")
