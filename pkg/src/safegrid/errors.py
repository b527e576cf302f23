"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """Invalid network description or option value; the message names the offending entity."""


class UnstableSystemError(RuntimeError):
    """An operation that requires a Hurwitz matrix received an unstable one."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class StabilityLossError(ConvergenceError):
    """A descent step could not retain closed-loop stability."""

    def __init__(self, message, last_stable=None):
        super().__init__(message)
        self.last_stable = last_stable


class CbfInfeasibleError(RuntimeError):
    """The robust safe-control interval is empty (lo > hi)."""

    def __init__(self, message, gap=0.0):
        super().__init__(message)
        self.gap = float(gap)


class NumericalBlowupError(RuntimeError):
    """Integration produced a non-finite state."""
