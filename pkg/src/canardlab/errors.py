"""Exception hierarchy for the laboratory.

Assumption violations get their own branch so the service and CLI can map
them to a distinct exit status (2) instead of a generic failure (1).
"""


class CanardLabError(Exception):
    """Base class for all package errors."""


class EvaluationError(CanardLabError):
    """A model evaluator returned a non-finite value."""

    def __init__(self, function_name, state, detail=""):
        self.function_name = function_name
        self.state = state
        msg = f"evaluator {function_name!r} returned non-finite output at state {state}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class IntegrationError(CanardLabError):
    """Integration aborted (non-finite state or internal failure)."""


class StepSizeUnderflow(IntegrationError):
    """Adaptive step size collapsed below machine resolution.

    Usually a stiffness failure; the semi-implicit method is the fallback.
    """

    def __init__(self, t, state, h):
        self.t = t
        self.state = state
        self.h = h
        super().__init__(
            f"step size underflow at t={t:.6g} (h={h:.3e}); state={state}. "
            "Consider method='radau'."
        )


class AssumptionViolation(CanardLabError):
    """A structural assumption of the analysis does not hold numerically."""


class SingularPassageError(AssumptionViolation):
    """The slow drift changes sign or vanishes on the linger range."""


class CanardNotFoundError(AssumptionViolation):
    """No attracting intersection of the fast and slow manifolds in the region."""


class CrossingNotFoundError(CanardLabError):
    """No qualifying entry/pre-jump crossing pair on the trajectory."""

    def __init__(self, entry_count, prejump_count):
        self.entry_count = entry_count
        self.prejump_count = prejump_count
        super().__init__(
            f"no entry followed by pre-jump crossing "
            f"(entry crossings: {entry_count}, pre-jump crossings: {prejump_count})"
        )


class ConfigError(CanardLabError):
    """Experiment configuration is malformed or inconsistent."""


class StageError(CanardLabError):
    """A pipeline stage failed; carries the stage name for the manifest."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
