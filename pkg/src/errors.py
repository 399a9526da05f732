"""
Exception hierarchy for curvcone.

Verification failures are reported as verdicts; these exceptions signal
bad inputs, violated hypotheses and broken internal invariants.
"""


class CurvconeError(Exception):
    """Root of all curvcone errors."""


class InputError(CurvconeError, ValueError):
    """A precondition, range or schema violation in caller-supplied input."""


class InvariantError(CurvconeError):
    """A data invariant or hard construction assertion does not hold."""


class ConditionViolation(InputError):
    """
    A curvature hypothesis fails.

    Attributes:
        margin: the offending (non-positive) margin, when one was computed
    """

    def __init__(self, message: str, margin: float | None = None):
        super().__init__(message)
        self.margin = margin
