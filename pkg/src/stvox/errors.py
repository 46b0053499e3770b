"""Exception types shared across the package.

Input problems raise ``ValueError`` subclasses (CLI exit code 2); broken
internal invariants raise ``InvariantViolation`` (CLI exit code 3).
"""


class DegeneratePoseError(ValueError):
    """A pose matrix is not invertible (|det| below threshold)."""


class InvariantViolation(RuntimeError):
    """An internal consistency guarantee failed; indicates a bug, not bad input."""


class PipelineError(RuntimeError):
    """A pipeline stage failed; message carries the frame index and stage name."""
