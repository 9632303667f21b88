"""Exception and warning types shared across the pipeline.

Precondition violations on plain math operations raise ``ValueError``;
the classes here exist for failures the CLI maps to distinct exit codes
or that callers need to catch selectively.
"""


class DecodeError(Exception):
    """Image file exists but cannot be decoded (corrupt or unsupported)."""


class CheckpointError(Exception):
    """Checkpoint file is malformed (bad magic, truncated, junk tensor)."""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint tensors do not match the expected network shapes."""


class NonFiniteError(ArithmeticError):
    """Training loss or gradient became NaN/Inf; the run is aborted, not
    patched over, because silently skipping bad batches masks divergence."""


class MissingCounterpartError(Exception):
    """An image id is present in one evaluation directory but not another."""

    def __init__(self, image_id, missing_from):
        self.image_id = image_id
        self.missing_from = missing_from
        super().__init__(f"id {image_id!r} missing from {missing_from}")


class ConvergenceWarning(RuntimeWarning):
    """Power iteration hit max_iter before reaching the requested tolerance."""
