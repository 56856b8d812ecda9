"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument or call violates a documented precondition."""


class DatasetError(RuntimeError):
    """Dataset layout, manifest, or invariant problem; message names the offender."""


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, corrupt, or has an unknown format version."""


class NonFiniteLossError(RuntimeError):
    """A loss or gradient went non-finite; the episode is aborted."""
