"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: ConfigError -> 2,
DataFileError (and OS-level I/O errors) -> 3, everything else -> 1.
"""


class CovcastError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(CovcastError):
    """Invalid or unresolvable run configuration. Carries the offending key path."""

    def __init__(self, message: str, key_path: str = ""):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}" if key_path else message)


class DataFileError(CovcastError):
    """Missing, unreadable or unwritable files and directories."""


class SchemaError(CovcastError):
    """Input data does not match the declared channel schema."""


class TimestampError(CovcastError):
    """Timestamps are non-monotone or inconsistent with the declared frequency."""


class SplitError(CovcastError):
    """A chronological split cannot host a full lookback+horizon window."""


class TokenCountError(CovcastError):
    """Future-covariate token count disagrees with the backbone token count."""


class CheckpointError(CovcastError):
    """Malformed checkpoint container or shape mismatch against the config."""


class TrainingDiverged(CovcastError):
    """Non-finite loss encountered during optimization."""

    def __init__(self, epoch: int, batch_index: int):
        self.epoch = epoch
        self.batch_index = batch_index
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}")


class ConvergenceError(CovcastError):
    """Iterative solver hit its iteration cap. Carries a residual gap surrogate."""

    def __init__(self, message: str, gap: float):
        self.gap = gap
        super().__init__(f"{message} (final gap surrogate {gap:.3e})")


class DegenerateDesignError(CovcastError):
    """Rank-deficient regression design. Carries a conditioning report."""

    def __init__(self, message: str, condition_number: float = float("inf")):
        self.condition_number = condition_number
        super().__init__(f"{message} (condition number {condition_number:.3e})")
