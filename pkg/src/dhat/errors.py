"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A config value, spec field, or registry name is invalid.

    The message names the offending field so CLI users can fix the config.
    """


class ContractError(ValueError):
    """An operation was called with inputs violating its contract
    (shape mismatch, non-finite values, missing precondition data)."""


class IngestionError(RuntimeError):
    """A dataset on disk is missing, truncated, or fails its checksum."""


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite; the last good checkpoint was saved."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class ResumeError(RuntimeError):
    """A checkpoint cannot be resumed under the given config."""
