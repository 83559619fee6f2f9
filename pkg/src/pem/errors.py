"""Exception types shared across the toolkit."""


class PemError(Exception):
    """Base class for all toolkit errors (maps to CLI exit code 2)."""


class DataFormatError(PemError):
    """A file failed structural validation.

    ``code`` distinguishes the failure class ("bad magic",
    "version mismatch", "truncated dataset", "incompatible model", ...).
    """

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        super().__init__(f"{code}: {detail}" if detail else code)


class TrainingDivergedError(PemError):
    """Training loss became non-finite at ``epoch``."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training diverged (loss not finite) at epoch {epoch}")
