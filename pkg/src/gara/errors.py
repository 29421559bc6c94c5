"""Exception taxonomy shared across the package.

Every failure mode raised on purpose derives from GaraError so callers can
catch the package's own diagnostics separately from genuine bugs.
"""


class GaraError(Exception):
    """Base class for all package-level diagnostics."""


class ShapeError(GaraError):
    """Operands have incompatible shapes; message names both shapes."""


class ConfigError(GaraError):
    """A config document or config value is malformed or out of range."""


class UsageError(GaraError):
    """An API was called in a way that is a programming error, not bad data."""


class DataError(GaraError):
    """A dataset, manifest, or sample fails validation."""


class CheckpointError(GaraError):
    """A checkpoint file is missing, truncated, or has the wrong magic."""


class DivergenceError(GaraError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float, learning_rate: float):
        self.step = step
        self.loss = loss
        self.learning_rate = learning_rate
        super().__init__(
            f"non-finite loss {loss!r} at step {step} (learning_rate={learning_rate});"
            " reduce the learning rate or inspect the inputs"
        )


class TrainingDiagnosticError(GaraError):
    """Training finished but failed a required quality bar."""

    def __init__(self, message: str, history: list | None = None):
        self.history = history or []
        if self.history:
            head = ", ".join(f"{v:.4f}" for v in self.history[:5])
            tail = ", ".join(f"{v:.4f}" for v in self.history[-5:])
            message = f"{message} (loss curve head: [{head}] tail: [{tail}])"
        super().__init__(message)
