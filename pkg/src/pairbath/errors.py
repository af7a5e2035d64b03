"""Shared error types, mapped to CLI exit codes by cli_runner."""


class ConfigError(ValueError):
    """Invalid configuration or parameter set. Exit code 2."""


class ExtinctionError(RuntimeError):
    """Conditional probability fell below the extinction floor. Exit code 3."""

    def __init__(self, probability: float, step: int | None = None):
        self.step = step
        self.probability = probability
        where = f" at step {step}" if step is not None else ""
        super().__init__(
            f"trajectory extinct{where}: conditional probability "
            f"{probability:.3e} below floor")


class CapacityError(RuntimeError):
    """Branch ensemble exceeded its configured cap. Exit code 4."""
