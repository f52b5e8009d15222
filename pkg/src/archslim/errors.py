"""Exception types shared across the package."""


class ArchslimError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ArchslimError):
    """An operation received operands with incompatible shapes."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(ArchslimError):
    """A tensor contained NaN or Inf where finite values are required."""


class ConfigError(ArchslimError):
    """A configuration value is invalid or inconsistent."""


class InvalidArchitectureError(ArchslimError):
    """A binary architecture violates a structural constraint."""


class TrainingDiverged(ArchslimError):
    """The training loss became non-finite."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        super().__init__(f"training diverged at step {step}: {detail}")
