"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An argument or configuration violates a documented precondition."""


class MhaParseError(ValueError):
    """A MetaImage header line could not be parsed."""


class MhaSizeError(ValueError):
    """The raw payload size does not match the header."""


class UnsupportedTypeError(ValueError):
    """An ElementType outside the supported set was encountered."""


class ShapeError(ValueError):
    """Tensor or volume shapes are inconsistent."""


class EmptyMaskError(ValueError):
    """A binary mask required to be nonempty was empty."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
