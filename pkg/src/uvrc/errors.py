"""Exception types shared across the codec."""


class CodecError(Exception):
    """Base class for all codec failures."""


class ShapeError(CodecError, ValueError):
    """A tensor or image does not have the shape the model expects."""


class CorruptStreamError(CodecError):
    """A payload or container failed validation while decoding."""


class ModelMismatchError(CodecError):
    """A bitstream was produced by a different model than the one decoding it."""


class UnsupportedArchitectureError(CodecError):
    """The requested operation does not exist for this architecture."""


class NonFiniteError(CodecError, FloatingPointError):
    """A forward pass produced NaN or Inf."""

    def __init__(self, layer: str, detail: str = ""):
        self.layer = layer
        msg = f"non-finite values produced by {layer}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class TrainingDivergedError(CodecError):
    """Training loss became non-finite; carries the last good weights."""

    def __init__(self, step: int, last_good=None):
        self.step = step
        self.last_good = last_good
        super().__init__(f"training diverged at step {step}")
