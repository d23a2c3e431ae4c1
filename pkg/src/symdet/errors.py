"""Exception types raised across the package."""


class SymdetError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SymdetError, ValueError):
    pass


class BehindCameraError(SymdetError, ValueError):
    pass


class InvalidDepthError(SymdetError, ValueError):
    pass


class EmptyGraphError(SymdetError, ValueError):
    pass


class NoEvidenceError(SymdetError):
    """Every candidate plane at some search stage had no valid correlation."""

    def __init__(self, stage):
        self.stage = stage
        super().__init__(f"no valid correlation evidence at stage {stage}")


class InvalidLabelError(SymdetError, ValueError):
    pass


class DivergenceError(SymdetError, ArithmeticError):
    pass


class GenerationFailedError(SymdetError):
    pass


class SceneFormatError(SymdetError, ValueError):
    """Malformed scene header, truncated blob or checksum mismatch."""


class CorrectnessError(SymdetError):
    """The benchmark's two scoring paths disagree."""
