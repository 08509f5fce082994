"""Exception types raised across the package."""


class DecayFitError(Exception):
    """Base class for all package errors."""


class DegenerateInput(DecayFitError, ValueError):
    """Input cannot be analysed (all-zero signal, too short, nothing below threshold)."""


class ShapeMismatch(DecayFitError, ValueError):
    pass


class InvalidBand(DecayFitError, ValueError):
    pass


class InvalidParameters(DecayFitError, ValueError):
    pass


class DomainError(DecayFitError, ValueError):
    pass


class GenerationStalled(DecayFitError, RuntimeError):
    pass


class StateError(DecayFitError, RuntimeError):
    pass


class FormatError(DecayFitError, ValueError):
    pass


class TrainingDiverged(DecayFitError, RuntimeError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss in epoch {epoch}")
