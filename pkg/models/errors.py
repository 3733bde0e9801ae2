class PoseToolkitError(Exception):
    """Base class for every error raised by the toolkit."""

    exit_code = 1


class ConfigurationError(PoseToolkitError):
    """Bad parameters, mismatched dimensions or an invalid config field."""

    exit_code = 2


class ValidationError(PoseToolkitError):
    """Input data violates a documented invariant."""

    exit_code = 3


class EmptyInputError(ValidationError):
    """An operation received an empty collection it cannot work on."""


class GeometryError(PoseToolkitError):
    """Geometrically impossible input (e.g. an object behind the camera)."""

    exit_code = 4


class DegenerateCorrespondenceError(GeometryError):
    """Too few or collinear point pairs for a rigid fit."""


class TrainingDivergedError(PoseToolkitError):
    """Training produced a non-finite loss."""

    exit_code = 5

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"Training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


# Documented exit status of the command-line tool
EXIT_CODES = {
    "success": 0,
    "unexpected": PoseToolkitError.exit_code,
    "configuration": ConfigurationError.exit_code,
    "validation": ValidationError.exit_code,
    "geometry": GeometryError.exit_code,
    "training_diverged": TrainingDivergedError.exit_code,
}
