"""Exception hierarchy shared by every synergyseg module."""


class SynergySegError(Exception):
    """Base class for all domain errors."""


class VolumeIOError(SynergySegError):
    """Volume, mask or manifest could not be read or written."""


class UnreadableFile(VolumeIOError):
    """File is missing, truncated, of unknown format or holds non-finite data."""


class ShapeMismatch(VolumeIOError):
    """Two grids that must align do not."""


class NonBinaryLabels(VolumeIOError):
    """A label mask holds values outside {0, 1}."""


class IOFailure(VolumeIOError):
    """Writing an artifact to disk failed."""


class TooFewCases(SynergySegError):
    """Not enough cases to build a train/val/test split."""


class DegenerateGrid(SynergySegError):
    """Phantom grid is too small to hold an organ."""


class PlanningError(SynergySegError):
    """Fingerprinting or plan generation failed."""


class NoTrainingCases(PlanningError):
    """Manifest has no annotated training case."""


class NoForegroundVoxels(PlanningError):
    """Training masks contain no foreground at all."""


class BudgetInfeasible(PlanningError):
    """Even the smallest plan exceeds the memory budget."""


class NetworkError(SynergySegError):
    """Tensor shapes do not fit the network topology."""


class ShapeIncompatible(NetworkError):
    """Spatial or channel shape does not fit the plan."""


class DimensionMismatch(NetworkError):
    """Feature channel count differs from the codebook dimension."""


class NonFiniteLoss(SynergySegError):
    """Training objective became NaN or infinite."""


class EmptySurface(SynergySegError):
    """Surface distance requested for an empty mask."""


class MissingPrediction(SynergySegError):
    """A case in the evaluated split has no prediction file."""


class CheckpointError(SynergySegError):
    """Checkpoint is missing, unreadable or of an unsupported version."""


class NoEvaluableCases(SynergySegError):
    """The evaluated split holds no annotated case."""
