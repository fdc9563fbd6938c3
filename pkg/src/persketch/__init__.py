"""Learning spatially varying perspective deviation from sketch/contour pairs."""

from .deviation import DeviationField, FieldConfig
from .geom import AnchoredPolyline, CameraRig, Viewport, chamfer_l1
from .losses import TrainingPair
from .matching import MatchParams, MatchSet, match_curves
from .training import TrainConfig, self_augment, train

__version__ = "0.1.0"

__all__ = [
    "AnchoredPolyline", "CameraRig", "Viewport", "chamfer_l1",
    "DeviationField", "FieldConfig", "MatchParams", "MatchSet",
    "match_curves", "TrainingPair", "TrainConfig", "train", "self_augment",
    "__version__",
]
