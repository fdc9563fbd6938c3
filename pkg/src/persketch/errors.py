"""Exception types shared across the pipeline."""


class PersketchError(Exception):
    """Base class for all library errors."""


class DegenerateInputError(PersketchError):
    """Empty or zero-measure geometric input (zero-length polyline, empty point set)."""


class OutOfDomainError(PersketchError):
    """Index or coordinate outside the operation's domain."""


class ZeroTangentError(PersketchError):
    """Tangent requested where neighboring samples coincide."""


class ProjectionSingularityError(PersketchError):
    """Homogeneous w-component vanished during projection."""

    def __init__(self, point, w):
        self.point = point
        self.w = w
        super().__init__(f"projection singularity at {point}: |w|={abs(w):.3e}")


class EmptyContourError(PersketchError):
    """Contour extraction produced no curves."""


class CheckpointError(PersketchError):
    """Checkpoint file is unreadable, truncated, or structurally inconsistent."""


class UndefinedLossError(PersketchError):
    """A loss term was requested on data where it is undefined (e.g. no matches)."""


class TrainingDivergedError(PersketchError):
    """Optimization produced a non-finite loss."""

    def __init__(self, iteration, terms):
        self.iteration = iteration
        self.terms = terms
        super().__init__(f"non-finite loss at iteration {iteration}: {terms}")
