"""Exception types raised across the toolkit."""


class UncalMocapError(Exception):
    """Base class for all toolkit errors."""


class PointBehindCamera(UncalMocapError):
    """Projection requested for a point at or behind the camera plane."""


class DegenerateConfiguration(UncalMocapError):
    """Geometric system too ill-conditioned to solve (parallel rays, collinear centers, ...)."""


class DegenerateRotation(UncalMocapError):
    """6D rotation input with (near-)parallel columns."""


class InsufficientCorrespondences(UncalMocapError):
    """Fewer correspondences than the minimal set of the solver."""


class NoConsensus(UncalMocapError):
    """RANSAC failed to reach the required inlier ratio."""


class CheiralityAmbiguity(UncalMocapError):
    """Relative-pose candidates cannot be told apart by positive-depth counts."""


class NoTrajectory(UncalMocapError):
    """No valid previous-frame 3D point is available for the physical cost."""


class TooFewViews(UncalMocapError):
    """Consistency matrices need at least two detected views."""


class EmptySelection(UncalMocapError):
    """No view pair passes the affinity floor; nothing can be selected."""


class UntrainedBackend(UncalMocapError):
    """Prior backend used before fit/load."""


class TooShort(UncalMocapError):
    """Sequence shorter than the minimum the operation supports."""


class InsufficientData(UncalMocapError):
    """Not enough training frames for the requested latent dimension."""


class MalformedArchive(UncalMocapError):
    """Weight archive fails structural validation."""


class ShapeMismatch(UncalMocapError):
    """Weight archive tensor shape disagrees with the declared architecture."""

    def __init__(self, tensor_name, expected, actual):
        self.tensor_name = tensor_name
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(
            f"tensor {tensor_name!r}: expected shape {self.expected}, got {self.actual}"
        )


class NonFiniteObjective(UncalMocapError):
    """Objective or gradient became non-finite during optimization."""

    def __init__(self, term_name, message=""):
        self.term_name = term_name
        super().__init__(f"non-finite value in term {term_name!r}" + (f": {message}" if message else ""))


class ConfigInvalid(UncalMocapError):
    """Configuration failed validation."""
