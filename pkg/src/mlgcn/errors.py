"""Exception taxonomy shared by all mlgcn modules."""


class MlgcnError(Exception):
    """Base class for all library errors."""


class MalformedFile(MlgcnError):
    """A file exists but does not parse under its declared format."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class MissingFile(MlgcnError):
    """A referenced file does not exist."""

    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"file not found: {self.path}")


class LabelLengthMismatch(MlgcnError):
    """Per-point label file length differs from the point count."""


class DegenerateMesh(MlgcnError):
    """Mesh has zero total surface area and cannot be sampled."""


class InvalidK(MlgcnError):
    """Neighbor count outside [1, n_points]."""


class ShapeMismatch(MlgcnError):
    """Array shapes inconsistent with the operation contract."""


class MissingForwardCache(MlgcnError):
    """Backward pass invoked without a matching forward pass."""


class NonFiniteValues(MlgcnError):
    """A forward operation produced NaN or Inf."""


class HeadNotConfigured(MlgcnError):
    """Segmentation requested on a model without a segmentation head."""


class LabelOutOfRange(MlgcnError):
    """A class or part label lies outside the configured label space."""


class EmptyDataset(MlgcnError):
    """Training or evaluation invoked with no samples."""


class CheckpointMismatch(MlgcnError):
    """Checkpoint contents incompatible with the model configuration."""
