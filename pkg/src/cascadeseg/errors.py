"""Exception types shared across the package."""


class EngineError(Exception):
    """Base class for every error raised by this package."""


class DegenerateVolume(EngineError):
    """A volume has a zero-sized axis or non-positive spacing."""


class InvalidMode(EngineError):
    """An unknown or inapplicable resampling / tiling mode was requested."""


class NoForeground(EngineError):
    """A foreground-dependent operation received an all-background mask."""


class PadTooLarge(EngineError):
    """A mirror-pad margin reaches or exceeds the axis length."""


class ShapeError(EngineError):
    """Tensor shapes are incompatible with the requested layer operation."""


class GeometryError(EngineError):
    """A network configuration produces an invalid feature-map size."""


class CheckpointError(EngineError):
    """A checkpoint file is unreadable or inconsistent with its config."""


class EmptyRegion(EngineError):
    """A loss or statistics region contains no voxels."""


class ClassAbsent(EngineError):
    """A per-class metric was requested for a class with no voxels."""


class FormatError(EngineError):
    """A volume file or run config violates the documented format."""


class DivergedError(EngineError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite loss {value!r} at iteration {iteration}")
        self.iteration = iteration
        self.value = value
