class DepthMotionError(Exception):
    """Base class for errors raised by this package"""


class ShapeError(DepthMotionError, ValueError):
    pass


class TapeError(DepthMotionError, RuntimeError):
    pass


class GeometryError(DepthMotionError, ValueError):
    pass


class ConfigError(DepthMotionError, ValueError):
    pass


class DatasetError(DepthMotionError, ValueError):
    pass


class CheckpointError(DepthMotionError, ValueError):
    pass


class EvaluationError(DepthMotionError, ValueError):
    pass


class TrainingError(DepthMotionError, RuntimeError):
    """Raised when a training step produces a non-finite loss"""

    def __init__(self, message: str, components: dict = None):
        super().__init__(message)
        self.components = dict(components or {})
