class YoloArError(Exception):
    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigurationError(YoloArError):
    pass


class OrderingError(YoloArError):
    def __init__(self, timestamp: int, newest: int):
        super().__init__(
            f"pose timestamp {timestamp} is older than newest stored {newest}"
        )
        self.timestamp = timestamp
        self.newest = newest


class NoPoseError(YoloArError):
    pass


class StalePoseError(YoloArError):
    def __init__(self, gap_ns: int, tolerance_ns: int):
        super().__init__(
            f"nearest pose is {gap_ns / 1e6:.3f} ms away (tolerance {tolerance_ns / 1e6:.3f} ms)"
        )
        self.gap_ns = gap_ns
        self.tolerance_ns = tolerance_ns


class FrameTooSmallError(YoloArError):
    def __init__(self, n: int, width: int, height: int):
        super().__init__(f"cannot crop {n}x{n} out of a {width}x{height} frame")
        self.n = n
        self.width = width
        self.height = height


class ShapeError(YoloArError):
    pass


class DataError(YoloArError):
    pass


class PlanError(YoloArError):
    pass


class LoadError(YoloArError):
    def __init__(self, path: str, cause: Exception | str):
        super().__init__(f"cannot load model {path}: {cause}")
        self.path = path
        self.cause = cause


class UnsupportedInputError(ConfigurationError):
    pass


class AmbiguousLayoutError(ConfigurationError):
    def __init__(self, extents: tuple):
        super().__init__(
            f"input extents {extents} match both layouts, pass an explicit layout"
        )
        self.extents = extents


class InferenceError(YoloArError):
    def __init__(self, backend: str, diagnostics: str):
        super().__init__(f"{backend} inference failed: {diagnostics}")
        self.backend = backend
        self.diagnostics = diagnostics


class SessionBusyError(InferenceError):
    def __init__(self, backend: str):
        super().__init__(backend, "session already in use by another thread")


class GeometryError(YoloArError):
    pass


class NoIntersectionError(GeometryError):
    pass


class InsufficientDataError(YoloArError):
    def __init__(self, points: int, required: int = 3):
        super().__init__(
            f"need at least {required} distinct input sizes, got {points}"
        )
        self.points = points
        self.required = required


class InfeasibleBudgetError(YoloArError):
    def __init__(self, limit_ms: float, fastest):
        super().__init__(
            f"no configuration fits {limit_ms} ms; fastest is "
            f"{fastest.variant_name}@{fastest.input_size} at {fastest.mean_total_ms:.3f} ms"
        )
        self.limit_ms = limit_ms
        self.fastest = fastest


class ParseError(YoloArError):
    def __init__(self, message: str, filename: str, location: str):
        super().__init__(f"{filename}: {location}: {message}")
        self.filename = filename
        self.location = location


class ProfilingError(YoloArError):
    def __init__(self, stage: str, completed: int, cause: Exception):
        super().__init__(
            f"stage {stage} failed after {completed} completed iterations: {cause}"
        )
        self.stage = stage
        self.completed = completed
        self.cause = cause
