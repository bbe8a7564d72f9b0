"""Exception types shared across the pipeline."""


class CurvecalError(Exception):
    """Base class for all library errors."""


class ConfigError(CurvecalError):
    """Bad or inconsistent configuration / input table."""


class CurveParseError(CurvecalError):
    """Malformed curve file (non-monotone time, length mismatch, ...)."""


class CoverageError(CurvecalError):
    """A curve does not cover the requested time interval."""


class WindowError(CurvecalError):
    """An event window does not intersect the curve domain."""


class DegenerateWarpError(CurvecalError):
    """Zero-length warp segment: two anchors collapsed onto each other."""


class ConditioningError(CurvecalError):
    """A correlation matrix is not positive definite beyond nugget tolerance."""


class FitError(CurvecalError):
    """Surrogate hyperparameter optimization failed."""


class StageError(CurvecalError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
