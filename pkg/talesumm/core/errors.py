"""
Error hierarchy shared by every TaleSumm module
"""
from typing import Dict, Optional


class TaleSummError(Exception):
    """Root of all library errors"""

    exit_code = 2


class InvalidInputError(TaleSummError):
    """Malformed or inconsistent input; the CLI reports these with exit code 1"""

    exit_code = 1


class ShapeError(InvalidInputError):
    pass


class MaskError(InvalidInputError):
    pass


class ManifestError(InvalidInputError):
    pass


class LabelError(InvalidInputError):
    pass


class ConfigMismatchError(InvalidInputError):
    pass


class CheckpointError(InvalidInputError):
    pass


class SplitError(InvalidInputError):
    pass


class MetricError(InvalidInputError):
    pass


class TensorFormatError(InvalidInputError):
    """
    Raised while decoding a tensor file; offset is the byte position of the problem
    """

    def __init__(self, message: str, offset: int = 0, path: Optional[str] = None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte offset {offset})")


class NonFiniteError(TaleSummError):
    def __init__(self, message: str, parameter: Optional[str] = None):
        self.parameter = parameter
        super().__init__(message)


class TrainingDivergedError(TaleSummError):
    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(f"{message} {self.diagnostics}" if self.diagnostics else message)
