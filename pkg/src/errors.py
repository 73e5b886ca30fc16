"""
Exception hierarchy for the SSL-DETR lab.

Library code raises these; only the CLI layer catches them.
"""
from typing import Any, Dict, List, Optional, Tuple


class SSLDetrError(Exception):
    """Base class for every error raised by this package"""

    def details(self) -> Dict[str, Any]:
        """Machine-readable context for JSON error output"""
        return {}


class DimensionError(SSLDetrError, ValueError):
    """Image dimension not compatible with the patch grid"""

    def __init__(self, axis: str, size: int, factor: int):
        self.axis = axis
        self.size = size
        self.factor = factor
        super().__init__(f"{axis} {size} is not divisible by downsampling factor {factor}")

    def details(self) -> Dict[str, Any]:
        return {"axis": self.axis, "size": self.size, "factor": self.factor}


class ShapeError(SSLDetrError, ValueError):
    """Tensor shape does not match what the operation expects"""


class RangeError(SSLDetrError, ValueError):
    """Scalar argument outside its allowed range"""


class ConfigurationError(SSLDetrError, ValueError):
    """Inconsistent component configuration (task/head mismatch, odd dims, ...)"""


class ConfigValidationError(SSLDetrError, ValueError):
    """Run configuration failed validation; carries every offending field"""

    def __init__(self, errors: List[Tuple[str, str]]):
        self.errors = list(errors)
        lines = [f"{path}: {message}" for path, message in self.errors]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))

    def details(self) -> Dict[str, Any]:
        return {"fields": [{"path": path, "message": message} for path, message in self.errors]}


class InfeasibleMatchError(SSLDetrError, ValueError):
    """More ground-truth objects than predictions"""


class NumericError(SSLDetrError, ArithmeticError):
    """NaN or infinite values where finite numbers are required"""


class ContractError(SSLDetrError, ValueError):
    """Arguments that are individually valid but inconsistent with each other"""


class DatasetError(SSLDetrError, ValueError):
    """Dataset missing, empty or unusable for the requested operation"""


class AnnotationParseError(SSLDetrError, ValueError):
    """Annotation file is not valid COCO JSON"""

    def __init__(self, path: str, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.path = path
        self.line = line
        self.column = column
        location = f"{path}:{line}:{column}" if line is not None else path
        super().__init__(f"{location}: {message}")

    def details(self) -> Dict[str, Any]:
        return {"path": self.path, "line": self.line, "column": self.column}


class CheckpointError(SSLDetrError, OSError):
    """Checkpoint cannot be written, read or applied"""

    def __init__(self, path: str, message: str):
        self.path = str(path)
        super().__init__(f"{message}: {path}")

    def details(self) -> Dict[str, Any]:
        return {"path": self.path}


class RunDirectoryError(SSLDetrError, OSError):
    """Output directory already holds a run manifest"""

    def __init__(self, path: str, message: str):
        self.path = str(path)
        super().__init__(f"{message}: {path}")

    def details(self) -> Dict[str, Any]:
        return {"path": self.path}
