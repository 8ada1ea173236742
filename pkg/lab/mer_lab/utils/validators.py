from typing import Any, Dict, Optional, Sequence

import numpy as np


class LabError(Exception):
    """Base error for every contract or numeric failure raised by mer_lab."""

    error_type = "lab_error"
    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def to_dict(self) -> Dict[str, Any]:
        return {
            "is_valid": False,
            "error_message": self.message,
            "error_type": self.error_type,
        }


class ContractError(LabError):
    error_type = "contract_violation"
    exit_code = 1


class UsageError(ContractError):
    error_type = "usage_error"


class ConfigError(ContractError):
    error_type = "config_error"


class ShapeError(ContractError):
    error_type = "shape_mismatch"


class FormatError(ContractError):
    """Malformed on-disk artifact; `offset` is the byte (or line) where parsing failed."""

    error_type = "format_error"

    def __init__(self, message: str, path: Optional[str] = None, offset: Optional[int] = None):
        location = f" at byte offset {offset}" if offset is not None else ""
        source = f"{path}: " if path else ""
        super().__init__(f"{source}{message}{location}")
        self.path = path
        self.offset = offset

    def to_dict(self) -> Dict[str, Any]:
        result = super().to_dict()
        if self.offset is not None:
            result["offset"] = self.offset
        return result


class MissingClassError(ContractError):
    error_type = "missing_class"

    def __init__(self, label: int, side: str):
        super().__init__(f"class {label} is absent from the {side} set")
        self.label = label
        self.side = side


class NumericError(LabError):
    error_type = "numeric_error"
    exit_code = 2


class DegenerateError(NumericError):
    error_type = "degenerate_input"


class NonFiniteError(NumericError):
    error_type = "non_finite"


class NotPositiveDefiniteError(NumericError):
    error_type = "not_positive_definite"

    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite (non-positive pivot at index {pivot})")
        self.pivot = pivot

    def to_dict(self) -> Dict[str, Any]:
        result = super().to_dict()
        result["pivot"] = self.pivot
        return result


def as_matrix(value: Any, name: str = "matrix") -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array and reject NaN/Inf entries."""
    arr = np.ascontiguousarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got {arr.ndim}-D")
    return ensure_finite(arr, name)


def ensure_finite(arr: np.ndarray, name: str = "result") -> np.ndarray:
    if arr.size and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf entries")
    return arr


def require_rows(z: np.ndarray, minimum: int, name: str = "batch") -> None:
    if z.shape[0] < minimum:
        raise DegenerateError(
            f"{name} needs at least {minimum} rows, got {z.shape[0]}"
        )


def require_same_rows(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"row count mismatch: {x.shape[0]} vs {y.shape[0]}")


def require_square_symmetric(s: np.ndarray, tol: float = 1e-10) -> None:
    if s.shape[0] != s.shape[1]:
        raise ShapeError(f"matrix must be square, got {s.shape[0]}x{s.shape[1]}")
    if s.size and np.max(np.abs(s - s.T)) > tol:
        raise ContractError(f"matrix is not symmetric within {tol:g}")


def require_labels(labels: Any, rows: int, num_classes: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1 or arr.shape[0] != rows:
        raise ShapeError(f"expected {rows} labels, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ContractError("labels must be integers")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ContractError(f"invalid label {int(arr.min())}: labels must be non-negative")
    if num_classes is not None and arr.size and arr.max() >= num_classes:
        raise ContractError(
            f"invalid label {int(arr.max())}: expected labels in [0, {num_classes})"
        )
    return arr


def require_positive(value: float, name: str) -> None:
    if not value > 0:
        raise ConfigError(f"{name} must be > 0, got {value}")


def require_non_negative(value: float, name: str) -> None:
    if not value >= 0:
        raise ConfigError(f"{name} must be >= 0, got {value}")


def require_choice(value: str, choices: Sequence[str], name: str) -> None:
    if value not in choices:
        raise ConfigError(f"{name} must be one of {', '.join(choices)}; got '{value}'")
