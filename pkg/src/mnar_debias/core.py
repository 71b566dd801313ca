"""Shared domain types: labelled matrices, observation masks, error specs.

Every matrix in the toolkit is a dense ``M x N`` float64 array. The role tag
on :class:`LabeledMatrix` only adds validation (propensities must lie in
(0, 1], binary labels in {0, 1}); the data layout never changes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from numpy.typing import ArrayLike

from .errors import DimensionError, DomainError

ROLES = ("generic", "labels", "binary_labels", "predictions", "errors", "propensities")
ERROR_KINDS = ("absolute", "squared")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LabeledMatrix:
    """Immutable ``M x N`` matrix with a role-specific validity check.

    A 1-D input is read as a single row (``1 x N``).
    """

    values: np.ndarray
    role: str = "generic"

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise DomainError(f"unknown matrix role {self.role!r}; expected one of {ROLES}")
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"expected a non-empty 2-D matrix, got shape {np.shape(self.values)}")
        if not np.all(np.isfinite(arr)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
            raise DomainError(f"non-finite cell at {bad}")
        if self.role == "propensities" and not np.all((arr > 0.0) & (arr <= 1.0)):
            bad = tuple(int(i) for i in np.argwhere(~((arr > 0.0) & (arr <= 1.0)))[0])
            raise DomainError(f"propensity cell {bad} = {arr[bad]!r} outside (0, 1]")
        if self.role == "binary_labels" and not np.all((arr == 0.0) | (arr == 1.0)):
            raise DomainError("binary label matrix contains values other than 0 and 1")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)

    def __repr__(self) -> str:
        return f"LabeledMatrix(role={self.role!r}, shape={self.shape})"


MatrixLike = Union[LabeledMatrix, ArrayLike]


def as_values(x: MatrixLike, role: str = "generic") -> np.ndarray:
    """Return the validated float array behind ``x``."""
    if isinstance(x, LabeledMatrix):
        if role == "propensities" and x.role != "propensities":
            return LabeledMatrix(x.values, role).values
        return x.values
    return LabeledMatrix(x, role).values


@dataclass(frozen=True, eq=False)
class ObservationMask:
    """Binary realisation of the observation indicators ``o[u, i]``."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        raw = np.asarray(self.bits)
        if raw.ndim == 1:
            raw = raw[None, :]
        if raw.ndim != 2 or raw.shape[0] < 1 or raw.shape[1] < 1:
            raise DimensionError(f"expected a non-empty 2-D mask, got shape {np.shape(self.bits)}")
        if raw.dtype != np.bool_:
            if not np.all((raw == 0) | (raw == 1)):
                raise DomainError("observation mask must contain only 0/1 values")
            raw = raw == 1
        object.__setattr__(self, "bits", _freeze(np.array(raw, dtype=bool, copy=True)))

    @classmethod
    def full(cls, shape: tuple[int, int]) -> "ObservationMask":
        return cls(np.ones(shape, dtype=bool))

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def observed_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def indices(self) -> np.ndarray:
        """Row-major ``(|O|, 2)`` array of observed ``(u, i)`` pairs."""
        return np.argwhere(self.bits)

    def as_float(self) -> np.ndarray:
        return self.bits.astype(np.float64)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.bits
        return self.bits.astype(dtype)

    def __repr__(self) -> str:
        return f"ObservationMask(shape={self.shape}, observed={self.observed_count})"


def as_mask(x: Union[ObservationMask, ArrayLike]) -> ObservationMask:
    return x if isinstance(x, ObservationMask) else ObservationMask(x)


def check_same_shape(*arrays) -> tuple[int, int]:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise DimensionError(f"shape mismatch: {sorted(shapes)}")
    return shapes.pop()


@dataclass(frozen=True)
class ErrorSpec:
    """How prediction errors and imputed errors are formed.

    ``imputation_scale`` and ``imputation_center`` are the ``w`` and ``gamma``
    of the imputed error ``w * |y_hat - gamma|`` (absolute) or
    ``w * (y_hat - gamma)**2`` (squared).
    """

    kind: str = "squared"
    imputation_scale: float = 1.0
    imputation_center: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ERROR_KINDS:
            raise DomainError(f"error kind must be one of {ERROR_KINDS}, got {self.kind!r}")
        if not (np.isfinite(self.imputation_scale) and self.imputation_scale > 0):
            raise DomainError(f"imputation scale w must be finite and > 0, got {self.imputation_scale}")
        if not np.isfinite(self.imputation_center):
            raise DomainError("imputation center gamma must be finite")


def _distance(a: np.ndarray, b: np.ndarray, kind: str) -> np.ndarray:
    d = a - b
    return np.abs(d) if kind == "absolute" else d * d


def pointwise_error(y_true: MatrixLike, y_pred: MatrixLike, spec: ErrorSpec) -> LabeledMatrix:
    """Cellwise prediction error ``|y_hat - y|`` or ``(y_hat - y)**2``."""
    y = as_values(y_true)
    yh = as_values(y_pred)
    check_same_shape(y, yh)
    return LabeledMatrix(_distance(yh, y, spec.kind), "errors")


def imputed_error(y_pred: MatrixLike, spec: ErrorSpec) -> LabeledMatrix:
    yh = as_values(y_pred)
    dist = _distance(yh, np.float64(spec.imputation_center), spec.kind)
    return LabeledMatrix(spec.imputation_scale * dist, "errors")


def error_deviation(e: MatrixLike, e_hat: MatrixLike) -> LabeledMatrix:
    """``delta = e - e_hat`` cellwise."""
    ev = as_values(e)
    ehv = as_values(e_hat)
    check_same_shape(ev, ehv)
    return LabeledMatrix(ev - ehv, "generic")


Coefficient = Callable[[np.ndarray, np.ndarray], np.ndarray]

_CHECK_GRID = np.linspace(1e-6, 1.0, 257)


def _zero(o: np.ndarray, p_hat: np.ndarray) -> np.ndarray:
    return np.zeros(np.broadcast(o, p_hat).shape)


@dataclass(frozen=True)
class GeneralEstimatorForm:
    """Estimator written as per-cell coefficients of ``e``, ``e_hat`` and a regulariser.

    The estimate is ``mean(f(o, p) * e + g(o, p) * e_hat)`` and the regulariser
    ``mean(h(o, p))``; coefficient callables must accept numpy arrays
    ``o`` (0/1 floats) and ``p_hat`` and broadcast elementwise.
    """

    f_coeff: Coefficient
    g_coeff: Coefficient = _zero
    h_coeff: Coefficient = _zero
    reg_weight: float = 0.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.reg_weight) and self.reg_weight >= 0):
            raise DomainError(f"regulariser weight must be finite and >= 0, got {self.reg_weight}")
        at_zero = np.asarray(self.f_coeff(np.zeros_like(_CHECK_GRID), _CHECK_GRID), dtype=float)
        if np.any(at_zero != 0.0):
            raise DomainError("f(0, p_hat) must vanish: unobserved cells cannot carry e")
