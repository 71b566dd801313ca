"""Estimators of the full-data prediction inaccuracy from a partially observed matrix.

All sums run over the flattened row-major matrix through :func:`math.fsum`,
so results are exactly rounded and independent of platform or summation order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    ErrorSpec,
    GeneralEstimatorForm,
    MatrixLike,
    ObservationMask,
    as_mask,
    as_values,
    check_same_shape,
)
from .errors import DimensionError, DomainError, EmptyObservationError, EvaluationError
from .shaping import IDENTITY, ShapingFunction, get_shaping

FAMILIES = ("real", "naive", "eib", "ips", "snips", "dr", "d_ips", "d_dr", "d_snips", "general")
DYNAMIC_FAMILIES = ("d_ips", "d_dr", "d_snips")
SELF_NORMALIZED = ("snips", "d_snips")
NEEDS_IMPUTATION = ("eib", "dr", "d_dr")
NEEDS_PROPENSITY = ("ips", "snips", "dr", "d_ips", "d_dr", "d_snips")


def _fmean(x: np.ndarray) -> float:
    return math.fsum(np.ravel(x)) / x.size


def _fsum(x: np.ndarray) -> float:
    return math.fsum(np.ravel(x))


def alpha_matrix(alpha, shape: tuple[int, int]) -> np.ndarray:
    """Broadcast ``alpha`` to a full per-cell matrix and check it lies in [0, 1]."""
    a = np.asarray(alpha, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim == 2 and a.shape != shape:
        raise DimensionError(f"alpha shape {a.shape} does not match data shape {shape}")
    a = np.broadcast_to(a, shape).astype(float)
    if not np.all((a >= 0.0) & (a <= 1.0)):
        raise DomainError("alpha cells must lie in [0, 1]")
    return a


def shaped_propensity(p_hat: np.ndarray, shaping: ShapingFunction, alpha) -> np.ndarray:
    """Cellwise ``f(p_hat) ** alpha``."""
    return np.power(np.asarray(shaping.fn(p_hat), dtype=float), alpha_matrix(alpha, p_hat.shape))


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to evaluate and with what auxiliary parameters.

    ``naive_normalizer`` fixes the naive denominator at a constant instead of
    the realised ``|O|``; the Monte Carlo and enumeration oracles use it to
    reproduce the fixed-``|O|`` algebra of the closed-form naive moments.
    ``snips_normalizer`` selects the D-SNIPS denominator: ``"shaped"`` sums
    ``o / f**alpha`` while ``"propensity"`` sums ``o / p_hat``.
    """

    family: str
    error_spec: ErrorSpec = field(default_factory=ErrorSpec)
    shaping: ShapingFunction = IDENTITY
    alpha: object = 1.0
    general_form: Optional[GeneralEstimatorForm] = None
    naive_normalizer: Optional[float] = None
    snips_normalizer: str = "shaped"

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise DomainError(f"unknown estimator family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "shaping", get_shaping(self.shaping))
        if self.family == "general" and self.general_form is None:
            raise DomainError("family 'general' needs a general_form")
        if self.snips_normalizer not in ("shaped", "propensity"):
            raise DomainError(f"snips_normalizer must be 'shaped' or 'propensity', got {self.snips_normalizer!r}")
        if self.naive_normalizer is not None and not self.naive_normalizer > 0:
            raise DomainError("naive_normalizer must be positive")
        a = np.asarray(self.alpha, dtype=float)
        if not np.all((a >= 0.0) & (a <= 1.0)):
            raise DomainError("alpha cells must lie in [0, 1]")


def eval_real(e: MatrixLike) -> float:
    """Full-information inaccuracy: mean error over every cell."""
    return _fmean(as_values(e))


def eval_naive(e: MatrixLike, mask, normalizer: Optional[float] = None) -> float:
    """Mean error over observed cells.

    ``normalizer`` replaces the realised ``|O|`` when given.
    """
    ev = as_values(e)
    m = as_mask(mask)
    check_same_shape(ev, m.bits)
    count = m.observed_count if normalizer is None else normalizer
    if count <= 0:
        raise EmptyObservationError("naive estimator is undefined with no observed cells")
    return _fsum(np.where(m.bits, ev, 0.0)) / count


def eval_eib(e: MatrixLike, e_hat: MatrixLike, mask) -> float:
    ev, ehv = as_values(e), as_values(e_hat)
    m = as_mask(mask)
    check_same_shape(ev, ehv, m.bits)
    return _fmean(np.where(m.bits, ev, ehv))


def eval_ips(e: MatrixLike, p_hat: MatrixLike, mask) -> float:
    ev, pv = as_values(e), as_values(p_hat, "propensities")
    m = as_mask(mask)
    check_same_shape(ev, pv, m.bits)
    o = m.as_float()
    return _fmean(o / pv * ev)


def eval_dr(e: MatrixLike, e_hat: MatrixLike, p_hat: MatrixLike, mask) -> float:
    ev, ehv, pv = as_values(e), as_values(e_hat), as_values(p_hat, "propensities")
    m = as_mask(mask)
    check_same_shape(ev, ehv, pv, m.bits)
    o = m.as_float()
    return _fmean(ehv + o / pv * (ev - ehv))


def _self_normalized(ev: np.ndarray, weights: np.ndarray, m: ObservationMask) -> float:
    o = m.as_float()
    denom = _fsum(o * weights)
    if not denom > 0.0:
        raise EmptyObservationError("self-normalised estimator has a zero weight sum")
    return _fsum(o * weights * ev) / denom


def eval_snips(e: MatrixLike, p_hat: MatrixLike, mask) -> float:
    """Self-normalised IPS: inverse-propensity weighted mean over observed cells."""
    ev, pv = as_values(e), as_values(p_hat, "propensities")
    m = as_mask(mask)
    check_same_shape(ev, pv, m.bits)
    return _self_normalized(ev, 1.0 / pv, m)


def eval_dynamic(
    family: str,
    e: MatrixLike,
    e_hat: Optional[MatrixLike],
    p_hat: MatrixLike,
    mask,
    shaping: ShapingFunction | str,
    alpha,
    snips_normalizer: str = "shaped",
) -> float:
    """D-IPS, D-DR or D-SNIPS: inverse weights ``1 / f(p_hat)**alpha``."""
    if family not in DYNAMIC_FAMILIES:
        raise DomainError(f"not a dynamic family: {family!r}")
    shaping = get_shaping(shaping)
    ev, pv = as_values(e), as_values(p_hat, "propensities")
    m = as_mask(mask)
    check_same_shape(ev, pv, m.bits)
    fa = shaped_propensity(pv, shaping, alpha)
    o = m.as_float()
    if family == "d_ips":
        return _fmean(o / fa * ev)
    if family == "d_snips":
        if snips_normalizer == "shaped":
            return _self_normalized(ev, 1.0 / fa, m)
        denom = _fsum(o / pv)
        if not denom > 0.0:
            raise EmptyObservationError("self-normalised estimator has a zero weight sum")
        return _fsum(o / fa * ev) / denom
    if e_hat is None:
        raise DomainError("d_dr needs imputed errors")
    ehv = as_values(e_hat)
    check_same_shape(ev, ehv)
    return _fmean(ehv + o / fa * (ev - ehv))


@dataclass(frozen=True)
class GeneralEstimate:
    est_value: float
    reg_value: float
    total: float


def _coefficient(fn, o: np.ndarray, p: np.ndarray, name: str) -> np.ndarray:
    with np.errstate(all="ignore"):
        c = np.asarray(fn(o, p), dtype=float) * np.ones_like(p)
    bad = ~np.isfinite(c)
    if np.any(bad):
        cell = tuple(int(i) for i in np.argwhere(bad)[0])
        raise EvaluationError(f"coefficient {name} is non-finite at cell {cell}")
    return c


def eval_general(form: GeneralEstimatorForm, e: MatrixLike, e_hat: MatrixLike, p_hat: MatrixLike, mask) -> GeneralEstimate:
    """Estimate plus weighted regulariser for an arbitrary coefficient form."""
    ev, ehv, pv = as_values(e), as_values(e_hat), as_values(p_hat, "propensities")
    m = as_mask(mask)
    check_same_shape(ev, ehv, pv, m.bits)
    o = m.as_float()
    f = _coefficient(form.f_coeff, o, pv, "f")
    g = _coefficient(form.g_coeff, o, pv, "g")
    h = _coefficient(form.h_coeff, o, pv, "h")
    est = _fmean(f * ev + g * ehv)
    reg = _fmean(h)
    return GeneralEstimate(est, reg, est + form.reg_weight * reg)


def evaluate(spec: EstimatorSpec, e, e_hat=None, p_hat=None, mask=None) -> float:
    """Dispatch on ``spec.family``; the ``general`` family returns its total."""
    fam = spec.family
    if fam == "real":
        return eval_real(e)
    if mask is None:
        raise DomainError(f"family {fam!r} needs an observation mask")
    if fam in NEEDS_IMPUTATION and e_hat is None:
        raise DomainError(f"family {fam!r} needs imputed errors")
    if fam in NEEDS_PROPENSITY and p_hat is None:
        raise DomainError(f"family {fam!r} needs propensities")
    if fam == "naive":
        return eval_naive(e, mask, spec.naive_normalizer)
    if fam == "eib":
        return eval_eib(e, e_hat, mask)
    if fam == "ips":
        return eval_ips(e, p_hat, mask)
    if fam == "snips":
        return eval_snips(e, p_hat, mask)
    if fam == "dr":
        return eval_dr(e, e_hat, p_hat, mask)
    if fam in DYNAMIC_FAMILIES:
        return eval_dynamic(fam, e, e_hat, p_hat, mask, spec.shaping, spec.alpha, spec.snips_normalizer)
    if p_hat is None:
        p_hat = np.ones(np.shape(as_values(e)))
    return eval_general(spec.general_form, e, e if e_hat is None else e_hat, p_hat, mask).total


@dataclass(frozen=True)
class LinearCoefficients:
    """Per-cell coefficients of a linear estimator, affine in ``o``.

    The estimate is ``mean((a0 + a1*o) * e + (b0 + b1*o) * e_hat)``.
    """

    a0: np.ndarray
    a1: np.ndarray
    b0: np.ndarray
    b1: np.ndarray

    def at(self, o: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Coefficient matrices on ``e`` and ``e_hat`` for a realised mask."""
        return self.a0 + self.a1 * o, self.b0 + self.b1 * o


def linear_coefficients(
    family: str,
    shape: tuple[int, int],
    p_hat=None,
    shaping: ShapingFunction | str = IDENTITY,
    alpha=1.0,
    naive_normalizer: Optional[float] = None,
) -> LinearCoefficients:
    """Affine-in-``o`` coefficients for every linear family.

    Self-normalised families are ratios and have no such form; the naive
    estimator is linear only once its normalizer is fixed.
    """
    zero = np.zeros(shape)
    one = np.ones(shape)
    if family == "real":
        return LinearCoefficients(one, zero, zero, zero)
    if family == "naive":
        if naive_normalizer is None:
            raise DomainError("naive estimator is linear in o only with a fixed normalizer")
        return LinearCoefficients(zero, one * (zero.size / naive_normalizer), zero, zero)
    if family == "eib":
        return LinearCoefficients(zero, one, one, -one)
    if p_hat is None:
        raise DomainError(f"family {family!r} needs propensities")
    pv = as_values(p_hat, "propensities")
    if family in ("ips", "dr"):
        inv = 1.0 / pv
    elif family in ("d_ips", "d_dr"):
        inv = 1.0 / shaped_propensity(pv, get_shaping(shaping), alpha)
    else:
        raise DomainError(f"family {family!r} has no linear coefficient form")
    if family in ("ips", "d_ips"):
        return LinearCoefficients(zero, inv, zero, zero)
    return LinearCoefficients(zero, inv, one, -inv)


def batch_evaluate(spec: EstimatorSpec, e, e_hat, p_hat, masks: np.ndarray) -> np.ndarray:
    """Evaluate one estimator on a stack of masks of shape ``(R, M, N)``.

    Vectorised counterpart of :func:`evaluate` used by the Monte Carlo
    harness; returns ``R`` estimates, with ``nan`` where a ratio estimator
    has an empty denominator.
    """
    ev = as_values(e)
    shape = ev.shape
    masks = np.asarray(masks, dtype=bool)
    if masks.shape[1:] != shape:
        raise DimensionError(f"mask stack shape {masks.shape} does not match data shape {shape}")
    flat = masks.reshape(masks.shape[0], -1).astype(np.float64)
    size = ev.size
    fam = spec.family
    ehv = as_values(e_hat) if e_hat is not None else np.zeros(shape)

    if fam in SELF_NORMALIZED or (fam == "naive" and spec.naive_normalizer is None):
        if fam == "naive":
            w = np.ones(shape)
            w_den = w
        else:
            pv = as_values(p_hat, "propensities")
            if fam == "snips":
                w = 1.0 / pv
                w_den = w
            else:
                w = 1.0 / shaped_propensity(pv, spec.shaping, spec.alpha)
                w_den = w if spec.snips_normalizer == "shaped" else 1.0 / pv
        num = flat @ (w * ev).ravel()
        den = flat @ w_den.ravel()
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)

    if fam == "general":
        form = spec.general_form
        pv = as_values(p_hat, "propensities") if p_hat is not None else np.ones(shape)
        out = np.empty(masks.shape[0])
        for r in range(masks.shape[0]):
            out[r] = eval_general(form, ev, ehv, pv, masks[r]).total
        return out

    c = linear_coefficients(fam, shape, p_hat, spec.shaping, spec.alpha, spec.naive_normalizer)
    const = _fsum(c.a0 * ev + c.b0 * ehv)
    slope = (c.a1 * ev + c.b1 * ehv).ravel()
    return (const + flat @ slope) / size
