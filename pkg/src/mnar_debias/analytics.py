"""Closed-form moments, tail bounds and generalization bounds of the estimators.

Every formula here is the exact expectation/variance over independent
Bernoulli(p) observation indicators, given the true propensities ``p``.
Bias is reported as ``|L_real - E[L]|`` and variance as ``Var[L]``; both are
written as ``(1/|D|) |sum B * z|`` and ``(1/|D|^2) sum V * z^2`` with ``z = e``
or ``z = e - e_hat`` and per-cell factors ``B`` and ``V``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .core import MatrixLike, as_values, check_same_shape
from .errors import DegenerateError, DomainError, EmptyObservationError
from .estimators import alpha_matrix
from .shaping import IDENTITY, ShapingFunction, get_shaping

CLOSED_FORM_FAMILIES = ("naive", "eib", "ips", "dr", "d_ips", "d_dr")


def _fsum(x) -> float:
    return math.fsum(np.ravel(x))


def _scalar_or_array(x: np.ndarray):
    return float(x) if np.ndim(x) == 0 else x


def _check_true_p(p_true) -> np.ndarray:
    p = np.asarray(p_true, dtype=float)
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise DomainError("true propensities must lie in [0, 1]")
    return p


def _shaped(shaping, p_hat, alpha) -> np.ndarray:
    p = np.asarray(p_hat, dtype=float)
    if not np.all((p > 0.0) & (p <= 1.0)):
        raise DomainError("p_hat must lie in (0, 1]")
    a = np.asarray(alpha, dtype=float)
    if not np.all((a >= 0.0) & (a <= 1.0)):
        raise DomainError("alpha must lie in [0, 1]")
    return np.power(np.asarray(get_shaping(shaping).fn(p), dtype=float), a)


def h_B(shaping: ShapingFunction | str, p_hat, p_true, alpha):
    """Per-cell bias factor ``1 - p / f(p_hat)**alpha`` of a dynamic estimator."""
    p = _check_true_p(p_true)
    return _scalar_or_array(1.0 - p / _shaped(shaping, p_hat, alpha))


def h_V(shaping: ShapingFunction | str, p_hat, p_true, alpha):
    """Per-cell variance factor ``p (1 - p) / f(p_hat)**(2 alpha)``."""
    p = _check_true_p(p_true)
    return _scalar_or_array(p * (1.0 - p) / _shaped(shaping, p_hat, alpha) ** 2)


@dataclass(frozen=True)
class BiasVarianceReport:
    estimator: str
    bias: float
    variance: float
    expected_value: float
    per_cell_bias_factor: np.ndarray
    per_cell_variance_factor: np.ndarray

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_cell_bias_factor"] = self.per_cell_bias_factor.tolist()
        d["per_cell_variance_factor"] = self.per_cell_variance_factor.tolist()
        return d


def _factors(
    family: str,
    p: np.ndarray,
    p_hat: Optional[np.ndarray],
    mask_size: Optional[float],
    shaping,
    alpha,
    naive_convention: str,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Per-cell (bias factor, variance factor, uses_delta) for a family."""
    size = p.size
    if family == "naive":
        if mask_size is None:
            raise DomainError("naive moments need the observed count |O|")
        if mask_size <= 0:
            raise EmptyObservationError("naive moments are undefined for |O| = 0")
        if naive_convention == "scaled":
            bias_f = 1.0 - size / mask_size * p
        elif naive_convention == "unscaled":
            # (1/|O|)|sum (1-p) e| rewritten over 1/|D|.
            bias_f = (1.0 - p) * size / mask_size
        else:
            raise DomainError(f"naive_convention must be 'scaled' or 'unscaled', got {naive_convention!r}")
        return bias_f, p * (1.0 - p) * (size / mask_size) ** 2, False
    if family == "eib":
        return 1.0 - p, p * (1.0 - p), True
    if p_hat is None:
        raise DomainError(f"family {family!r} needs p_hat")
    if family in ("ips", "dr"):
        return 1.0 - p / p_hat, p * (1.0 - p) / p_hat**2, family == "dr"
    if family in ("d_ips", "d_dr"):
        fa = _shaped(shaping, p_hat, alpha_matrix(alpha, p_hat.shape))
        return 1.0 - p / fa, p * (1.0 - p) / fa**2, family == "d_dr"
    raise DomainError(f"no closed form for family {family!r}; expected one of {CLOSED_FORM_FAMILIES}")


def bias_variance_report(
    family: str,
    e: MatrixLike,
    e_hat: Optional[MatrixLike] = None,
    p_true: Optional[MatrixLike] = None,
    p_hat: Optional[MatrixLike] = None,
    mask_size: Optional[float] = None,
    shaping: ShapingFunction | str = IDENTITY,
    alpha=1.0,
    naive_convention: str = "scaled",
) -> BiasVarianceReport:
    """Bias, variance and signed expectation of one estimator in closed form."""
    if p_true is None:
        raise DomainError("closed-form moments need the true propensities")
    ev = as_values(e)
    p = _check_true_p(as_values(p_true))
    ph = as_values(p_hat, "propensities") if p_hat is not None else None
    check_same_shape(ev, p, *([ph] if ph is not None else []))
    bias_f, var_f, uses_delta = _factors(family, p, ph, mask_size, shaping, alpha, naive_convention)
    if uses_delta:
        if e_hat is None:
            raise DomainError(f"family {family!r} needs imputed errors")
        ehv = as_values(e_hat)
        check_same_shape(ev, ehv)
        z = ev - ehv
    else:
        z = ev
    size = ev.size
    signed = _fsum(bias_f * z) / size
    if family == "naive" and naive_convention == "unscaled":
        expected = _fsum(p * ev) / mask_size
    else:
        expected = _fsum(ev) / size - signed
    variance = _fsum(var_f * z * z) / size**2
    return BiasVarianceReport(family, abs(signed), variance, expected, bias_f, var_f)


def closed_form_bias(family: str, e, e_hat=None, p_true=None, p_hat=None, mask_size=None,
                     shaping=IDENTITY, alpha=1.0, naive_convention: str = "scaled") -> float:
    return bias_variance_report(family, e, e_hat, p_true, p_hat, mask_size, shaping, alpha, naive_convention).bias


def closed_form_variance(family: str, e, e_hat=None, p_true=None, p_hat=None, mask_size=None,
                         shaping=IDENTITY, alpha=1.0) -> float:
    return bias_variance_report(family, e, e_hat, p_true, p_hat, mask_size, shaping, alpha).variance


def expected_value(family: str, e, e_hat=None, p_true=None, p_hat=None, mask_size=None,
                   shaping=IDENTITY, alpha=1.0) -> float:
    """Signed ``E_O[L]`` of a linear estimator."""
    return bias_variance_report(family, e, e_hat, p_true, p_hat, mask_size, shaping, alpha).expected_value


def aggregate_objective(w1: float, w2: float, family: str, e, e_hat=None, p_true=None, p_hat=None,
                        mask_size=None, shaping=IDENTITY, alpha=1.0) -> float:
    """Whole-estimator ``w1 * Bias + w2 * Var``, for inspecting a per-cell alpha schedule."""
    r = bias_variance_report(family, e, e_hat, p_true, p_hat, mask_size, shaping, alpha)
    return w1 * r.bias + w2 * r.variance


def _check_rho(rho: float) -> None:
    if not 0.0 < rho < 1.0:
        raise DomainError(f"confidence parameter rho must lie in (0, 1), got {rho}")


def _hoeffding(z: np.ndarray, fa: np.ndarray, log_term: float, denom: float) -> float:
    return math.sqrt(log_term / denom * _fsum((z / fa) ** 2))


def tail_bound(family: str, e_or_delta: MatrixLike, p_hat: MatrixLike, shaping=IDENTITY, alpha=1.0,
               rho: float = 0.05, dr_denominator: str = "squared") -> float:
    """Hoeffding deviation bound ``|L - E[L]| <= t`` holding with probability ``1 - rho``.

    ``dr_denominator="linear"`` selects the looser D-DR variant that divides
    by ``2|D|`` instead of ``2|D|^2``.
    """
    if family not in ("d_ips", "d_dr"):
        raise DomainError(f"tail bounds are defined for d_ips and d_dr, got {family!r}")
    if dr_denominator not in ("squared", "linear"):
        raise DomainError("dr_denominator must be 'squared' or 'linear'")
    _check_rho(rho)
    z = as_values(e_or_delta)
    ph = as_values(p_hat, "propensities")
    check_same_shape(z, ph)
    fa = _shaped(shaping, ph, alpha_matrix(alpha, ph.shape))
    size = z.size
    denom = 2.0 * size if (family == "d_dr" and dr_denominator == "linear") else 2.0 * size**2
    return _hoeffding(z, fa, math.log(2.0 / rho), denom)


@dataclass(frozen=True)
class BoundReport:
    rho: float
    hypothesis_count: int
    point_estimate: float
    tail_bound: float
    bias_term: float
    variance_term: float
    generalization_bound: float

    def to_dict(self) -> dict:
        return asdict(self)


def generalization_bound(
    family: str,
    point_estimate: float,
    z_minus: MatrixLike,
    z_plus: MatrixLike,
    p_true: MatrixLike,
    p_hat: MatrixLike,
    shaping=IDENTITY,
    alpha=1.0,
    rho: float = 0.05,
    hypothesis_count: int = 1,
) -> BoundReport:
    """Upper bound on the true inaccuracy of the best hypothesis.

    ``z_minus`` are the errors (D-IPS) or error deviations (D-DR) of the
    optimal hypothesis, ``z_plus`` those of the hypothesis maximising
    ``sum (z / f**alpha)**2`` over the hypothesis space; both are supplied
    by the caller.
    """
    if family not in ("d_ips", "d_dr"):
        raise DomainError(f"generalization bounds are defined for d_ips and d_dr, got {family!r}")
    if int(hypothesis_count) < 1:
        raise DomainError("hypothesis_count must be >= 1")
    _check_rho(rho)
    zm, zp = as_values(z_minus), as_values(z_plus)
    p = _check_true_p(as_values(p_true))
    ph = as_values(p_hat, "propensities")
    check_same_shape(zm, zp, p, ph)
    fa = _shaped(shaping, ph, alpha_matrix(alpha, ph.shape))
    size = zm.size
    bias_term = _fsum(np.abs((1.0 - p / fa) * zm)) / size
    variance_term = _hoeffding(zp, fa, math.log(2.0 * hypothesis_count / rho), 2.0 * size**2)
    tb = _hoeffding(zp, fa, math.log(2.0 / rho), 2.0 * size**2)
    total = point_estimate + bias_term + variance_term
    return BoundReport(rho, int(hypothesis_count), float(point_estimate), tb, bias_term, variance_term, total)


@dataclass(frozen=True)
class RegularizerAnalysis:
    n: int
    cov: float
    var_reg: float
    lambda_opt: float
    reducible: bool
    cov_standard_error: float

    def to_dict(self) -> dict:
        return asdict(self)


def regularizer_analysis(est_samples: Sequence[float], reg_samples: Sequence[float]) -> RegularizerAnalysis:
    """Sample covariance of estimator and regulariser, and the variance-optimal weight.

    ``lambda_opt = -Cov / Var[reg]``; a positive weight can only reduce the
    variance when ``Cov < 0``.
    """
    x = np.asarray(est_samples, dtype=float)
    y = np.asarray(reg_samples, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("sample sequences must be 1-D and of equal length")
    n = x.size
    if n < 2:
        raise DegenerateError("need at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    cov = math.fsum(dx * dy) / (n - 1)
    var_reg = math.fsum(dy * dy) / (n - 1)
    if var_reg == 0.0:
        if cov != 0.0:
            raise DegenerateError("regulariser has zero variance but nonzero covariance")
        lam = 0.0
    else:
        lam = -cov / var_reg
    se = float(np.std(dx * dy, ddof=1) / math.sqrt(n))
    return RegularizerAnalysis(n, cov, var_reg, lam, cov < 0.0, se)
