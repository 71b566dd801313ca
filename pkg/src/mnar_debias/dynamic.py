"""Per-cell bias-variance joint optimisation of the dynamic exponent ``alpha``.

For one cell the objective is ``w1 * E_B(h_B(alpha)) + w2 * E_V(h_V(alpha))``
with ``h_B = 1 - p / f(p_hat)**alpha`` and ``h_V = p (1 - p) / f(p_hat)**(2 alpha)``.
With identity metrics and ``p_hat = p`` the minimiser has a closed form; other
metrics go through a grid-seeded golden-section search.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .analytics import BiasVarianceReport, bias_variance_report, h_B, h_V
from .core import MatrixLike, as_values
from .errors import DomainError, EvaluationError, UnsupportedMetricError
from .shaping import ShapingFunction, get_shaping

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
SEED_GRID = np.linspace(0.0, 1.0, 101)


def _logcosh(x):
    x = np.abs(x)
    # log(cosh x) = x + log1p(exp(-2x)) - log 2, stable for large x
    return x + np.log1p(np.exp(-2.0 * x)) - math.log(2.0)


METRICS: dict[str, tuple[Callable, Optional[Callable]]] = {
    "identity": (lambda x: x, lambda y: y),
    "square": (lambda x: np.square(x), lambda y: np.sqrt(y)),
    "logcosh": (_logcosh, lambda y: np.arccosh(np.exp(y))),
}


@dataclass(frozen=True)
class JointObjective:
    w1: float = 1.0
    w2: float = 0.1
    bias_metric: str = "identity"
    variance_metric: str = "identity"

    def __post_init__(self) -> None:
        for name, w in (("w1", self.w1), ("w2", self.w2)):
            if not (math.isfinite(w) and w > 0):
                raise DomainError(f"{name} must be finite and > 0, got {w}")
        for m in (self.bias_metric, self.variance_metric):
            if m not in METRICS:
                raise DomainError(f"unknown penalty metric {m!r}; expected one of {tuple(METRICS)}")

    @property
    def ratio(self) -> float:
        return self.w2 / self.w1

    @property
    def is_identity(self) -> bool:
        return self.bias_metric == "identity" and self.variance_metric == "identity"


def objective_value(obj: JointObjective, shaping: ShapingFunction | str, p_hat, p_true, alpha):
    """Weighted per-cell objective; ``alpha`` may be an array of candidates."""
    e_b = METRICS[obj.bias_metric][0]
    e_v = METRICS[obj.variance_metric][0]
    val = obj.w1 * e_b(h_B(shaping, p_hat, p_true, alpha)) + obj.w2 * e_v(h_V(shaping, p_hat, p_true, alpha))
    return float(val) if np.ndim(val) == 0 else np.asarray(val)


def _closed_form(ratio: float, p: np.ndarray, fp: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.log(2.0 * ratio * (1.0 - p))
        den = np.log(fp)
        raw = num / den
    # den == 0 only when f(p) rounds to 1: the ratio tends to -inf (num > 0) or +inf.
    raw = np.where(den == 0.0, np.where(num > 0.0, -np.inf, np.inf), raw)
    return np.clip(raw, 0.0, 1.0)


def alpha_opt_closed_form(obj: JointObjective, shaping: ShapingFunction | str, p) -> float:
    """Minimiser of ``w1 h_B + w2 h_V`` over [0, 1] when ``p_hat = p``.

    ``clamp(ln(2 (w2/w1) (1 - p)) / ln f(p), 0, 1)``, with ``p = 1`` mapped to 1.
    """
    if not obj.is_identity:
        raise UnsupportedMetricError("closed form holds for identity metrics only; use alpha_opt_numerical")
    if not 0.0 < p <= 1.0:
        raise DomainError(f"p must lie in (0, 1], got {p}")
    if p == 1.0:
        return 1.0
    fn = get_shaping(shaping)
    return float(_closed_form(obj.ratio, np.float64(p), np.float64(fn.fn(np.float64(p)))))


def golden_section(func: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    """Minimise a unimodal ``func`` on ``[lo, hi]`` to bracket width ``tol``."""
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = func(c), func(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = func(d)
    return (a + b) / 2.0


def alpha_opt_numerical(obj: JointObjective, shaping: ShapingFunction | str, p_hat: float, p_true: float,
                        tolerance: float = 1e-8) -> float:
    """Minimise the objective over [0, 1] for any metric pair.

    A 101-point scan picks the best grid cell; golden-section search then
    refines inside the two neighbouring grid intervals.
    """
    if not tolerance > 0:
        raise DomainError("tolerance must be > 0")
    fn = get_shaping(shaping)
    scan = objective_value(obj, fn, p_hat, p_true, SEED_GRID)
    if not np.all(np.isfinite(scan)):
        bad = float(SEED_GRID[np.argmax(~np.isfinite(scan))])
        raise EvaluationError(f"objective is non-finite at alpha={bad}")
    k = int(np.argmin(scan))
    lo = SEED_GRID[max(k - 1, 0)]
    hi = SEED_GRID[min(k + 1, SEED_GRID.size - 1)]
    x = golden_section(lambda a: objective_value(obj, fn, p_hat, p_true, a), lo, hi, tolerance)
    candidates = [(objective_value(obj, fn, p_hat, p_true, x), x), (scan[k], float(SEED_GRID[k]))]
    return float(min(candidates)[1])


def alpha_schedule(obj: JointObjective, shaping: ShapingFunction | str, p_hat_matrix: MatrixLike,
                   assume_accurate: bool = True, p_true: Optional[MatrixLike] = None) -> np.ndarray:
    """Per-cell optimal ``alpha`` from estimated propensities.

    With identity metrics and ``assume_accurate`` the closed form is applied
    with ``p_hat`` standing in for ``p``. Otherwise each distinct
    ``(p_hat, p)`` pair is solved numerically, using ``p_true`` when given.
    """
    fn = get_shaping(shaping)
    ph = as_values(p_hat_matrix, "propensities")
    if obj.is_identity and assume_accurate:
        out = _closed_form(obj.ratio, ph, np.asarray(fn.fn(ph), dtype=float))
        return np.where(ph == 1.0, 1.0, out)
    pt = ph if p_true is None else as_values(p_true)
    pairs = np.stack([ph.ravel(), pt.ravel()], axis=1)
    uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
    solved = np.array([alpha_opt_numerical(obj, fn, a, b) for a, b in uniq])
    return solved[np.ravel(inverse)].reshape(ph.shape)


def variance_cap(obj: JointObjective) -> float:
    """Uniform bound on ``h_V`` at the optimal ``alpha``, over every ``p``."""
    if obj.is_identity:
        return obj.w1 / obj.w2 + 0.25
    e_b = METRICS[obj.bias_metric][0]
    e_v, e_v_inv = METRICS[obj.variance_metric]
    if e_v_inv is None:
        raise UnsupportedMetricError(f"variance metric {obj.variance_metric!r} is not invertible")
    return float(e_v_inv(obj.w1 * e_b(1.0) / obj.w2 + e_v(0.25)))


def schedule_diagnostics(obj: JointObjective, shaping: ShapingFunction | str, family: str, e: MatrixLike,
                         p_hat: MatrixLike, p_true: MatrixLike, e_hat: Optional[MatrixLike] = None) -> BiasVarianceReport:
    """True bias and variance of a dynamic estimator whose schedule was built from ``p_hat``."""
    alpha = alpha_schedule(obj, shaping, p_hat)
    return bias_variance_report(family, e, e_hat, p_true, p_hat, shaping=shaping, alpha=alpha)
