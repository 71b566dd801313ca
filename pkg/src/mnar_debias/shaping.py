"""Propensity shaping functions ``f`` and their exponentiated form ``f**alpha``.

A dynamic estimator weights an observed cell by ``1 / f(p_hat)**alpha``.
Admissible ``f`` are increasing on (0, 1] with ``f(0+) = 0``, ``f(1) = 1``,
``f(p) >= p``, and ``p / f(p)`` tending to a positive constant as ``p -> 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, EvaluationError

BUILTIN_KINDS = ("identity", "sine", "log1p", "tanh")

VALIDATION_GRID = np.linspace(1e-4, 1.0, 10_000)
SAME_ORDER_POINTS = (1e-3, 1e-5, 1e-7)
SAME_ORDER_RTOL = 1e-3
BOUNDARY_POINT = 1e-12


@dataclass(frozen=True)
class ShapingFunction:
    kind: str
    fn: Callable[[np.ndarray], np.ndarray]
    same_order_constant: float

    def __call__(self, p_hat):
        return eval_f(self, p_hat)

    def __repr__(self) -> str:
        return f"ShapingFunction({self.kind!r}, C={self.same_order_constant:.6g})"

    @classmethod
    def custom(cls, fn: Callable[[np.ndarray], np.ndarray], name: str = "custom") -> "ShapingFunction":
        """Wrap a user function after checking both design principles."""
        probe = cls(name, fn, float("nan"))
        report = validate_design_principles(probe)
        if not report.passed:
            raise DomainError(f"shaping function {name!r} violates design principles: {report}")
        return cls(name, fn, report.estimated_C)


IDENTITY = ShapingFunction("identity", lambda p: np.asarray(p, dtype=float) * 1.0, 1.0)
SINE = ShapingFunction("sine", lambda p: np.sin(p) / math.sin(1.0), math.sin(1.0))
LOG1P = ShapingFunction("log1p", lambda p: np.log1p(p) / math.log(2.0), math.log(2.0))
TANH = ShapingFunction("tanh", lambda p: np.tanh(p) / math.tanh(1.0), math.tanh(1.0))

_BUILTINS = {s.kind: s for s in (IDENTITY, SINE, LOG1P, TANH)}


def get_shaping(name: str | ShapingFunction) -> ShapingFunction:
    """Look up a built-in shaping function by its config name."""
    if isinstance(name, ShapingFunction):
        return name
    try:
        return _BUILTINS[name]
    except KeyError:
        raise DomainError(f"unknown shaping kind {name!r}; expected one of {BUILTIN_KINDS}") from None


def _check_p(p_hat) -> np.ndarray:
    p = np.asarray(p_hat, dtype=float)
    if not np.all((p > 0.0) & (p <= 1.0)):
        raise DomainError("p_hat must lie in (0, 1]")
    return p


def _check_alpha(alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=float)
    if not np.all((a >= 0.0) & (a <= 1.0)):
        raise DomainError("alpha must lie in [0, 1]")
    return a


def _out(x: np.ndarray):
    return float(x) if np.ndim(x) == 0 else x


def eval_f(fn: ShapingFunction, p_hat):
    """``f(p_hat)``; scalars in, scalars out."""
    p = _check_p(p_hat)
    return _out(np.asarray(fn.fn(p), dtype=float))


def eval_f_alpha(fn: ShapingFunction, p_hat, alpha):
    """``f(p_hat) ** alpha`` with ``alpha`` in [0, 1] (scalar or matrix)."""
    p = _check_p(p_hat)
    a = _check_alpha(alpha)
    return _out(np.power(np.asarray(fn.fn(p), dtype=float), a))


@dataclass(frozen=True)
class DesignReport:
    isotonic: bool
    boundary: bool
    dominates_identity: bool
    same_order: bool
    estimated_C: float

    @property
    def passed(self) -> bool:
        return self.isotonic and self.boundary and self.dominates_identity and self.same_order


def _evaluate_checked(fn: ShapingFunction, p: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        v = np.asarray(fn.fn(p), dtype=float) * np.ones_like(p)
    bad = ~np.isfinite(v)
    if np.any(bad):
        where = float(p[np.argmax(bad)])
        raise EvaluationError(f"shaping function {fn.kind!r} is non-finite at p_hat={where!r}")
    return v


def validate_design_principles(fn: ShapingFunction | str) -> DesignReport:
    """Numerically check monotonicity, boundary values, dominance and same order.

    The same-order constant is read off ``p / f(p)`` at 1e-3, 1e-5 and 1e-7:
    the ratio must settle (relative change below 1e-3 between the last two
    points) and the reported constant is the linear Richardson extrapolation
    of the last two points to ``p = 0``.
    """
    fn = get_shaping(fn)
    grid = VALIDATION_GRID
    values = _evaluate_checked(fn, grid)
    isotonic = bool(np.all(np.diff(values) > 0.0))

    f_one = _evaluate_checked(fn, np.array([1.0]))[0]
    f_zero = _evaluate_checked(fn, np.array([BOUNDARY_POINT]))[0]
    boundary = abs(f_one - 1.0) <= 1e-12 and abs(f_zero) <= 1e-6

    dominates = bool(np.all(values >= grid * (1.0 - 1e-14)))

    pts = np.array(SAME_ORDER_POINTS)
    ratios = pts / _evaluate_checked(fn, pts)
    r1, r2, r3 = ratios
    p2, p3 = pts[1], pts[2]
    estimate = float((r3 * p2 - r2 * p3) / (p2 - p3))
    settled = abs(r3 - r2) <= SAME_ORDER_RTOL * abs(r3) and abs(r2 - r1) <= 10 * SAME_ORDER_RTOL * abs(r2)
    same_order = bool(settled and np.isfinite(estimate) and estimate > 0.0)

    return DesignReport(isotonic, bool(boundary), dominates, same_order, estimate)
