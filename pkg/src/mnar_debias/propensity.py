"""Observation-propensity sources: oracle, factorized popularity, logistic biases."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import LabeledMatrix, MatrixLike, as_mask, as_values
from .errors import DomainError, EmptyObservationError

KINDS = ("oracle", "factorized_popularity", "logistic")
DEFAULT_CLIP_FLOOR = 0.05


@dataclass(frozen=True, eq=False)
class PropensityModel:
    kind: str
    clip_floor: float
    p_hat: LabeledMatrix
    parameters: dict = field(default_factory=dict)

    def predict(self) -> LabeledMatrix:
        return self.p_hat

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "clip_floor": self.clip_floor,
            "parameters": {k: np.asarray(v).tolist() for k, v in self.parameters.items()},
        }


def _check_floor(clip_floor: float) -> None:
    if not 0.0 < clip_floor < 1.0:
        raise DomainError(f"clip_floor must lie in (0, 1), got {clip_floor}")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def fit_propensity(mask, kind: str = "factorized_popularity", clip_floor: float = DEFAULT_CLIP_FLOOR,
                   epochs: int = 500, learning_rate: float = 1.0) -> PropensityModel:
    """Estimate propensities from the observation pattern alone.

    ``factorized_popularity``: ``p[u, i] = r_u * c_i / r``, the product of row
    and column observation rates over the global rate, clipped to
    ``[clip_floor, 1]``. ``logistic``: ``sigmoid(b0 + b_u + b_i)`` fitted by
    full-batch gradient descent on the Bernoulli log-likelihood.
    """
    _check_floor(clip_floor)
    m = as_mask(mask)
    if m.observed_count == 0:
        raise EmptyObservationError("cannot fit propensities to an all-zero mask")
    o = m.as_float()
    if kind == "factorized_popularity":
        row = o.mean(axis=1)
        col = o.mean(axis=0)
        glob = o.mean()
        raw = np.outer(row, col) / glob
        p = np.clip(raw, clip_floor, 1.0)
        params = {"row_rate": row, "col_rate": col, "global_rate": glob}
    elif kind == "logistic":
        rate = o.mean()
        b0 = float(np.log(rate / (1.0 - rate))) if rate < 1.0 else 10.0
        bu = np.zeros(m.rows)
        bi = np.zeros(m.cols)
        for _ in range(epochs):
            resid = _sigmoid(b0 + bu[:, None] + bi[None, :]) - o
            b0 -= learning_rate * resid.mean()
            bu -= learning_rate * resid.mean(axis=1)
            bi -= learning_rate * resid.mean(axis=0)
        p = np.clip(_sigmoid(b0 + bu[:, None] + bi[None, :]), clip_floor, 1.0)
        params = {"global_bias": b0, "user_bias": bu, "item_bias": bi}
    elif kind == "oracle":
        raise DomainError("use oracle_propensity(p_true) for the oracle source")
    else:
        raise DomainError(f"unknown propensity kind {kind!r}; expected one of {KINDS}")
    return PropensityModel(kind, clip_floor, LabeledMatrix(p, "propensities"), params)


def oracle_propensity(p_true: MatrixLike) -> PropensityModel:
    """Emit the true propensities unchanged."""
    p = as_values(p_true, "propensities")
    return PropensityModel("oracle", float(p.min()), LabeledMatrix(p, "propensities"))
