"""Matrix factorisation trained with any estimator as its loss.

The prediction is ``y_hat = sigmoid(u_u . v_i + b_u + b_i + b_0)``; the error
is ``e = (y_hat - y)**2`` and the imputed error ``e_hat = w (y_hat - c)**2``
with ``c`` a constant or, in joint learning, the imputation model's output.
Every linear estimator is ``mean(a * e + b * e_hat)`` for fixed per-cell
coefficient matrices ``a`` and ``b`` (see
:func:`mnar_debias.estimators.linear_coefficients`), which is all the
optimiser needs.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import MatrixLike, as_mask, as_values, check_same_shape
from .dynamic import JointObjective, alpha_schedule
from .errors import DivergenceError, DomainError, EmptyObservationError
from .estimators import alpha_matrix, linear_coefficients, shaped_propensity
from .propensity import PropensityModel
from .shaping import get_shaping
from .simulation import stream

TRAINABLE = ("real", "naive", "eib", "ips", "snips", "dr", "d_ips", "d_dr", "d_snips")
OPTIMIZERS = ("sgd", "adam")
LEARNING_RATES = (0.001, 0.005, 0.01, 0.05)
WEIGHT_DECAYS = (1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
PARAMS = ("user_factors", "item_factors", "user_bias", "item_bias", "global_bias")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class MFModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    global_bias: np.ndarray

    @classmethod
    def init(cls, M: int, N: int, k: int, rng: np.random.Generator, scale: float = 0.1) -> "MFModel":
        return cls(
            rng.normal(scale=scale, size=(M, k)),
            rng.normal(scale=scale, size=(N, k)),
            np.zeros(M),
            np.zeros(N),
            np.zeros(()),
        )

    @property
    def k(self) -> int:
        return self.user_factors.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.user_factors.shape[0], self.item_factors.shape[0]

    def logits(self) -> np.ndarray:
        return (self.user_factors @ self.item_factors.T + self.user_bias[:, None]
                + self.item_bias[None, :] + self.global_bias)

    def predict(self) -> np.ndarray:
        return _sigmoid(self.logits())

    def predict_cells(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        s = (np.einsum("ij,ij->i", self.user_factors[users], self.item_factors[items])
             + self.user_bias[users] + self.item_bias[items] + self.global_bias)
        return _sigmoid(s)

    def params(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in PARAMS]

    def copy(self) -> "MFModel":
        return MFModel(*(np.array(p, copy=True) for p in self.params()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def to_dict(self) -> dict:
        d = {n: np.asarray(getattr(self, n)).tolist() for n in PARAMS}
        d["k"] = self.k
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MFModel":
        return cls(*(np.asarray(d[n], dtype=float) for n in PARAMS))

    def save(self, path: str, metadata: Optional[dict] = None) -> None:
        with open(path, "w") as fh:
            json.dump({"metadata": metadata or {}, "model": self.to_dict()}, fh)

    @classmethod
    def load(cls, path: str) -> "MFModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh)["model"])


def _scatter(index: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    return np.stack([np.bincount(index, weights=rows[:, j], minlength=n) for j in range(rows.shape[1])], axis=1)


def _batch_grads(model: MFModel, users: np.ndarray, items: np.ndarray, g: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients given ``g = dL/dlogit`` for each sampled cell."""
    M, N = model.shape
    return [
        _scatter(users, g[:, None] * model.item_factors[items], M),
        _scatter(items, g[:, None] * model.user_factors[users], N),
        np.bincount(users, weights=g, minlength=M),
        np.bincount(items, weights=g, minlength=N),
        np.asarray(g.sum()),
    ]


@dataclass
class EstimatorLoss:
    """``mean(a * (y_hat - y)**2 + b * w * (y_hat - c)**2)`` over the full matrix.

    ``center`` is a scalar or an ``M x N`` matrix; cells with ``a == 0`` never
    read their label.
    """

    a: np.ndarray
    b: np.ndarray
    y: np.ndarray
    center: np.ndarray
    scale: float = 1.0

    def _cell_grad(self, yh, a, b, y, c):
        # d/dy_hat of the per-cell term, before the sigmoid and the 1/|D|.
        return 2.0 * a * (yh - y) + 2.0 * self.scale * b * (yh - c)

    def terms(self, yh: np.ndarray) -> np.ndarray:
        return self.a * (yh - self.y) ** 2 + self.b * self.scale * (yh - self.center) ** 2

    def value(self, model: MFModel) -> float:
        return math.fsum(self.terms(model.predict()).ravel()) / self.a.size

    def gradient(self, model: MFModel) -> list[np.ndarray]:
        yh = model.predict()
        g = self._cell_grad(yh, self.a, self.b, self.y, self.center) * yh * (1.0 - yh) / self.a.size
        return [g @ model.item_factors, g.T @ model.user_factors, g.sum(axis=1), g.sum(axis=0), np.asarray(g.sum())]

    def batch(self, model: MFModel, users: np.ndarray, items: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Mini-batch estimate of the loss and its gradient (unbiased under uniform cell sampling)."""
        yh = model.predict_cells(users, items)
        a = self.a[users, items]
        b = self.b[users, items]
        y = self.y[users, items]
        c = self.center[users, items] if np.ndim(self.center) else self.center
        n = users.size
        loss = float(np.sum(a * (yh - y) ** 2 + b * self.scale * (yh - c) ** 2)) / n
        g = self._cell_grad(yh, a, b, y, c) * yh * (1.0 - yh) / n
        return loss, _batch_grads(model, users, items, g)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    epochs: int = 30
    batch_size: int = 1024
    loss_family: str = "dr"
    objective: JointObjective = field(default_factory=lambda: JointObjective(1.0, 0.1))
    shaping: str = "log1p"
    seed: int = 0
    k: int = 8
    optimizer: str = "adam"
    init_scale: float = 0.1
    imputation_scale: float = 1.0
    imputation_center: Optional[float] = None
    alpha: object = None
    snips_normalizer: str = "shaped"

    def __post_init__(self) -> None:
        if self.loss_family not in TRAINABLE:
            raise DomainError(f"loss_family must be one of {TRAINABLE}, got {self.loss_family!r}")
        if self.optimizer not in OPTIMIZERS:
            raise DomainError(f"optimizer must be one of {OPTIMIZERS}")
        if not self.learning_rate > 0 or self.weight_decay < 0:
            raise DomainError("learning_rate must be > 0 and weight_decay >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.k < 1:
            raise DomainError("epochs >= 0, batch_size >= 1 and k >= 1 required")
        if isinstance(self.objective, dict):
            self.objective = JointObjective(**self.objective)
        get_shaping(self.shaping)


@dataclass
class TrainTrace:
    steps: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)


def _p_hat_values(p_hat, shape) -> np.ndarray:
    if p_hat is None:
        return np.ones(shape)
    if isinstance(p_hat, PropensityModel):
        p_hat = p_hat.p_hat
    return as_values(p_hat, "propensities")


def loss_coefficients(family: str, mask, p_hat=None, shaping="log1p", alpha=1.0,
                      snips_normalizer: str = "shaped") -> tuple[np.ndarray, np.ndarray]:
    """Coefficient matrices ``(a, b)`` of ``e`` and ``e_hat`` for a realised mask."""
    m = as_mask(mask)
    o = m.as_float()
    shape = m.shape
    if family in ("snips", "d_snips"):
        pv = _p_hat_values(p_hat, shape)
        w = 1.0 / pv if family == "snips" else 1.0 / shaped_propensity(pv, get_shaping(shaping), alpha)
        den = w if (family == "snips" or snips_normalizer == "shaped") else 1.0 / pv
        total = math.fsum((o * den).ravel())
        if not total > 0:
            raise EmptyObservationError("self-normalised loss has a zero weight sum")
        return o * w * (o.size / total), np.zeros(shape)
    if family == "naive":
        if m.observed_count == 0:
            raise EmptyObservationError("naive loss needs observed cells")
        c = linear_coefficients("naive", shape, naive_normalizer=m.observed_count)
    elif family in ("real", "eib"):
        c = linear_coefficients(family, shape)
    else:
        c = linear_coefficients(family, shape, _p_hat_values(p_hat, shape), shaping, alpha)
    return c.at(o)


def _resolve_alpha(cfg: TrainConfig, p_hat: np.ndarray):
    if cfg.alpha is not None:
        return alpha_matrix(cfg.alpha, p_hat.shape)
    if cfg.loss_family.startswith("d_"):
        return alpha_schedule(cfg.objective, cfg.shaping, p_hat)
    return 1.0


def build_loss(y_observed: MatrixLike, mask, p_hat, cfg: TrainConfig, center=None) -> EstimatorLoss:
    """Assemble the training loss for ``cfg.loss_family``.

    ``center`` overrides the imputation center (a scalar or per-cell matrix);
    by default it is ``cfg.imputation_center`` or the mean observed label.
    """
    m = as_mask(mask)
    y = np.where(m.bits, as_values(y_observed), 0.0)
    check_same_shape(y, m.bits)
    if m.observed_count == 0:
        raise EmptyObservationError("training needs at least one observed cell")
    pv = _p_hat_values(p_hat, m.shape)
    alpha = _resolve_alpha(cfg, pv)
    a, b = loss_coefficients(cfg.loss_family, m, pv, cfg.shaping, alpha, cfg.snips_normalizer)
    if center is None:
        center = cfg.imputation_center if cfg.imputation_center is not None else float(y[m.bits].mean())
    return EstimatorLoss(a, b, y, np.asarray(center, dtype=float), cfg.imputation_scale)


class _Optimizer:
    def __init__(self, kind: str, lr: float, weight_decay: float, params: list[np.ndarray]):
        self.kind, self.lr, self.wd = kind, lr, weight_decay
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        for j, (p, g) in enumerate(zip(params, grads)):
            g = g + self.wd * p
            if self.kind == "sgd":
                p -= self.lr * g
                continue
            self.m[j] = 0.9 * self.m[j] + 0.1 * g
            self.v[j] = 0.999 * self.v[j] + 0.001 * g * g
            m_hat = self.m[j] / (1.0 - 0.9**self.t)
            v_hat = self.v[j] / (1.0 - 0.999**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + 1e-8)


def _batches(rng: np.random.Generator, M: int, N: int, batch_size: int):
    order = rng.permutation(M * N)
    for start in range(0, order.size, batch_size):
        idx = order[start:start + batch_size]
        yield idx // N, idx % N


def _fit(model: MFModel, loss: EstimatorLoss, cfg: TrainConfig, rng: np.random.Generator,
         opt: _Optimizer, epoch: int, trace: Optional[TrainTrace]) -> None:
    M, N = model.shape
    params = model.params()
    for b, (users, items) in enumerate(_batches(rng, M, N, cfg.batch_size)):
        value, grads = loss.batch(model, users, items)
        if not math.isfinite(value):
            raise DivergenceError(epoch, b)
        opt.step(params, grads)
        if not model.is_finite():
            raise DivergenceError(epoch, b, "non-finite parameters")
        if trace is not None:
            trace.steps.append((epoch, b, value))


def train(y_observed: MatrixLike, mask, p_hat, cfg: TrainConfig, trace: Optional[TrainTrace] = None) -> MFModel:
    """Mini-batch training of an MF model on the chosen estimator loss.

    Batches are drawn uniformly from all cells so that imputation terms of
    unobserved cells receive gradient. Dynamic families use a static
    ``alpha`` schedule computed once from ``p_hat`` (or ``cfg.alpha``).
    """
    loss = build_loss(y_observed, mask, p_hat, cfg)
    M, N = loss.a.shape
    rng = stream(cfg.seed, 1)
    model = MFModel.init(M, N, cfg.k, stream(cfg.seed, 0), cfg.init_scale)
    opt = _Optimizer(cfg.optimizer, cfg.learning_rate, cfg.weight_decay, model.params())
    for epoch in range(cfg.epochs):
        _fit(model, loss, cfg, rng, opt, epoch, trace)
        if trace is not None:
            trace.epoch_losses.append(loss.value(model))
    return model


@dataclass
class ImputationLoss:
    """Propensity-weighted squared gap between imputed and realised errors.

    ``mean((o / p_hat) * (e_hat - e)**2)`` with ``e = (y_hat - y)**2`` and
    ``e_hat = (y_hat - y_tilde)**2``, differentiated in the imputation
    model's ``y_tilde`` with the prediction ``y_hat`` held fixed.
    """

    weight: np.ndarray
    y: np.ndarray
    y_hat: np.ndarray

    def value(self, imputation: MFModel) -> float:
        yt = imputation.predict()
        gap = (self.y_hat - yt) ** 2 - (self.y_hat - self.y) ** 2
        return math.fsum((self.weight * gap**2).ravel()) / self.weight.size

    def gradient(self, imputation: MFModel) -> list[np.ndarray]:
        yt = imputation.predict()
        gap = (self.y_hat - yt) ** 2 - (self.y_hat - self.y) ** 2
        g = self.weight * 2.0 * gap * (-2.0) * (self.y_hat - yt) * yt * (1.0 - yt) / self.weight.size
        return [g @ imputation.item_factors, g.T @ imputation.user_factors, g.sum(axis=1), g.sum(axis=0),
                np.asarray(g.sum())]

    def batch(self, imputation: MFModel, users, items):
        yt = imputation.predict_cells(users, items)
        yh = self.y_hat[users, items]
        w = self.weight[users, items]
        gap = (yh - yt) ** 2 - (yh - self.y[users, items]) ** 2
        n = users.size
        g = w * 2.0 * gap * (-2.0) * (yh - yt) * yt * (1.0 - yt) / n
        return float(np.sum(w * gap**2)) / n, _batch_grads(imputation, users, items, g)


@dataclass
class JointModels:
    prediction: MFModel
    imputation: MFModel


def train_joint(y_observed: MatrixLike, mask, p_hat, cfg: TrainConfig,
                imputation_cfg: Optional[TrainConfig] = None,
                trace: Optional[TrainTrace] = None) -> JointModels:
    """Alternating (per-epoch) joint learning of prediction and imputation models.

    Each epoch first fits the imputation model to the inverse-propensity
    weighted imputation loss, then fits the prediction model to the DR-type
    loss whose imputed errors are ``(y_hat - y_tilde)**2``.
    """
    if cfg.loss_family not in ("dr", "d_dr"):
        raise DomainError("joint learning supports the dr and d_dr losses")
    imputation_cfg = imputation_cfg or cfg
    m = as_mask(mask)
    pv = _p_hat_values(p_hat, m.shape)
    y = np.where(m.bits, as_values(y_observed), 0.0)
    check_same_shape(y, m.bits)
    if m.observed_count == 0:
        raise EmptyObservationError("training needs at least one observed cell")
    M, N = m.shape
    prediction = MFModel.init(M, N, cfg.k, stream(cfg.seed, 0), cfg.init_scale)
    imputation = MFModel.init(M, N, imputation_cfg.k, stream(imputation_cfg.seed, 2), imputation_cfg.init_scale)
    p_opt = _Optimizer(cfg.optimizer, cfg.learning_rate, cfg.weight_decay, prediction.params())
    i_opt = _Optimizer(imputation_cfg.optimizer, imputation_cfg.learning_rate, imputation_cfg.weight_decay,
                       imputation.params())
    rng = stream(cfg.seed, 1)
    i_rng = stream(imputation_cfg.seed, 3)
    weight = m.as_float() / pv
    base = build_loss(y, m, pv, cfg, center=0.0)
    for epoch in range(cfg.epochs):
        imp_loss = ImputationLoss(weight, y, prediction.predict())
        _fit(imputation, imp_loss, imputation_cfg, i_rng, i_opt, epoch, None)
        pred_loss = EstimatorLoss(base.a, base.b, y, imputation.predict(), 1.0)
        _fit(prediction, pred_loss, cfg, rng, p_opt, epoch, trace)
        if trace is not None:
            trace.epoch_losses.append((pred_loss.value(prediction), imp_loss.value(imputation)))
    return JointModels(prediction, imputation)


def _flat_params(model: MFModel) -> list[tuple[int, tuple]]:
    out = []
    for j, p in enumerate(model.params()):
        for idx in np.ndindex(p.shape):
            out.append((j, idx))
    return out


def gradient_check(model: MFModel, loss, step: float = 1e-5) -> float:
    """Largest relative gap between the analytic gradient and central differences.

    Each component's gap is divided by ``max(|analytic|, |numeric|, floor)``
    where ``floor = 1e-6`` times the largest gradient magnitude, so exact
    zeros are compared on the gradient's own scale.
    """
    analytic = loss.gradient(model)
    work = model.copy()
    params = work.params()
    numeric = [np.zeros_like(p) for p in params]
    for j, idx in _flat_params(work):
        p = params[j]
        orig = p[idx]
        p[idx] = orig + step
        up = loss.value(work)
        p[idx] = orig - step
        down = loss.value(work)
        p[idx] = orig
        numeric[j][idx] = (up - down) / (2.0 * step)
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-300)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6 * scale)
    return float(np.max(np.abs(a - n) / denom))
