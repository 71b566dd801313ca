"""Ranking metrics for evaluation on a missing-at-random test split."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .core import as_mask, as_values, check_same_shape
from .errors import DegenerateError, DomainError


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise DomainError("scores and labels differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise DomainError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise DegenerateError("AUC needs at least one positive and one negative label")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _dcg(rels: np.ndarray, k: int) -> float:
    top = rels[:k]
    return float(np.sum((2.0**top - 1.0) / np.log2(np.arange(2, top.size + 2))))


def user_ndcg(scores: Sequence[float], relevances: Sequence[float], k: int) -> float | None:
    """NDCG@k of one user, or ``None`` when the user has no relevant item."""
    s = np.asarray(scores, dtype=float)
    r = np.asarray(relevances, dtype=float)
    if not np.any(r > 0):
        return None
    order = np.argsort(-s, kind="stable")
    ideal = _dcg(np.sort(r)[::-1], k)
    return _dcg(r[order], k) / ideal


def ndcg_at_k(user_scores: Sequence[Sequence[float]], user_relevances: Sequence[Sequence[float]],
              k: int = 5) -> tuple[float, list[float]]:
    """Mean NDCG@k over users with at least one relevant item, and the per-user values."""
    if k < 1:
        raise DomainError("k must be >= 1")
    per_user = []
    for s, r in zip(user_scores, user_relevances, strict=True):
        v = user_ndcg(s, r, k)
        if v is not None:
            per_user.append(v)
    if not per_user:
        raise DegenerateError("no user has a relevant item; NDCG is undefined")
    return float(np.mean(per_user)), per_user


def gain(base_metric: float, dynamic_metric: float) -> float:
    """Relative improvement of the dynamic variant over its base estimator."""
    if not base_metric > 0:
        raise DomainError("base metric must be > 0")
    return (dynamic_metric - base_metric) / base_metric


@dataclass(frozen=True)
class EvalResult:
    auc: float
    ndcg_at_k: float
    k: int
    per_user_ndcg: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_predictions(scores, y_true, test_mask, k: int = 5) -> EvalResult:
    """AUC over all test cells and NDCG@k over each user's test items."""
    s = as_values(scores)
    y = as_values(y_true)
    m = as_mask(test_mask)
    check_same_shape(s, y, m.bits)
    a = auc(s[m.bits], y[m.bits])
    rows = [(s[u][m.bits[u]], y[u][m.bits[u]]) for u in range(m.rows) if m.bits[u].any()]
    n, per_user = ndcg_at_k([r[0] for r in rows], [r[1] for r in rows], k)
    return EvalResult(a, n, k, per_user)
