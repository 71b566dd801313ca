import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import ndcg_score, roc_auc_score

from mnar_debias.errors import DegenerateError, DomainError
from mnar_debias.metrics import auc, evaluate_predictions, gain, ndcg_at_k


def test_auc_examples():
    assert auc([0.9, 0.1], [1, 0]) == 1.0
    assert auc([0.5, 0.5], [1, 0]) == 0.5
    assert auc([0.1, 0.9], [1, 0]) == 0.0


def test_auc_single_class():
    with pytest.raises(DegenerateError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(DomainError):
        auc([0.1, 0.2], [1, 2])


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 60))
@settings(max_examples=50, deadline=None)
def test_auc_matches_reference(seed, n):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    scores = np.round(rng.random(n), 1)  # coarse rounding creates ties
    assert auc(scores, labels) == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)


def test_ndcg_examples():
    mean, _ = ndcg_at_k([[0.9, 0.1]], [[1, 0]], 5)
    assert mean == 1.0
    mean, _ = ndcg_at_k([[0.9, 0.1]], [[0, 1]], 5)
    assert mean == pytest.approx(1.0 / math.log2(3.0), rel=1e-14)
    assert mean == pytest.approx(0.63093, abs=5e-6)
    mean, per_user = ndcg_at_k([[0.9, 0.1], [0.2, 0.3], [0.5, 0.4]], [[0, 1], [0, 0], [0, 0]], 5)
    assert per_user == [pytest.approx(1.0 / math.log2(3.0))]


def test_ndcg_all_skipped():
    with pytest.raises(DegenerateError):
        ndcg_at_k([[0.1, 0.2]], [[0, 0]], 5)


@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 8))
@settings(max_examples=50, deadline=None)
def test_ndcg_matches_reference(seed, k):
    rng = np.random.default_rng(seed)
    scores = rng.random((1, 10))
    rel = rng.integers(0, 2, (1, 10))
    rel[0, 0] = 1
    # For binary relevance 2**rel - 1 == rel, so the exponential gain coincides with the linear one.
    mean, _ = ndcg_at_k(scores, rel, k)
    assert mean == pytest.approx(ndcg_score(rel, scores, k=k), abs=1e-12)


def test_gain_examples():
    assert gain(0.7539, 0.7777) == pytest.approx(0.0316, abs=5e-5)
    assert gain(0.6624, 0.6767) == pytest.approx(0.0216, abs=5e-5)
    assert gain(0.7, 0.7) == 0.0
    with pytest.raises(DomainError):
        gain(0.0, 0.5)


def test_evaluate_predictions():
    y = np.array([[1, 0, 1], [0, 1, 0]], dtype=float)
    s = np.array([[0.9, 0.1, 0.8], [0.2, 0.7, 0.3]])
    r = evaluate_predictions(s, y, np.ones((2, 3), bool))
    assert r.auc == 1.0 and r.ndcg_at_k == 1.0 and r.k == 5
    assert 0 <= r.to_dict()["auc"] <= 1
