import numpy as np
import pytest

from mnar_debias.core import (ErrorSpec, GeneralEstimatorForm, LabeledMatrix, ObservationMask, as_mask,
                              check_same_shape, error_deviation, imputed_error, pointwise_error)
from mnar_debias.errors import DimensionError, DomainError


def test_vector_becomes_single_row():
    m = LabeledMatrix([1.0, 2.0])
    assert m.shape == (1, 2)
    assert m.rows == 1 and m.cols == 2 and m.size == 2


def test_values_are_read_only():
    m = LabeledMatrix([[1.0, 2.0]])
    with pytest.raises(ValueError):
        np.asarray(m)[0, 0] = 5.0


@pytest.mark.parametrize("bad", [[[np.nan]], [[np.inf, 1.0]]])
def test_non_finite_rejected(bad):
    with pytest.raises(DomainError):
        LabeledMatrix(bad)


def test_empty_rejected():
    with pytest.raises(DimensionError):
        LabeledMatrix(np.zeros((0, 3)))


@pytest.mark.parametrize("p", [0.0, 1.5, -0.1])
def test_propensity_range(p):
    with pytest.raises(DomainError):
        LabeledMatrix([[0.5, p]], "propensities")


def test_propensity_one_allowed():
    assert LabeledMatrix([[1.0, 0.01]], "propensities").shape == (1, 2)


def test_binary_labels_checked():
    with pytest.raises(DomainError):
        LabeledMatrix([[0.0, 0.5]], "binary_labels")


def test_unknown_role():
    with pytest.raises(DomainError):
        LabeledMatrix([[1.0]], "weights")


def test_mask_counts_bits():
    m = ObservationMask([[1, 0, 1], [0, 0, 1]])
    assert m.observed_count == 3
    assert m.indices.tolist() == [[0, 0], [0, 2], [1, 2]]
    assert ObservationMask.full((2, 2)).observed_count == 4


def test_mask_rejects_non_binary():
    with pytest.raises(DomainError):
        ObservationMask([[0, 2]])


def test_as_mask_passthrough():
    m = ObservationMask([[True, False]])
    assert as_mask(m) is m


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        check_same_shape(np.zeros((2, 2)), np.zeros((2, 3)))


@pytest.mark.parametrize("y, yh, kind, expected", [
    (1.0, 1.0, "squared", 0.0),
    (0.0, 0.5, "squared", 0.25),
    (1.0, 0.2, "absolute", 0.8),
])
def test_pointwise_error(y, yh, kind, expected):
    e = pointwise_error([[y]], [[yh]], ErrorSpec(kind))
    assert np.asarray(e)[0, 0] == pytest.approx(expected, abs=1e-15)
    assert e.role == "errors"


@pytest.mark.parametrize("w, gamma, yh, kind, expected", [
    (3.0, 0.4, 0.4, "squared", 0.0),
    (1.0, 0.5, 1.0, "squared", 0.25),
    (2.0, 0.0, 0.5, "absolute", 1.0),
])
def test_imputed_error(w, gamma, yh, kind, expected):
    e_hat = imputed_error([[yh]], ErrorSpec(kind, w, gamma))
    assert np.asarray(e_hat)[0, 0] == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("e, e_hat, expected", [(0.7, 0.7, 0.0), (1.0, 0.4, 0.6), (0.0, 0.3, -0.3)])
def test_error_deviation(e, e_hat, expected):
    assert np.asarray(error_deviation([[e]], [[e_hat]]))[0, 0] == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("kwargs", [{"kind": "huber"}, {"imputation_scale": 0.0}, {"imputation_center": np.nan}])
def test_error_spec_validation(kwargs):
    with pytest.raises(DomainError):
        ErrorSpec(**kwargs)


def test_general_form_requires_vanishing_f():
    GeneralEstimatorForm(lambda o, p: o / p)
    with pytest.raises(DomainError):
        GeneralEstimatorForm(lambda o, p: 1.0 + 0.0 * o)
