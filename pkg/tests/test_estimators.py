from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from aflsim.data import gen_classification_data, gen_regression_data
from aflsim.estimators import AFLClassifier, AFLRegressor


def fast(cls, **kw):
    params = dict(n_clients=4, rounds=40, local_epochs=10, gamma0=0.01, random_state=0)
    params.update(kw)
    return cls(**params)


def test_regressor_learns_linear_target():
    data = gen_regression_data(600, 3, seed=0)
    model = fast(AFLRegressor).fit(data.features, data.targets)
    assert model.score(data.features, data.targets) > 0.99
    np.testing.assert_allclose(model.coef_, data.true_weights, atol=0.2)
    assert model.coef_.shape == (3,) and isinstance(model.intercept_, float)
    assert len(model.loss_curve_) == 40


def test_classifier_maps_arbitrary_labels():
    data = gen_classification_data(600, 3, seed=1)
    labels = np.where(data.targets > 0, "yes", "no")
    model = fast(AFLClassifier).fit(data.features, labels)
    assert list(model.classes_) == ["no", "yes"]
    assert set(model.predict(data.features)) <= {"no", "yes"}
    assert model.score(data.features, labels) > 0.9


def test_params_round_trip():
    model = AFLRegressor(rounds=7, tau_max=1)
    assert model.get_params()["rounds"] == 7
    copy = clone(model).set_params(rounds=9)
    assert copy.rounds == 9 and model.rounds == 7
    assert AFLClassifier().get_params()["local_epochs"] == 100


def test_not_fitted_and_bad_input():
    with pytest.raises(NotFittedError):
        AFLRegressor().predict(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        fast(AFLRegressor).fit(np.zeros((10, 2)), np.zeros(9))
    with pytest.raises(ValueError):
        fast(AFLRegressor).fit(np.array([[np.nan, 1.0]] * 10), np.zeros(10))
    with pytest.raises(ValueError, match="binary"):
        fast(AFLClassifier).fit(np.random.default_rng(0).normal(size=(30, 2)), np.arange(30) % 3)


def test_feature_count_checked_at_predict():
    data = gen_regression_data(200, 3, seed=0)
    model = fast(AFLRegressor, rounds=2).fit(data.features, data.targets)
    with pytest.raises(ValueError):
        model.predict(np.zeros((2, 4)))


def test_fit_is_deterministic():
    data = gen_regression_data(200, 2, seed=2)
    a = fast(AFLRegressor, rounds=5).fit(data.features, data.targets)
    b = fast(AFLRegressor, rounds=5).fit(data.features, data.targets)
    assert np.array_equal(a.coef_, b.coef_)
