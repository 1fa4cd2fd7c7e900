import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pushgrad.estimators import (DecentralizedLogisticRegression, HyperGradientPush,
                                 InfluenceEstimator, split_by_client)
from pushgrad.synthdata import SyntheticConfig, generate_federation

from test_innersolve import X_STAR_SEED0


@pytest.fixture(scope="module")
def stacked():
    clients = generate_federation(SyntheticConfig(seed=0))
    X = np.vstack([c.train_X for c in clients])
    y = np.concatenate([c.train_y for c in clients])
    Xv = np.vstack([c.val_X for c in clients])
    yv = np.concatenate([c.val_y for c in clients])
    groups = np.repeat(np.arange(3), 100)
    return X, y, groups, Xv, yv


def test_split_validation(stacked):
    X, y, groups, _, _ = stacked
    parts, rows = split_by_client(X, y, groups)
    assert len(parts) == 3 and np.array_equal(rows[1], np.arange(100, 200))
    with pytest.raises(ValueError):
        split_by_client(X, y, groups + 1)
    with pytest.raises(ValueError):
        split_by_client(X, y + 1, groups)
    with pytest.raises(ValueError):
        split_by_client(X, y, groups[:-1])


def test_logistic_regression_exact(stacked):
    X, y, groups, Xv, yv = stacked
    model = DecentralizedLogisticRegression(inner_exact=True).fit(X, y, groups)
    np.testing.assert_allclose(model.consensus_coef_, X_STAR_SEED0, rtol=1e-8)
    proba = model.predict_proba(Xv)
    assert proba.shape == (300, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert 0.6 < model.score(Xv, yv) <= 1.0


def test_logistic_regression_sgp_close_to_exact(stacked):
    X, y, groups, _, _ = stacked
    model = DecentralizedLogisticRegression(inner_steps=2000).fit(X, y, groups)
    assert np.abs(model.coef_ - X_STAR_SEED0).max() < 5e-3


def test_params_and_clone():
    model = HyperGradientPush(M=10, S=3)
    params = model.get_params()
    assert params["M"] == 10 and params["S"] == 3
    assert clone(model).get_params() == params
    assert "lam" not in InfluenceEstimator().get_params()
    with pytest.raises(NotFittedError):
        DecentralizedLogisticRegression().predict(np.zeros((1, 5)))


def test_hypergradient_estimator(stacked):
    X, y, groups, Xv, yv = stacked
    est = HyperGradientPush(inner_exact=True, M=300, S=50, keep_trace=True)
    est.fit(X, y, groups, Xv, yv, groups)
    assert len(est.hypergradient_) == 3 and len(est.trace_) == 301
    assert est.reference_error() < 1e-8


def test_influence_estimator_rows(stacked):
    X, y, groups, Xv, yv = stacked
    est = InfluenceEstimator(inner_exact=True, averaging="exact", M=300)
    est.fit(X, y, groups, Xv, yv, groups)
    assert est.influence_.shape == (300,)
    np.testing.assert_allclose(est.influence_[100:200], -est.hypergradient_[1])
    top = est.top_k(3)
    assert np.abs(est.influence_[top[0]]) == np.abs(est.influence_).max()
