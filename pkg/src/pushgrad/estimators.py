"""scikit-learn style wrappers.

Federated data is passed as stacked arrays plus a ``groups`` vector giving
the client (``0..n-1``) of every row. Within a client, instances keep the
order in which their rows appear.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import experiments as ex
from .oracle import ift_hypergradient
from .synthdata import ClientData


def split_by_client(X, y, groups):
    """Validate stacked arrays and split them per client.

    Returns ``(parts, rows)``: ``parts[i] = (X_i, y_i)`` and ``rows[i]`` the
    row indices of client ``i`` in the input.
    """
    X, y = check_X_y(X, y, dtype=float)
    groups = check_array(groups, ensure_2d=False, dtype=None)
    if groups.shape != (X.shape[0],):
        raise ValueError("groups must have one entry per row of X")
    if not np.issubdtype(groups.dtype, np.integer):
        if not np.all(np.equal(np.mod(groups, 1), 0)):
            raise ValueError("groups must hold integer client ids")
        groups = groups.astype(int)
    n = int(groups.max()) + 1
    if groups.min() < 0 or len(np.unique(groups)) != n:
        raise ValueError("client ids must cover 0..n-1")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    rows = [np.flatnonzero(groups == i) for i in range(n)]
    return [(X[r], y[r]) for r in rows], rows


def _client_data(train, val=None):
    if val is None:
        val = train
    if len(val) != len(train):
        raise ValueError(f"{len(train)} training clients but {len(val)} validation clients")
    return [ClientData(tx, ty, vx, vy) for (tx, ty), (vx, vy) in zip(train, val)]


class _FederatedBase(BaseEstimator):
    """Shared conversion from estimator parameters to experiment settings."""

    def _settings(self, data, **extra) -> ex.Settings:
        return ex.Settings(
            data=data, rho_low=self.rho_low, rho_high=self.rho_high,
            inner_steps=self.inner_steps, inner_lr=self.inner_lr,
            inner_batch=self.inner_batch_size, inner_exact=self.inner_exact,
            averaging=self.averaging, **extra)


class DecentralizedLogisticRegression(ClassifierMixin, _FederatedBase):
    """L2-regularised logistic regression trained by stochastic gradient push.

    ``coef_`` holds one row per client; predictions use their average.
    """

    def __init__(self, lam=0.1, inner_steps=5000, inner_lr=1.0, inner_batch_size=None,
                 inner_exact=False, averaging="pushsum", rho_low=0.4, rho_high=0.8,
                 random_state=0):
        self.lam = lam
        self.inner_steps = inner_steps
        self.inner_lr = inner_lr
        self.inner_batch_size = inner_batch_size
        self.inner_exact = inner_exact
        self.averaging = averaging
        self.rho_low = rho_low
        self.rho_high = rho_high
        self.random_state = random_state

    def fit(self, X, y, groups):
        parts, _ = split_by_client(X, y, groups)
        data = _client_data(parts)
        settings = self._settings(data, lambda_init=self.lam)
        clients = ex.make_clients(data, "logistic", settings)
        lam = self._lambda_list(clients)
        self.coef_ = ex.train(clients, lam, settings, self.random_state)
        self.classes_ = np.array([0, 1])
        self.n_clients_ = len(clients)
        self.n_features_in_ = self.coef_.shape[1]
        return self

    def _lambda_list(self, clients):
        lam = np.asarray(self.lam, dtype=float)
        d = clients[0].d_lambda
        if lam.ndim == 0:
            return [np.full(d, float(lam)) for _ in clients]
        lam = np.broadcast_to(lam, (len(clients), d))
        return [row.copy() for row in lam]

    @property
    def consensus_coef_(self):
        check_is_fitted(self, "coef_")
        return self.coef_.mean(axis=0)

    def decision_function(self, X):
        X = check_array(X, dtype=float)
        if X.shape[1] != self.consensus_coef_.shape[0]:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.consensus_coef_

    def predict_proba(self, X):
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X)))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)


class HyperGradientPush(_FederatedBase):
    """Decentralized hyper-gradient of the total validation cost w.r.t. ``lam``.

    After ``fit``, ``hypergradient_`` is a list with one ``d_lambda`` vector
    per client and ``x_`` the trained inner model. ``trace_`` holds the
    per-iteration estimates when ``keep_trace`` is set.
    """

    def __init__(self, lam=0.1, M=500, S=100, eta=1.0, batch_size=None, single_sample=False,
                 persistent_weights=False, keep_trace=False, inner_steps=5000, inner_lr=1.0,
                 inner_batch_size=None, inner_exact=False, averaging="pushsum",
                 rho_low=0.4, rho_high=0.8, random_state=0):
        self.lam = lam
        self.M = M
        self.S = S
        self.eta = eta
        self.batch_size = batch_size
        self.single_sample = single_sample
        self.persistent_weights = persistent_weights
        self.keep_trace = keep_trace
        self.inner_steps = inner_steps
        self.inner_lr = inner_lr
        self.inner_batch_size = inner_batch_size
        self.inner_exact = inner_exact
        self.averaging = averaging
        self.rho_low = rho_low
        self.rho_high = rho_high
        self.random_state = random_state

    _kind = "logistic"

    def _hgp_settings(self, data):
        return self._settings(data, lambda_init=float(np.mean(self.lam)) if self._kind == "logistic"
                              else 0.1, M=self.M, S=self.S, eta=self.eta, batch=self.batch_size,
                              single_sample=self.single_sample,
                              persistent_weights=self.persistent_weights)

    def _lambda_list(self, clients):
        if self._kind == "mask":
            return [np.ones(c.d_lambda) for c in clients]
        return DecentralizedLogisticRegression._lambda_list(self, clients)

    def fit(self, X, y, groups, X_val=None, y_val=None, groups_val=None):
        """Train the inner model on ``(X, y)`` and estimate the hyper-gradient.

        Without a validation split the training data doubles as validation.
        """
        parts, self.rows_ = split_by_client(X, y, groups)
        val = None
        if X_val is not None:
            val, _ = split_by_client(X_val, y_val, groups_val)
        data = _client_data(parts, val)
        settings = self._hgp_settings(data)
        clients = ex.make_clients(data, self._kind, settings)
        lam = self._lambda_list(clients)
        self.x_ = ex.train(clients, lam, settings, self.random_state)
        result = ex.estimate(clients, lam, self.x_, settings, self.random_state,
                             keep_trace=self.keep_trace)
        self.hypergradient_ = result.v
        self.trace_ = result.trace
        self.clients_ = clients
        self.lam_ = lam
        return self

    def reference_error(self):
        """l2 distance to the closed-form hyper-gradient at the exact optimum."""
        check_is_fitted(self, "hypergradient_")
        ref = ift_hypergradient(self.clients_, self.lam_)
        return float(np.linalg.norm(np.concatenate(self.hypergradient_) - np.concatenate(ref)))


class InfluenceEstimator(HyperGradientPush):
    """Predicted change of the total validation cost when a training row is removed.

    Fitting sets ``influence_``, aligned with the rows of the training ``X``.
    """

    _kind = "mask"

    def __init__(self, ridge=1e-3, M=500, S=100, eta=1.0, batch_size=None, single_sample=False,
                 persistent_weights=False, keep_trace=False, inner_steps=5000, inner_lr=1.0,
                 inner_batch_size=None, inner_exact=False, averaging="pushsum",
                 rho_low=0.4, rho_high=0.8, random_state=0):
        self.ridge = ridge
        self.M = M
        self.S = S
        self.eta = eta
        self.batch_size = batch_size
        self.single_sample = single_sample
        self.persistent_weights = persistent_weights
        self.keep_trace = keep_trace
        self.inner_steps = inner_steps
        self.inner_lr = inner_lr
        self.inner_batch_size = inner_batch_size
        self.inner_exact = inner_exact
        self.averaging = averaging
        self.rho_low = rho_low
        self.rho_high = rho_high
        self.random_state = random_state

    def _hgp_settings(self, data):
        settings = super()._hgp_settings(data)
        settings.ridge = self.ridge
        return settings

    def fit(self, X, y, groups, X_val=None, y_val=None, groups_val=None):
        super().fit(X, y, groups, X_val, y_val, groups_val)
        influence = np.empty(sum(len(r) for r in self.rows_))
        for rows, grad in zip(self.rows_, self.hypergradient_):
            influence[rows] = -np.asarray(grad)
        self.influence_ = influence
        return self

    def top_k(self, k):
        """Row indices with the largest ``|influence_|``, ties to the smaller row."""
        check_is_fitted(self, "influence_")
        return np.lexsort((np.arange(self.influence_.size), -np.abs(self.influence_)))[:k]
