"""Client costs with analytic derivative products.

Every cost exposes the inner cost ``g_i(x, lam; batch)`` and the outer cost
``f_i(x, lam)`` together with the products HGP needs: the inner gradient,
Hessian-vector and cross-Jacobian-vector products, and the outer gradients.

``batch`` is either ``None`` (full training set) or an index array into the
training set, possibly with repeats. Batch costs are weighted so that a
uniformly sampled batch is an unbiased estimate of the full-batch cost:
``reduction="mean"`` weights each sampled term by ``1/|batch|`` (full batch:
mean loss), ``reduction="sum"`` by ``N/|batch|`` (full batch: summed loss).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import expit


class Instance(NamedTuple):
    input: np.ndarray
    label: int


def _log_loss(scores, labels):
    # log(1 + e^s) - y s, stable for large |s|
    return np.logaddexp(0.0, scores) - labels * scores


def _check_xy(X, y, name):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"{name}: expected X of shape (N, d) and y of shape (N,)")
    if X.shape[0] == 0:
        raise ValueError(f"{name}: empty dataset")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name}: non-finite inputs")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError(f"{name}: labels must be 0 or 1")
    return X, y


class ClientCost:
    """Base class; subclasses implement the per-batch formulas."""

    d_x: int
    d_lambda: int

    def __init__(self, train_X, train_y, val_X, val_y, reduction="mean"):
        if reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")
        self.train_X, self.train_y = _check_xy(train_X, train_y, "train")
        self.val_X, self.val_y = _check_xy(val_X, val_y, "validation")
        if self.val_X.shape[1] != self.train_X.shape[1]:
            raise ValueError("train and validation input dimensions differ")
        self.reduction = reduction

    @property
    def n_train(self) -> int:
        return self.train_X.shape[0]

    @property
    def train(self) -> list[Instance]:
        return [Instance(x, int(t)) for x, t in zip(self.train_X, self.train_y)]

    @property
    def validation(self) -> list[Instance]:
        return [Instance(x, int(t)) for x, t in zip(self.val_X, self.val_y)]

    def _batch(self, batch):
        """Inputs, labels, indices and per-term weight of a batch."""
        if batch is None:
            idx = np.arange(self.n_train)
        else:
            idx = np.asarray(batch, dtype=np.intp)
            if idx.size == 0:
                raise ValueError("batch is empty")
        scale = 1.0 if self.reduction == "mean" else float(self.n_train)
        return self.train_X[idx], self.train_y[idx], idx, scale / idx.size

    def _val_weight(self):
        return 1.0 / self.val_X.shape[0] if self.reduction == "mean" else 1.0

    def sample_batch(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Uniform sampling with replacement."""
        if size < 1:
            raise ValueError("batch size must be >= 1")
        return rng.integers(0, self.n_train, size=size)

    def check_lambda(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.d_lambda,):
            raise ValueError(f"lambda must have shape ({self.d_lambda},), got {lam.shape}")
        return lam

    # outer cost: binary cross-entropy on the validation set, lambda-free
    def outer_value(self, x, lam=None) -> float:
        return self._val_weight() * float(np.sum(_log_loss(self.val_X @ x, self.val_y)))

    def outer_grads(self, x, lam):
        lam = self.check_lambda(lam)
        resid = expit(self.val_X @ x) - self.val_y
        return self._val_weight() * (self.val_X.T @ resid), np.zeros_like(lam)

    def hessian_matrix(self, x, lam, batch=None) -> np.ndarray:
        eye = np.eye(self.d_x)
        return np.column_stack([self.hessian_vec(x, lam, e, batch) for e in eye])

    def cross_jacobian_matrix(self, x, lam, batch=None) -> np.ndarray:
        """The ``(d_lambda, d_x)`` matrix of mixed second derivatives."""
        eye = np.eye(self.d_x)
        return np.column_stack([self.cross_jacobian_vec(x, lam, e, batch) for e in eye])

    def accuracy(self, x) -> float:
        return float(np.mean((self.val_X @ x > 0) == (self.val_y == 1)))


class RegularizedLogisticCost(ClientCost):
    """Logistic loss plus ``0.5 * x^T diag(lam) x`` with one weight per coordinate."""

    def __init__(self, train_X, train_y, val_X, val_y, reduction="mean"):
        super().__init__(train_X, train_y, val_X, val_y, reduction)
        self.d_x = self.train_X.shape[1]
        self.d_lambda = self.d_x

    def check_lambda(self, lam):
        lam = super().check_lambda(lam)
        if np.any(lam <= 0):
            raise ValueError("regularization weights must be strictly positive")
        return lam

    def inner_value(self, x, lam, batch=None) -> float:
        lam = self.check_lambda(lam)
        X, y, _, w = self._batch(batch)
        return w * float(np.sum(_log_loss(X @ x, y))) + 0.5 * float(x @ (lam * x))

    def inner_grad(self, x, lam, batch=None):
        lam = self.check_lambda(lam)
        X, y, _, w = self._batch(batch)
        return w * (X.T @ (expit(X @ x) - y)) + lam * x

    def hessian_vec(self, x, lam, u, batch=None):
        lam = self.check_lambda(lam)
        X, _, _, w = self._batch(batch)
        p = expit(X @ x)
        return w * (X.T @ (p * (1 - p) * (X @ u))) + lam * u

    def cross_jacobian_vec(self, x, lam, u, batch=None):
        self.check_lambda(lam)
        return np.asarray(x, dtype=float) * u


class InstanceMaskCost(ClientCost):
    """Per-instance weighted logistic loss plus a fixed, unmasked ridge.

    ``lam[k]`` multiplies the loss of training instance ``k``; at the all-ones
    mask this is ordinary training. The ridge keeps the cost strongly convex
    and does not depend on the mask.
    """

    def __init__(self, train_X, train_y, val_X, val_y, ridge=1e-3, reduction="mean"):
        super().__init__(train_X, train_y, val_X, val_y, reduction)
        if ridge < 0:
            raise ValueError("ridge must be >= 0")
        self.ridge = float(ridge)
        self.d_x = self.train_X.shape[1]
        self.d_lambda = self.n_train

    def check_lambda(self, lam):
        lam = super().check_lambda(lam)
        if not np.all(np.isfinite(lam)) or np.any(lam < 0):
            raise ValueError("mask weights must be finite and nonnegative")
        return lam

    def inner_value(self, x, lam, batch=None) -> float:
        lam = self.check_lambda(lam)
        X, y, idx, w = self._batch(batch)
        return (w * float(np.sum(lam[idx] * _log_loss(X @ x, y)))
                + 0.5 * self.ridge * float(x @ x))

    def inner_grad(self, x, lam, batch=None):
        lam = self.check_lambda(lam)
        X, y, idx, w = self._batch(batch)
        return w * (X.T @ (lam[idx] * (expit(X @ x) - y))) + self.ridge * x

    def hessian_vec(self, x, lam, u, batch=None):
        lam = self.check_lambda(lam)
        X, _, idx, w = self._batch(batch)
        p = expit(X @ x)
        return w * (X.T @ (lam[idx] * p * (1 - p) * (X @ u))) + self.ridge * u

    def cross_jacobian_vec(self, x, lam, u, batch=None):
        self.check_lambda(lam)
        X, y, idx, w = self._batch(batch)
        per_term = w * (expit(X @ x) - y) * (X @ u)
        return np.bincount(idx, weights=per_term, minlength=self.d_lambda)

    def instance_losses(self, x) -> np.ndarray:
        return _log_loss(self.train_X @ x, self.train_y)


class QuadraticCost:
    """``g = 0.5 x^T diag(lam) x + b^T x`` and ``f = 0.5 |x - target|^2``.

    Data-free, so every batch gives the full-batch value. Used for closed-form
    checks of the solvers and oracles.
    """

    reduction = "mean"

    def __init__(self, b, target=None):
        self.b = np.asarray(b, dtype=float)
        self.d_x = self.d_lambda = self.b.shape[0]
        self.target = np.zeros(self.d_x) if target is None else np.asarray(target, dtype=float)
        self.n_train = 1

    def check_lambda(self, lam):
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.d_lambda,):
            raise ValueError(f"lambda must have shape ({self.d_lambda},)")
        return lam

    def sample_batch(self, rng, size):
        return np.zeros(size, dtype=np.intp)

    def inner_value(self, x, lam, batch=None):
        lam = self.check_lambda(lam)
        return 0.5 * float(x @ (lam * x)) + float(self.b @ x)

    def inner_grad(self, x, lam, batch=None):
        return self.check_lambda(lam) * x + self.b

    def hessian_vec(self, x, lam, u, batch=None):
        return self.check_lambda(lam) * u

    def cross_jacobian_vec(self, x, lam, u, batch=None):
        return np.asarray(x, dtype=float) * u

    def outer_value(self, x, lam=None):
        r = x - self.target
        return 0.5 * float(r @ r)

    def outer_grads(self, x, lam):
        return x - self.target, np.zeros(self.d_lambda)

    hessian_matrix = ClientCost.hessian_matrix
    cross_jacobian_matrix = ClientCost.cross_jacobian_matrix
