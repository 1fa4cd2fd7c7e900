"""Inner solutions: stochastic gradient push training and an exact Newton oracle."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .consensus import AveragingOperator, ExactAverage

logger = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e6


class InnerDivergenceError(RuntimeError):
    pass


class NewtonConvergenceError(RuntimeError):
    pass


@dataclass
class FederatedProblem:
    """``n`` clients, their inner parameters ``x`` (n, d_x) and hyper-parameters.

    ``lam`` is a list because mask hyper-parameters may differ in length
    between clients.
    """

    clients: list
    x: np.ndarray
    lam: list
    averaging: AveragingOperator = field(default_factory=ExactAverage)
    eta: float = 1.0

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = np.tile(self.x, (len(self.clients), 1))
        self.lam = [c.check_lambda(l) for c, l in zip(self.clients, self.lam, strict=True)]
        if self.x.shape[0] != len(self.clients):
            raise ValueError("need one inner parameter vector per client")
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    @property
    def n(self) -> int:
        return len(self.clients)

    def with_x(self, x) -> "FederatedProblem":
        return replace(self, x=np.array(x, dtype=float))

    def outer_total(self, x=None) -> float:
        """Total validation cost ``F = sum_k f_k(x_k, lam_k)``."""
        x = self.x if x is None else np.asarray(x)
        if x.ndim == 1:
            x = np.tile(x, (self.n, 1))
        return sum(c.outer_value(xi, l) for c, xi, l in zip(self.clients, x, self.lam))


def multistep_lr(base: float = 1.0, milestones=(0.1, 0.3, 0.6), gamma: float = 0.1):
    """Piecewise-constant rate, multiplied by ``gamma`` at fractions of the budget."""

    def schedule(step: int, total: int) -> float:
        passed = sum(step >= m * total for m in milestones)
        return base * gamma ** passed

    return schedule


def sgp_train(problem: FederatedProblem, steps: int, lr=None, batch_size=None, seed=0):
    """Stochastic gradient push on ``problem.averaging``; returns the de-biased ``x``.

    Each step every client takes a gradient step on its numerator,
    ``z_i -= lr * grad g_i(y_i)`` with the gradient taken at the de-biased
    ``y_i = z_i / omega_i``, then one application of the averaging operator
    mixes ``(z, omega)``. Scaling the step by ``omega_i`` would weight the
    pooled gradient by the fluctuating debias weights and bias the fixed
    point. ``lr`` is a float or a callable ``(step, total) -> rate``; the
    default is :func:`multistep_lr`.
    """
    if lr is None:
        lr = multistep_lr()
    rate = lr if callable(lr) else (lambda step, total, _r=float(lr): _r)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(problem.n)]
    z = problem.x.copy()
    omega = np.ones(problem.n)
    y = z.copy()
    for step in range(steps):
        gamma = rate(step, steps)
        if gamma != 0.0:
            for i, (cost, lam) in enumerate(zip(problem.clients, problem.lam)):
                batch = None if batch_size is None else cost.sample_batch(rngs[i], batch_size)
                z[i] -= gamma * cost.inner_grad(y[i], lam, batch)
        z, omega = problem.averaging.mix(z, omega)
        y = z / omega[:, None]
        if not np.all(np.isfinite(y)) or np.abs(y).max() > DIVERGENCE_NORM:
            raise InnerDivergenceError(f"SGP diverged at step {step}")
    return y


def pooled_value(clients, lam, x) -> float:
    return sum(c.inner_value(x, l) for c, l in zip(clients, lam))


def pooled_grad(clients, lam, x) -> np.ndarray:
    return sum(c.inner_grad(x, l) for c, l in zip(clients, lam))


def pooled_hessian(clients, lam, x) -> np.ndarray:
    return sum(c.hessian_matrix(x, l) for c, l in zip(clients, lam))


def newton_consensus_solve(clients, lam, tol=1e-10, max_iters=100, x0=None) -> np.ndarray:
    """Minimise the pooled full-batch cost ``sum_k g_k(x, lam_k)`` by damped Newton.

    Steps are halved until the pooled cost decreases. Near the optimum the
    cost change drops below rounding, so a step that reduces the gradient
    norm is accepted as well.
    """
    x = np.zeros(clients[0].d_x) if x0 is None else np.array(x0, dtype=float)
    value = pooled_value(clients, lam, x)
    grad = pooled_grad(clients, lam, x)
    for _ in range(max_iters):
        gnorm = np.linalg.norm(grad)
        if gnorm <= tol:
            return x
        direction = -np.linalg.solve(pooled_hessian(clients, lam, x), grad)
        slope = grad @ direction
        t = 1.0
        while True:
            x_new = x + t * direction
            value_new = pooled_value(clients, lam, x_new)
            grad_new = pooled_grad(clients, lam, x_new)
            if value_new <= value + 1e-4 * t * slope or np.linalg.norm(grad_new) < gnorm:
                break
            t *= 0.5
            if t < 1e-12:
                raise NewtonConvergenceError("line search failed")
        x, value, grad = x_new, value_new, grad_new
    if np.linalg.norm(grad) <= tol:
        return x
    raise NewtonConvergenceError(
        f"gradient norm {np.linalg.norm(grad):.3e} > {tol:.1e} after {max_iters} iterations")


def stationarity_residual(clients, lam, x_candidate, eta: float) -> float:
    """``|x - Theta(x - eta * grad g(x))|`` with exact averaging ``Theta``.

    Zero exactly when all blocks agree and the pooled gradient vanishes.
    """
    x = np.asarray(x_candidate, dtype=float)
    step = np.stack([xi - eta * c.inner_grad(xi, l) for c, xi, l in zip(clients, x, lam)])
    return float(np.linalg.norm(x - ExactAverage().apply(step)))
