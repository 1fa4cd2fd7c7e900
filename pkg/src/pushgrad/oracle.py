"""Reference hyper-gradients and bound-constant diagnostics.

These build explicit ``d_x x d_x`` and ``d_lambda x d_x`` matrices, which is
cheap at the problem sizes used here, and exist to validate the matrix-free
estimator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .innersolve import newton_consensus_solve, pooled_hessian

logger = logging.getLogger(__name__)


class OracleDivergenceError(RuntimeError):
    pass


def total_outer(clients, lam, x) -> float:
    return sum(c.outer_value(x, l) for c, l in zip(clients, lam))


def ift_hypergradient(clients, lam, x_star=None, tol=1e-12):
    """Closed-form hyper-gradient at the consensus optimum.

    ``v_i = d_lam f_i - J_i H^{-1} sum_k d_x f_k`` with ``H`` the pooled
    Hessian and ``J_i`` the mixed second derivative of ``g_i``.
    """
    if x_star is None:
        x_star = newton_consensus_solve(clients, lam, tol=tol)
    H = pooled_hessian(clients, lam, x_star)
    grads = [c.outer_grads(x_star, l) for c, l in zip(clients, lam)]
    rhs = sum(gx for gx, _ in grads)
    try:
        w = np.linalg.solve(H, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("pooled Hessian is singular; inner cost not strongly convex") from exc
    return [gl - c.cross_jacobian_vec(x_star, l, w) for c, l, (_, gl) in zip(clients, lam, grads)]


def fixed_point_reference(clients, lam, x_star, M: int, eta: float, return_trace=False):
    """Fixed-point recursion with exact averaging and full-batch Jacobians.

    ``u <- (I - eta H_blk) Theta u`` and ``v <- v - eta J_blk Theta u`` with
    ``Theta = (1/n) 11^T (x) I`` assembled explicitly.
    """
    n = len(clients)
    x_star = np.asarray(x_star, dtype=float)
    xs = np.tile(x_star, (n, 1)) if x_star.ndim == 1 else x_star
    d_x = xs.shape[1]
    hess = [c.hessian_matrix(x, l) for c, x, l in zip(clients, xs, lam)]
    jac = [c.cross_jacobian_matrix(x, l) for c, x, l in zip(clients, xs, lam)]
    theta = np.kron(np.full((n, n), 1.0 / n), np.eye(d_x))
    A = np.eye(n * d_x) - eta * _block_diag(hess)
    Jblk = _block_diag(jac)
    grads = [c.outer_grads(x, l) for c, x, l in zip(clients, xs, lam)]
    u = np.concatenate([gx for gx, _ in grads])
    v = np.concatenate([gl for _, gl in grads])
    splits = np.cumsum([len(gl) for _, gl in grads])[:-1]
    trace = [np.split(v.copy(), splits)] if return_trace else None
    growing = 0
    for _ in range(M):
        u_bar = theta @ u
        v = v - eta * (Jblk @ u_bar)
        u_next = A @ u_bar
        growing = growing + 1 if np.linalg.norm(u_next) > np.linalg.norm(u) else 0
        if growing >= 10:
            raise OracleDivergenceError("|u| grew for 10 consecutive iterations; reduce eta")
        u = u_next
        if return_trace:
            trace.append(np.split(v.copy(), splits))
    out = np.split(v, splits)
    return (out, trace) if return_trace else out


def _block_diag(blocks):
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def finite_difference_hypergradient(clients, lam, h=1e-5, floor=1e-7, tol=1e-13):
    """Central differences of ``F(lam) = sum_k f_k(x*(lam), lam_k)``.

    Every perturbed point is re-solved by Newton, warm-started from the
    unperturbed optimum. The step is ``h * |lam_a|`` with an absolute floor.
    """
    lam = [np.array(l, dtype=float) for l in lam]
    x0 = newton_consensus_solve(clients, lam, tol=tol)

    def F(perturbed):
        x = newton_consensus_solve(clients, perturbed, tol=tol, x0=x0)
        return sum(c.outer_value(x, l) for c, l in zip(clients, perturbed))

    out = []
    for i in range(len(clients)):
        grad = np.empty_like(lam[i])
        for a in range(lam[i].size):
            step = max(h * abs(lam[i][a]), floor)
            plus = [l.copy() for l in lam]
            minus = [l.copy() for l in lam]
            plus[i][a] += step
            minus[i][a] -= step
            grad[a] = (F(plus) - F(minus)) / (2 * step)
        out.append(grad)
    return out


@dataclass
class BoundDiagnostics:
    alpha_est: float
    beta_est: float
    kappa_x_est: float
    kappa_lambda_est: float
    mu_est: float
    eta: float = 1.0

    @property
    def eta_alpha_product(self) -> float:
        return self.eta * self.alpha_est

    def as_row(self) -> dict:
        return {"alpha": self.alpha_est, "beta": self.beta_est, "kappa_x": self.kappa_x_est,
                "kappa_lambda": self.kappa_lambda_est, "mu": self.mu_est,
                "eta_alpha_product": self.eta_alpha_product}


def estimate_bound_constants(clients, lam, num_batch_samples=20, batch_size=None,
                             x_star=None, eta=1.0, seed=0) -> BoundDiagnostics:
    """Empirical stand-ins for the constants of the error bound.

    ``alpha``/``beta`` are the smallest Hessian eigenvalue and largest mixed
    Jacobian singular value over clients at full batch. ``kappa_x`` and
    ``kappa_lambda`` are the largest deviations of sampled-batch Jacobians
    from their full-batch values; with ``batch_size=None`` they are zero.
    """
    if x_star is None:
        x_star = newton_consensus_solve(clients, lam)
    rng = np.random.default_rng(seed)
    alpha, beta, kx, kl = np.inf, 0.0, 0.0, 0.0
    for c, l in zip(clients, lam):
        H = c.hessian_matrix(x_star, l)
        J = c.cross_jacobian_matrix(x_star, l)
        alpha = min(alpha, float(np.linalg.eigvalsh(0.5 * (H + H.T)).min()))
        beta = max(beta, float(np.linalg.norm(J, ord=2)))
        if batch_size is None:
            continue
        for _ in range(num_batch_samples):
            batch = c.sample_batch(rng, batch_size)
            kx = max(kx, float(np.linalg.norm(c.hessian_matrix(x_star, l, batch) - H, ord=2)))
            kl = max(kl, float(np.linalg.norm(c.cross_jacobian_matrix(x_star, l, batch) - J, ord=2)))
    mu = float(np.sqrt(kl ** 2 + kx ** 2 * beta ** 2 / alpha ** 2))
    diag = BoundDiagnostics(alpha, beta, kx, kl, mu, eta)
    if not 0 < diag.eta_alpha_product < 1:
        logger.warning("eta * alpha = %.3g is outside (0, 1)", diag.eta_alpha_product)
    return diag
