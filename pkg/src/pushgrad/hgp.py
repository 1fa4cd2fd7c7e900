"""Hyper-Gradient Push: a decentralised fixed-point hyper-gradient estimator.

Client ``i`` keeps ``u_i`` (size ``d_x``) and ``v_i`` (size ``d_lambda``).
Each iteration averages ``u`` with the problem's averaging operator and
then applies local Hessian- and cross-Jacobian-vector products, so clients
only ever exchange ``d_x``-sized vectors. ``v_i`` converges to the
derivative of the total outer cost with respect to ``lam_i``.

The averaging operator selects the variant: :class:`~pushgrad.consensus.PushSum`
for time-varying directed graphs, :class:`~pushgrad.consensus.DoublyStochastic`
for static undirected graphs and :class:`~pushgrad.consensus.ExactAverage`
for a central server.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .innersolve import FederatedProblem


@dataclass(frozen=True)
class HgpConfig:
    """Settings of one HGP run.

    ``S`` overrides the number of rounds of the problem's averaging operator
    when given. ``batch_size=None`` uses full-batch derivative products.
    ``single_sample`` reuses one batch for both products;
    ``persistent_weights`` carries Push-Sum debias weights across iterations.
    """

    M: int = 500
    S: int | None = None
    eta: float = 1.0
    batch_size: int | None = None
    single_sample: bool = False
    persistent_weights: bool = False
    keep_trace: bool = False

    def __post_init__(self):
        if self.M < 0:
            raise ValueError("M must be >= 0")
        if self.S is not None and self.S < 1:
            raise ValueError("S must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class HgpState:
    u: np.ndarray  # (n, d_x)
    v: list        # n arrays of size d_lambda
    m: int = 0


@dataclass
class HgpResult:
    v: list
    state: HgpState
    trace: list | None = None       # v at m = 0..M when kept
    u_norms: list | None = None     # |u^(m)| per client, m = 0..M when kept

    @property
    def hypergradient(self) -> np.ndarray:
        return np.concatenate(self.v)


def hgp_init(problem: FederatedProblem) -> HgpState:
    """Local outer gradients at each client's own ``x_i``."""
    u, v = [], []
    for cost, x, lam in zip(problem.clients, problem.x, problem.lam):
        gx, gl = cost.outer_grads(x, lam)
        u.append(gx)
        v.append(np.array(gl, dtype=float))
    return HgpState(np.array(u), v, 0)


def _averaging(problem: FederatedProblem, config: HgpConfig):
    op = problem.averaging
    if config.S is not None:
        op = op.with_rounds(config.S)
    if config.persistent_weights and hasattr(op, "persistent_weights"):
        if not op.persistent_weights:
            op = type(op)(op.cursor, op.rounds, persistent_weights=True)
    return op


def hgp_iterate(state: HgpState, problem: FederatedProblem, config: HgpConfig,
                rngs=None, averaging=None) -> HgpState:
    """One iteration: average ``u``, then local Jacobian products at the average."""
    op = averaging if averaging is not None else _averaging(problem, config)
    u_bar = op.apply(state.u)
    eta = config.eta
    u_new = np.empty_like(state.u)
    v_new = []
    for i, (cost, x, lam) in enumerate(zip(problem.clients, problem.x, problem.lam)):
        if config.batch_size is None:
            b_cross = b_hess = None
        else:
            b_cross = cost.sample_batch(rngs[i], config.batch_size)
            b_hess = b_cross if config.single_sample else cost.sample_batch(rngs[i], config.batch_size)
        v_new.append(state.v[i] - eta * cost.cross_jacobian_vec(x, lam, u_bar[i], b_cross))
        u_new[i] = u_bar[i] - eta * cost.hessian_vec(x, lam, u_bar[i], b_hess)
    return HgpState(u_new, v_new, state.m + 1)


def hgp_run(problem: FederatedProblem, config: HgpConfig, seed: int = 0) -> HgpResult:
    """Run ``config.M`` iterations from :func:`hgp_init`.

    Mini-batches come from one independent stream per client, derived from
    ``seed``; the averaging operator draws graphs from its own cursor.
    """
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(problem.n)]
    op = _averaging(problem, config)
    state = hgp_init(problem)
    trace = [[v.copy() for v in state.v]] if config.keep_trace else None
    u_norms = [np.linalg.norm(state.u, axis=1)] if config.keep_trace else None
    for _ in range(config.M):
        state = hgp_iterate(state, problem, config, rngs, averaging=op)
        if config.keep_trace:
            trace.append([v.copy() for v in state.v])
            u_norms.append(np.linalg.norm(state.u, axis=1))
    return HgpResult([v.copy() for v in state.v], state, trace, u_norms)


def trace_errors(trace, reference) -> np.ndarray:
    """l2 error of the concatenated ``v^(m)`` against a reference, per ``m``."""
    ref = np.concatenate(reference)
    return np.array([np.linalg.norm(np.concatenate(v) - ref) for v in trace])
