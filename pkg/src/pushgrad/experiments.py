"""End-to-end experiment drivers shared by the CLI and the acceptance tests."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .consensus import ExactAverage, PushSum, estimate_operator_matrix, operator_deviation
from .hgp import HgpConfig, hgp_run, trace_errors
from .influence import predict_influence, retrain_influence_oracle, score_report, top_k_targets
from .innersolve import FederatedProblem, multistep_lr, newton_consensus_solve, sgp_train
from .netgraph import EdgeProbabilityMatrix, FixedScheduleSource, ScheduleCursor, ScheduleStream
from .objective import InstanceMaskCost, RegularizedLogisticCost
from .oracle import estimate_bound_constants, ift_hypergradient
from .synthdata import SyntheticConfig, generate_federation

logger = logging.getLogger(__name__)


def derive_seed(seed: int, label: str) -> int:
    """Independent, stable sub-seed for one consumer of randomness."""
    return int(np.random.SeedSequence([seed, zlib.crc32(label.encode())]).generate_state(1)[0])


@dataclass
class Settings:
    """Knobs of one experiment; the CLI fills these from dotted config keys."""

    n_clients: int = 3
    synth_seed: int | None = None   # None: follow the run seed
    dirichlet_alpha: float = 0.4
    train_per_client: int = 100
    val_per_client: int = 100
    data: list | None = None        # preloaded ClientData, overrides synthesis

    rho_low: float = 0.4
    rho_high: float = 0.8
    graph_seed: int | None = None   # fixes the edge probabilities; None: follow the run seed
    schedule: object | None = None  # a GraphSchedule, overrides sampling

    inner_steps: int = 5000
    inner_lr: float = 1.0
    inner_milestones: tuple = (0.1, 0.3, 0.6)
    inner_batch: int | None = None
    inner_exact: bool = False
    lambda_init: float = 0.1
    ridge: float = 1e-3
    reduction: str = "mean"
    checkpoint: object | None = None  # (n, d_x) array used instead of training once

    M: int = 500
    S: int = 100
    eta: float = 1.0
    batch: int | None = None
    single_sample: bool = False
    persistent_weights: bool = False
    averaging: str = "pushsum"      # pushsum | exact

    top_k: int = 50
    use_oracle: bool = False

    outer_steps: int = 5
    outer_lr: float = 0.1

    M_grid: list = field(default_factory=lambda: [1, 2, 5, 10, 20, 50, 100, 200, 500])
    S_grid: list = field(default_factory=lambda: [1, 2, 3, 5, 10, 100])
    batch_grid: list = field(default_factory=lambda: [None])


def federation(settings: Settings, seed: int):
    if settings.data is not None:
        return settings.data
    synth_seed = seed if settings.synth_seed is None else settings.synth_seed
    return generate_federation(SyntheticConfig(
        n_clients=settings.n_clients, dirichlet_alpha=settings.dirichlet_alpha,
        train_per_client=settings.train_per_client, val_per_client=settings.val_per_client,
        seed=synth_seed))


def make_clients(data, kind: str, settings: Settings):
    if kind == "logistic":
        return [RegularizedLogisticCost(d.train_X, d.train_y, d.val_X, d.val_y,
                                        reduction=settings.reduction) for d in data]
    if kind == "mask":
        return [InstanceMaskCost(d.train_X, d.train_y, d.val_X, d.val_y,
                                 ridge=settings.ridge, reduction=settings.reduction) for d in data]
    raise ValueError(f"unknown cost kind {kind!r}")


def initial_lambda(clients, kind: str, settings: Settings):
    if kind == "mask":
        return [np.ones(c.d_lambda) for c in clients]
    return [np.full(c.d_lambda, settings.lambda_init) for c in clients]


def graph_cursor(settings: Settings, n: int, seed: int, stream: str) -> ScheduleCursor:
    """Cursor over the training or estimation graph stream of one run.

    Both phases share the edge probabilities but sample independent streams.
    """
    if settings.schedule is not None:
        return ScheduleCursor(FixedScheduleSource(settings.schedule))
    rho_seed = seed if settings.graph_seed is None else settings.graph_seed
    prob = EdgeProbabilityMatrix.uniform(n, settings.rho_low, settings.rho_high,
                                         seed=derive_seed(rho_seed, "rho"))
    return ScheduleCursor(ScheduleStream(prob, derive_seed(seed, stream)))


def averaging_for(settings: Settings, n: int, seed: int, stream: str, rounds: int):
    if settings.averaging == "exact":
        return ExactAverage()
    if settings.averaging == "pushsum":
        return PushSum(graph_cursor(settings, n, seed, stream), rounds, settings.persistent_weights)
    raise ValueError(f"unknown averaging {settings.averaging!r}")


def train(clients, lam, settings: Settings, seed: int, x0=None) -> np.ndarray:
    """Inner solution ``x(lam)`` as an (n, d_x) array.

    A configured checkpoint replaces training when no warm start is given.
    """
    n = len(clients)
    if settings.checkpoint is not None and x0 is None:
        x = np.array(settings.checkpoint, dtype=float)
        if x.shape != (n, clients[0].d_x):
            raise ValueError(f"checkpoint has shape {x.shape}, expected {(n, clients[0].d_x)}")
        return x
    if settings.inner_exact:
        x = newton_consensus_solve(clients, lam, x0=None if x0 is None else np.mean(x0, axis=0))
        return np.tile(x, (n, 1))
    start = np.zeros(clients[0].d_x) if x0 is None else x0
    problem = FederatedProblem(clients, start, lam, averaging_for(settings, n, seed, "train", 1))
    lr = multistep_lr(settings.inner_lr, settings.inner_milestones)
    return sgp_train(problem, settings.inner_steps, lr, settings.inner_batch,
                     seed=derive_seed(seed, "sgp-batches"))


def hgp_config(settings: Settings, **overrides) -> HgpConfig:
    kw = dict(M=settings.M, S=settings.S, eta=settings.eta, batch_size=settings.batch,
              single_sample=settings.single_sample, persistent_weights=settings.persistent_weights)
    kw.update(overrides)
    return HgpConfig(**kw)


def estimate(clients, lam, x, settings: Settings, seed: int, **overrides):
    """HGP estimate at ``x``; returns the :class:`~pushgrad.hgp.HgpResult`."""
    config = hgp_config(settings, **overrides)
    op = averaging_for(settings, len(clients), seed, "hgp", config.S)
    problem = FederatedProblem(clients, x, lam, op, eta=config.eta)
    return hgp_run(problem, config, seed=derive_seed(seed, "hgp-batches"))


def sweep_ms(settings: Settings, seed: int) -> list[dict]:
    """Error of ``v^(m)`` against the closed form for every (batch, S, M) cell.

    One HGP run per (batch, S) at ``max(M_grid)`` supplies every ``M`` via
    its trace. A failing cell yields rows with an ``error`` message.
    """
    data = federation(settings, seed)
    clients = make_clients(data, "logistic", settings)
    lam = initial_lambda(clients, "logistic", settings)
    x = train(clients, lam, settings, seed)
    reference = ift_hypergradient(clients, lam)
    outer_norm = np.linalg.norm(np.concatenate(
        [c.outer_grads(xi, l)[0] for c, xi, l in zip(clients, x, lam)]))
    m_max = max(settings.M_grid)
    rows = []
    for batch in settings.batch_grid:
        for S in settings.S_grid:
            base = {"seed": seed, "batch": 0 if batch is None else batch, "S": S}
            try:
                result = estimate(clients, lam, x, settings, seed, M=m_max, S=S,
                                  batch_size=batch, keep_trace=True)
                errors = trace_errors(result.trace, reference)
            except (ArithmeticError, RuntimeError, ValueError) as exc:
                logger.warning("cell %s failed: %s", base, exc)
                rows.extend({**base, "M": M, "error_l2": float("nan"),
                             "error_rel": float("nan"), "error": str(exc)} for M in settings.M_grid)
                continue
            rows.extend({**base, "M": M, "error_l2": float(errors[M]),
                         "error_rel": float(errors[M] / outer_norm), "error": ""}
                        for M in settings.M_grid)
    return rows


def influence_experiment(settings: Settings, seed: int):
    """Predict instance influence (HGP or closed form), retrain the top-k, score."""
    data = federation(settings, seed)
    clients = make_clients(data, "mask", settings)
    lam = initial_lambda(clients, "mask", settings)
    if settings.use_oracle:
        hypergrad = ift_hypergradient(clients, lam)
    else:
        x = train(clients, lam, settings, seed)
        hypergrad = estimate(clients, lam, x, settings, seed).v
    predicted = predict_influence(hypergrad)
    actual = retrain_influence_oracle(clients, top_k_targets(predicted, settings.top_k), lam)
    return score_report(predicted, actual, settings.top_k)


class Adam:
    def __init__(self, lr=0.1, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grad):
        b1, b2 = self.betas
        if self.m is None:
            self.m, self.v = np.zeros_like(grad), np.zeros_like(grad)
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad ** 2
        m_hat = self.m / (1 - b1 ** self.t)
        v_hat = self.v / (1 - b2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def bilevel_demo(settings: Settings, seed: int) -> list[dict]:
    """Adam on ``log lam`` of the regularised logistic problem.

    Row ``k`` holds the total validation cost at the ``lam`` of outer step
    ``k``; row 0 is the starting point.
    """
    data = federation(settings, seed)
    clients = make_clients(data, "logistic", settings)
    log_lam = np.log(np.array(initial_lambda(clients, "logistic", settings)))
    adam = Adam(settings.outer_lr)
    x = None
    rows = []
    for step in range(settings.outer_steps + 1):
        lam = list(np.exp(log_lam))
        x = train(clients, lam, settings, derive_seed(seed, f"outer-{step}"), x0=x)
        F = float(sum(c.outer_value(xi) for c, xi in zip(clients, x)))
        acc = float(np.mean([c.accuracy(xi) for c, xi in zip(clients, x)]))
        rows.append({"step": step, "F": F, "val_loss": F / len(clients), "val_accuracy": acc,
                     "mean_log_lambda": float(log_lam.mean())})
        if step == settings.outer_steps:
            break
        if settings.use_oracle:
            hypergrad = np.array(ift_hypergradient(clients, lam))
        else:
            result = estimate(clients, lam, x, settings, derive_seed(seed, f"outer-{step}"),
                              single_sample=True, persistent_weights=True)
            hypergrad = np.array(result.v)
        log_lam = adam.step(log_lam, hypergrad * np.exp(log_lam))
    return rows


def diagnostics(settings: Settings, seed: int, num_batch_samples: int = 20):
    """Bound-constant estimates plus the Push-Sum operator deviation per ``S``."""
    data = federation(settings, seed)
    clients = make_clients(data, "logistic", settings)
    lam = initial_lambda(clients, "logistic", settings)
    diag = estimate_bound_constants(clients, lam, num_batch_samples, settings.batch,
                                    eta=settings.eta, seed=derive_seed(seed, "diag"))
    cursor = graph_cursor(settings, len(clients), seed, "hgp")
    decay = []
    for S in range(1, max(settings.S_grid) + 1):
        theta_hat = estimate_operator_matrix(PushSum(cursor.copy(), S), len(clients))
        decay.append({"S": S, "sigma_max_deviation": operator_deviation(theta_hat)})
    return diag, decay
