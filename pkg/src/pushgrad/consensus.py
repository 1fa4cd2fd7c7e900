"""Push-Sum averaging and the family of averaging operators.

All operators act on an ``(n, d)`` array holding one ``d``-vector per client
and mix every coordinate with the same scalar weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .netgraph import GraphSchedule, ScheduleCursor

UNDERFLOW = 1e-300


class ConsensusDivergenceError(RuntimeError):
    """A debias weight underflowed: the schedule starves some client of mass."""


@dataclass
class PushSumState:
    z: np.ndarray      # (n, d) numerators
    omega: np.ndarray  # (n,) debias weights

    @property
    def y(self) -> np.ndarray:
        return self.z / self.omega[:, None]

    @classmethod
    def start(cls, initial, weights=None) -> "PushSumState":
        z = np.array(initial, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if weights is None:
            omega = np.ones(z.shape[0])
        else:
            omega = np.array(weights, dtype=float)
            if omega.shape != (z.shape[0],) or np.any(omega <= 0):
                raise ValueError("carried-over weights must be positive, one per client")
        return cls(z, omega)

    def step(self, mixing: np.ndarray) -> "PushSumState":
        """One synchronous round with a column-stochastic mixing matrix."""
        omega = mixing @ self.omega
        if omega.min() < UNDERFLOW:
            raise ConsensusDivergenceError(
                f"debias weight underflow (min omega = {omega.min():.3e})")
        return PushSumState(mixing @ self.z, omega)


def _as_mixing(window) -> np.ndarray:
    if isinstance(window, GraphSchedule):
        return window.mixing_matrices()
    mats = np.asarray(window, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    return mats


def push_sum_average(initial, schedule_window, state_weights=None):
    """Run Push-Sum over every step of ``schedule_window``.

    Parameters
    ----------
    initial : array_like, shape (n, d)
        Per-client starting vectors ``y_i^(0)``.
    schedule_window : GraphSchedule or array of mixing matrices
        The steps to run, one round each.
    state_weights : array_like, shape (n,), optional
        Debias weights carried over from a previous run. When omitted every
        weight starts at 1.

    Returns
    -------
    y : ndarray, shape (n, d)
        De-biased estimates after the last round.
    omega : ndarray, shape (n,)
        Final debias weights.
    """
    state = PushSumState.start(initial, state_weights)
    mats = _as_mixing(schedule_window)
    if len(mats) == 0:
        raise ValueError("schedule window is empty")
    if mats.shape[1] != state.z.shape[0]:
        raise ValueError(f"schedule has {mats.shape[1]} clients, got {state.z.shape[0]} vectors")
    z, omega = state.z, state.omega
    for P in mats:
        z = P @ z
        omega = P @ omega
    if omega.min() < UNDERFLOW:
        raise ConsensusDivergenceError(f"debias weight underflow (min omega = {omega.min():.3e})")
    y = z / omega[:, None]
    return (y[:, 0] if np.ndim(initial) == 1 else y), omega


def push_sum_trace(initial, schedule_window, state_weights=None):
    """Yield the :class:`PushSumState` after each round (round 0 included)."""
    state = PushSumState.start(initial, state_weights)
    yield state
    for P in _as_mixing(schedule_window):
        state = state.step(P)
        yield state


class AveragingOperator:
    """Approximates the exact averaging map that replicates the client mean."""

    rounds = 0

    def apply(self, vectors: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mix(self, z: np.ndarray, omega: np.ndarray):
        """Mix numerators and debias weights without de-biasing (used by SGP)."""
        raise NotImplementedError

    def __call__(self, vectors):
        return self.apply(vectors)

    def with_rounds(self, rounds: int) -> "AveragingOperator":
        """Same operator with a different number of rounds per application."""
        return self


class ExactAverage(AveragingOperator):
    """Centralised averaging: every client receives the exact mean."""

    def apply(self, vectors):
        vectors = np.asarray(vectors, dtype=float)
        return np.broadcast_to(vectors.mean(axis=0), vectors.shape).copy()

    def mix(self, z, omega):
        return self.apply(z), self.apply(omega)

    def __repr__(self):
        return "ExactAverage()"


class DoublyStochastic(AveragingOperator):
    """``rounds`` applications of a fixed doubly-stochastic mixing matrix."""

    def __init__(self, W, rounds: int = 1):
        W = np.array(W, dtype=float)
        n = W.shape[0]
        if W.shape != (n, n):
            raise ValueError("W must be square")
        if W.min() < 0:
            raise ValueError("W must be nonnegative")
        if not (np.allclose(W.sum(axis=0), 1, atol=1e-12, rtol=0)
                and np.allclose(W.sum(axis=1), 1, atol=1e-12, rtol=0)):
            raise ValueError("W must be doubly stochastic")
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        self.W = W
        self.rounds = int(rounds)
        self._power = np.linalg.matrix_power(W, self.rounds)

    def apply(self, vectors):
        return self._power @ np.asarray(vectors, dtype=float)

    def mix(self, z, omega):
        return self._power @ z, self._power @ omega

    def with_rounds(self, rounds):
        return DoublyStochastic(self.W, rounds)

    def __repr__(self):
        return f"DoublyStochastic(n={self.W.shape[0]}, rounds={self.rounds})"


class PushSum(AveragingOperator):
    """``rounds`` Push-Sum rounds drawn from a shared schedule cursor.

    With ``persistent_weights`` the debias weights are carried from one
    application to the next instead of being reset to 1.
    """

    def __init__(self, cursor: ScheduleCursor, rounds: int, persistent_weights: bool = False):
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        self.cursor = cursor
        self.rounds = int(rounds)
        self.persistent_weights = persistent_weights
        self.weights = None

    def apply(self, vectors):
        mats = self.cursor.next_mixing(self.rounds)
        carried = self.weights if self.persistent_weights else None
        y, omega = push_sum_average(vectors, mats, carried)
        if self.persistent_weights:
            self.weights = omega
        return y

    def mix(self, z, omega):
        for P in self.cursor.next_mixing(self.rounds):
            z = P @ z
            omega = P @ omega
        if omega.min() < UNDERFLOW:
            raise ConsensusDivergenceError(f"debias weight underflow (min omega = {omega.min():.3e})")
        return z, omega

    def with_rounds(self, rounds):
        """Shares the cursor, so both operators draw from the same stream."""
        return PushSum(self.cursor, rounds, self.persistent_weights)

    def __repr__(self):
        return (f"PushSum(rounds={self.rounds}, position={self.cursor.position}, "
                f"persistent_weights={self.persistent_weights})")


def apply_operator(op: AveragingOperator, vectors) -> np.ndarray:
    return op.apply(vectors)


def metropolis_weights(static_edges, n: int) -> np.ndarray:
    """Metropolis-Hastings weights of a connected undirected graph.

    ``static_edges`` is an iterable of ``(i, j)`` pairs; direction and
    self-loops are ignored when counting degrees.
    """
    adj = np.zeros((n, n), dtype=bool)
    for i, j in static_edges:
        if i != j:
            adj[i, j] = adj[j, i] = True
    if n > 1:
        n_comp, _ = connected_components(csr_matrix(adj), directed=False)
        if n_comp != 1:
            raise ValueError("graph is disconnected")
    deg = adj.sum(axis=1)
    W = np.where(adj, 1.0 / (1.0 + np.maximum.outer(deg, deg)), 0.0)
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return W


def estimate_operator_matrix(op: AveragingOperator, n: int) -> np.ndarray:
    """The ``n x n`` matrix of ``op`` obtained by probing with the basis vectors.

    Each column probe is a scalar per client; all ``n`` probes share the same
    rounds because the mixing is coordinate-wise.
    """
    return op.apply(np.eye(n))


def operator_deviation(theta_hat: np.ndarray) -> float:
    """Spectral norm of ``Theta - theta_hat`` for the exact averaging matrix ``Theta``."""
    n = theta_hat.shape[0]
    return float(np.linalg.norm(np.full((n, n), 1.0 / n) - theta_hat, ord=2))
