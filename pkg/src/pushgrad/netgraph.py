"""Time-varying directed communication graphs.

Edges are stored as boolean "send" matrices: ``send[s, j, i]`` is True when
client ``j`` sends to client ``i`` at step ``s`` (written ``j>i`` in the text
format). The in-neighbourhood of ``i`` at step ``s`` is the column
``send[s, :, i]``; its out-neighbourhood is the row ``send[s, i, :]``.
Self-loops are always present.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

# Steps are drawn in fixed-size blocks, each from its own seeded stream, so
# step ``s`` depends only on (rho, seed, s).
BLOCK_SIZE = 256


class EdgeProbabilityMatrix:
    """Per-step independent edge probabilities ``rho[i, j]`` for ``i -> j``."""

    def __init__(self, rho):
        rho = np.array(rho, dtype=float)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError(f"rho must be a square matrix, got shape {rho.shape}")
        if not np.all(np.isfinite(rho)) or rho.min() < 0.0 or rho.max() > 1.0:
            raise ValueError("rho entries must lie in [0, 1]")
        np.fill_diagonal(rho, 1.0)
        rho.setflags(write=False)
        self.rho = rho

    @property
    def n(self) -> int:
        return self.rho.shape[0]

    @classmethod
    def uniform(cls, n: int, low: float = 0.4, high: float = 0.8, seed: int = 0):
        """Off-diagonal probabilities drawn i.i.d. from U[low, high]."""
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(low, high, size=(n, n)))

    @classmethod
    def constant(cls, n: int, p: float):
        return cls(np.full((n, n), p))

    def __repr__(self):
        return f"EdgeProbabilityMatrix(n={self.n})"


@dataclass(frozen=True)
class GraphSchedule:
    """A finite sequence of directed edge sets ``E(1), ..., E(T)``."""

    send: np.ndarray  # (T, n, n) bool, send[s, j, i] <=> j -> i

    def __post_init__(self):
        send = np.array(self.send, dtype=bool)
        if send.ndim != 3 or send.shape[1] != send.shape[2]:
            raise ValueError(f"send must have shape (T, n, n), got {send.shape}")
        idx = np.arange(send.shape[1])
        send[:, idx, idx] = True
        send.setflags(write=False)
        object.__setattr__(self, "send", send)

    @property
    def n(self) -> int:
        return self.send.shape[1]

    @property
    def num_steps(self) -> int:
        return self.send.shape[0]

    def __len__(self):
        return self.num_steps

    def __getitem__(self, item):
        if isinstance(item, slice):
            return GraphSchedule(self.send[item])
        return self.send[item]

    def edges(self, step: int) -> set[tuple[int, int]]:
        """Edge set of one step as ``(sender, receiver)`` pairs."""
        j, i = np.nonzero(self.send[step])
        return set(zip(j.tolist(), i.tolist()))

    def in_neighbors(self, step: int, i: int) -> np.ndarray:
        return np.flatnonzero(self.send[step, :, i])

    def out_neighbors(self, step: int, i: int) -> np.ndarray:
        return np.flatnonzero(self.send[step, i, :])

    def mixing_matrices(self) -> np.ndarray:
        """Column-stochastic Push-Sum weights, ``P[s, i, j] = 1/|N_out_j|`` for ``j -> i``."""
        return mixing_matrices(self.send)

    @classmethod
    def from_edges(cls, n: int, steps):
        """Build from an iterable of per-step ``(sender, receiver)`` edge collections."""
        steps = list(steps)
        send = np.zeros((len(steps), n, n), dtype=bool)
        for s, edges in enumerate(steps):
            for j, i in edges:
                send[s, j, i] = True
        return cls(send)

    @classmethod
    def static(cls, adjacency, num_steps: int):
        """Repeat one ``send`` matrix ``num_steps`` times."""
        adjacency = np.asarray(adjacency, dtype=bool)
        return cls(np.broadcast_to(adjacency, (num_steps,) + adjacency.shape))


def mixing_matrices(send: np.ndarray) -> np.ndarray:
    send = np.asarray(send, dtype=float)
    out_degree = send.sum(axis=-1)  # row j: number of receivers of j
    return np.swapaxes(send / out_degree[..., :, None], -1, -2)


def _sample_block(rho: np.ndarray, seed: int, block: int) -> np.ndarray:
    n = rho.shape[0]
    rng = np.random.default_rng([seed, block])
    # uniforms are drawn in (step, i, j) C order; edge i -> j iff u < rho[i, j]
    u = rng.random((BLOCK_SIZE, n, n))
    send = u < rho
    idx = np.arange(n)
    send[:, idx, idx] = True
    return send


def sample_schedule(prob: EdgeProbabilityMatrix, num_steps: int, seed: int) -> GraphSchedule:
    """Sample ``num_steps`` graphs with edge ``i -> j`` present w.p. ``rho[i, j]``."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    return ScheduleStream(prob, seed).take(0, num_steps)


_CACHE_BLOCKS = 8


def _evict(cache: dict) -> None:
    while len(cache) >= _CACHE_BLOCKS:
        cache.pop(next(iter(cache)))


class ScheduleStream:
    """Unbounded, lazily sampled schedule; step ``s`` is a pure function of (rho, seed, s)."""

    def __init__(self, prob: EdgeProbabilityMatrix, seed: int):
        self.prob = prob
        self.seed = int(seed)
        self._blocks: dict[int, np.ndarray] = {}
        self._mixing: dict[int, np.ndarray] = {}

    @property
    def n(self) -> int:
        return self.prob.n

    def _block(self, b: int) -> np.ndarray:
        if b not in self._blocks:
            _evict(self._blocks)
            self._blocks[b] = _sample_block(self.prob.rho, self.seed, b)
        return self._blocks[b]

    def _mixing_block(self, b: int) -> np.ndarray:
        if b not in self._mixing:
            _evict(self._mixing)
            self._mixing[b] = mixing_matrices(self._block(b))
        return self._mixing[b]

    def take(self, start: int, count: int) -> GraphSchedule:
        return GraphSchedule(self._gather(self._block, start, count))

    def mixing(self, start: int, count: int) -> np.ndarray:
        return self._gather(self._mixing_block, start, count)

    @staticmethod
    def _gather(getter, start, count):
        parts = []
        s = start
        stop = start + count
        while s < stop:
            b, off = divmod(s, BLOCK_SIZE)
            take = min(BLOCK_SIZE - off, stop - s)
            parts.append(getter(b)[off:off + take])
            s += take
        return np.concatenate(parts, axis=0)


class FixedScheduleSource:
    """Adapts a finite ``GraphSchedule`` to the stream interface, cycling when exhausted."""

    def __init__(self, schedule: GraphSchedule):
        self.schedule = schedule
        self._mixing = schedule.mixing_matrices()

    @property
    def n(self) -> int:
        return self.schedule.n

    def _indices(self, start, count):
        return np.arange(start, start + count) % self.schedule.num_steps

    def take(self, start: int, count: int) -> GraphSchedule:
        return GraphSchedule(self.schedule.send[self._indices(start, count)])

    def mixing(self, start: int, count: int) -> np.ndarray:
        return self._mixing[self._indices(start, count)]


@dataclass
class ScheduleCursor:
    """Shared read position into a schedule source.

    Every Push-Sum round advances the cursor by one step, so successive
    operator applications see fresh graphs. ``copy()`` snapshots the position
    for replay.
    """

    source: ScheduleStream | FixedScheduleSource
    position: int = 0

    @property
    def n(self) -> int:
        return self.source.n

    def next_mixing(self, count: int) -> np.ndarray:
        """Mixing matrices for the next ``count`` steps; advances the cursor."""
        mats = self.source.mixing(self.position, count)
        self.position += count
        return mats

    def peek_schedule(self, count: int) -> GraphSchedule:
        return self.source.take(self.position, count)

    def copy(self) -> "ScheduleCursor":
        return ScheduleCursor(self.source, self.position)


def check_b_strong_connectivity(schedule: GraphSchedule, b: int) -> bool:
    """True iff the union graph of every complete length-``b`` window is strongly connected.

    A trailing partial window is ignored.
    """
    if b < 1:
        raise ValueError("b must be >= 1")
    if schedule.num_steps < b:
        raise ValueError(f"schedule has {schedule.num_steps} steps, fewer than b={b}")
    for t in range(schedule.num_steps // b):
        union = schedule.send[t * b:(t + 1) * b].any(axis=0)
        n_comp, _ = connected_components(csr_matrix(union), directed=True, connection="strong")
        if n_comp != 1:
            return False
    return True


def save_schedule(schedule: GraphSchedule, path) -> None:
    """Write one line per step with ``j>i`` tokens (``j`` sends to ``i``)."""
    lines = [f"# pushgrad graph schedule v1 n={schedule.n}"]
    for s in range(schedule.num_steps):
        j, i = np.nonzero(schedule.send[s])
        lines.append(" ".join(f"{a}>{c}" for a, c in zip(j.tolist(), i.tolist())))
    Path(path).write_text("\n".join(lines) + "\n")


def load_schedule(path, n: int | None = None) -> GraphSchedule:
    """Parse the text format written by :func:`save_schedule`.

    ``n`` is read from the header comment when present; otherwise it must be
    given or is inferred from the largest client index.
    """
    steps = []
    header_n = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if line.startswith("#"):
            for tok in line.split():
                if tok.startswith("n="):
                    header_n = int(tok[2:])
            continue
        if not line:
            continue
        edges = []
        for tok in line.split():
            try:
                a, c = tok.split(">")
                edges.append((int(a), int(c)))
            except ValueError as exc:
                raise ValueError(f"bad edge token {tok!r} in {path}") from exc
        steps.append(edges)
    if not steps:
        raise ValueError(f"no steps found in {path}")
    if n is None:
        n = header_n
    if n is None:
        n = 1 + max(max(max(e) for e in edges) for edges in steps if edges)
    for edges in steps:
        for a, c in edges:
            if not (0 <= a < n and 0 <= c < n):
                raise ValueError(f"edge {a}>{c} out of range for n={n}")
    return GraphSchedule.from_edges(n, steps)
