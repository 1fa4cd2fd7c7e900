"""Heterogeneous synthetic binary-classification federation.

Each of ``n_components`` latent distributions has Gaussian inputs
``N(mu_c, I)`` with ``mu_c ~ N(0, I)`` and a logistic labelling model with
separator ``w_c ~ N(0, I)``. A client draws its component mixture from a
symmetric Dirichlet and samples every instance from that mixture.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class SyntheticConfig:
    n_clients: int = 3
    n_components: int = 3
    dirichlet_alpha: float = 0.4
    input_dim: int = 5
    train_per_client: int = 100
    val_per_client: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("n_clients", "n_components", "input_dim", "train_per_client", "val_per_client"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.dirichlet_alpha > 0:
            raise ValueError("dirichlet_alpha must be positive")


class ClientData(NamedTuple):
    train_X: np.ndarray
    train_y: np.ndarray
    val_X: np.ndarray
    val_y: np.ndarray
    mixture: np.ndarray | None = None


def generate_federation(config: SyntheticConfig) -> list[ClientData]:
    rng = np.random.default_rng(config.seed)
    d, C = config.input_dim, config.n_components
    means = rng.standard_normal((C, d))
    separators = rng.standard_normal((C, d))

    def draw(mixture, count):
        comp = rng.choice(C, size=count, p=mixture)
        X = means[comp] + rng.standard_normal((count, d))
        p = expit(np.einsum("nd,nd->n", X, separators[comp]))
        y = (rng.random(count) < p).astype(float)
        return X, y

    clients = []
    for _ in range(config.n_clients):
        mixture = rng.dirichlet(np.full(C, config.dirichlet_alpha))
        train_X, train_y = draw(mixture, config.train_per_client)
        val_X, val_y = draw(mixture, config.val_per_client)
        clients.append(ClientData(train_X, train_y, val_X, val_y, mixture))
    return clients
