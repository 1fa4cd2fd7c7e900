import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pushgrad.experiments import Settings, make_clients
from pushgrad.synthdata import SyntheticConfig, generate_federation

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def logistic_federation(seed=0, reduction="mean", **config):
    data = generate_federation(SyntheticConfig(seed=seed, **config))
    clients = make_clients(data, "logistic", Settings(reduction=reduction))
    lam = [np.full(c.d_lambda, 0.1) for c in clients]
    return clients, lam


def mask_federation(seed=0, **config):
    data = generate_federation(SyntheticConfig(seed=seed, **config))
    clients = make_clients(data, "mask", Settings())
    lam = [np.ones(c.d_lambda) for c in clients]
    return clients, lam


@pytest.fixture(scope="session")
def logistic0():
    return logistic_federation(0)


@pytest.fixture(scope="session")
def mask0():
    return mask_federation(0)
