import numpy as np
import pytest

from pushgrad.experiments import (Adam, Settings, derive_seed, graph_cursor, make_clients,
                                  sweep_ms)


def test_derive_seed_stable_and_label_dependent():
    assert derive_seed(3, "rho") == derive_seed(3, "rho")
    assert derive_seed(3, "rho") != derive_seed(3, "train")
    assert derive_seed(3, "rho") != derive_seed(4, "rho")


def test_training_and_estimation_streams_differ_but_share_probabilities():
    s = Settings()
    a, b = graph_cursor(s, 3, 0, "train"), graph_cursor(s, 3, 0, "hgp")
    np.testing.assert_array_equal(a.source.prob.rho, b.source.prob.rho)
    assert not np.array_equal(a.next_mixing(20), b.next_mixing(20))


def test_graph_seed_pins_probabilities():
    s = Settings(graph_seed=5)
    np.testing.assert_array_equal(graph_cursor(s, 3, 0, "hgp").source.prob.rho,
                                  graph_cursor(s, 3, 1, "hgp").source.prob.rho)


def test_adam_first_step_has_learning_rate_size():
    params = Adam(lr=0.1).step(np.zeros(3), np.array([2.0, -0.5, 1e-3]))
    np.testing.assert_allclose(params, [-0.1, 0.1, -0.1], rtol=1e-4)


def test_make_clients_rejects_unknown_kind():
    with pytest.raises(ValueError):
        make_clients([], "tree", Settings())


def test_sweep_failure_cell_is_recorded(monkeypatch):
    import pushgrad.experiments as ex
    real = ex.estimate

    def flaky(*args, S, **kw):
        if S == 2:
            raise ArithmeticError("boom")
        return real(*args, S=S, **kw)

    monkeypatch.setattr(ex, "estimate", flaky)
    rows = sweep_ms(Settings(inner_steps=100, M_grid=[1, 5], S_grid=[2, 3]), 0)
    assert [(r["S"], r["M"]) for r in rows] == [(2, 1), (2, 5), (3, 1), (3, 5)]
    assert all(r["error"] == "boom" and np.isnan(r["error_l2"]) for r in rows[:2])
    assert all(r["error"] == "" and np.isfinite(r["error_l2"]) for r in rows[2:])


def test_default_settings():
    from pushgrad.synthdata import SyntheticConfig
    s = Settings()
    assert (s.M, s.S, s.eta, s.inner_steps, s.top_k) == (500, 100, 1.0, 5000, 50)
    assert (s.rho_low, s.rho_high) == (0.4, 0.8)
    c = SyntheticConfig()
    assert (c.n_components, c.dirichlet_alpha, c.input_dim) == (3, 0.4, 5)
    assert (c.train_per_client, c.val_per_client) == (100, 100)
    assert Adam().betas == (0.9, 0.999)
