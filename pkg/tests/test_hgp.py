import numpy as np
import pytest

from pushgrad.consensus import (DoublyStochastic, PushSum, estimate_operator_matrix,
                                metropolis_weights, operator_deviation)
from pushgrad.experiments import Settings, estimate, graph_cursor, train
from pushgrad.hgp import HgpConfig, hgp_init, hgp_iterate, hgp_run, trace_errors
from pushgrad.innersolve import FederatedProblem, newton_consensus_solve
from pushgrad.objective import QuadraticCost
from pushgrad.oracle import estimate_bound_constants, fixed_point_reference, ift_hypergradient

from conftest import logistic_federation


@pytest.fixture(scope="module")
def optimum0(logistic0):
    clients, lam = logistic0
    return clients, lam, newton_consensus_solve(clients, lam)


def rel(a, b):
    a, b = np.concatenate(a), np.concatenate(b)
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_config_validation():
    for bad in (dict(M=-1), dict(S=0), dict(eta=0.0), dict(batch_size=0)):
        with pytest.raises(ValueError):
            HgpConfig(**bad)


def test_init_uses_local_outer_gradients(optimum0):
    clients, lam, x = optimum0
    problem = FederatedProblem(clients, x, lam)
    state = hgp_init(problem)
    for c, l, u, v in zip(clients, lam, state.u, state.v):
        np.testing.assert_array_equal(u, c.outer_grads(x, l)[0])
        np.testing.assert_array_equal(v, 0.0)


def test_zero_iterations_return_initial_v(optimum0):
    clients, lam, x = optimum0
    result = hgp_run(FederatedProblem(clients, x, lam), HgpConfig(M=0))
    for v in result.v:
        np.testing.assert_array_equal(v, 0.0)


def test_single_client_matches_fixed_point_recursion():
    clients, lam = logistic_federation(2, n_clients=1)
    x = newton_consensus_solve(clients, lam)
    out = hgp_run(FederatedProblem(clients, x, lam), HgpConfig(M=40)).v
    np.testing.assert_allclose(out[0], fixed_point_reference(clients, lam, x, 40, 1.0)[0],
                               rtol=1e-12, atol=1e-15)


def test_quadratic_u_closed_form():
    lam = np.array([0.5, 0.2, 0.9])
    cost = QuadraticCost(np.array([1.0, -1.0, 2.0]), target=np.array([3.0, 0.0, -1.0]))
    x = np.array([0.3, -0.2, 0.1])
    problem = FederatedProblem([cost], x, [lam])
    config = HgpConfig(M=1, eta=0.8)
    state = hgp_init(problem)
    u0 = state.u[0].copy()
    for m in range(1, 15):
        state = hgp_iterate(state, problem, config)
        np.testing.assert_allclose(state.u[0], (1 - 0.8 * lam) ** m * u0, rtol=1e-13)
    assert state.m == 14


def test_u_norm_envelope(optimum0):
    clients, lam, x = optimum0
    diag = estimate_bound_constants(clients, lam, x_star=x)
    cursor = graph_cursor(Settings(), 3, 1, "hgp")
    S, M = 3, 30
    replay = cursor.copy()
    devs = [operator_deviation(estimate_operator_matrix(PushSum(replay, S), 3)) for _ in range(M)]
    result = hgp_run(FederatedProblem(clients, x, lam, PushSum(cursor, S)),
                     HgpConfig(M=M, keep_trace=True))
    u0 = np.linalg.norm(result.u_norms[0])
    bound = u0
    for m in range(1, M + 1):
        bound *= (1 - diag.alpha_est) * (1 + devs[m - 1])
        assert np.linalg.norm(result.u_norms[m]) <= bound * (1 + 1e-12)


def test_exact_average_matches_closed_form(optimum0):
    clients, lam, x = optimum0
    out = hgp_run(FederatedProblem(clients, x, lam), HgpConfig(M=400)).v
    assert rel(out, ift_hypergradient(clients, lam)) <= 1e-6


def test_static_undirected_variant_matches_exact(optimum0):
    clients, lam, x = optimum0
    W = metropolis_weights([(0, 1), (1, 2)], 3)
    exact = hgp_run(FederatedProblem(clients, x, lam), HgpConfig(M=300)).v
    static = hgp_run(FederatedProblem(clients, x, lam, DoublyStochastic(W, 60)), HgpConfig(M=300)).v
    assert rel(static, exact) <= 1e-6


def test_zero_outer_gradient_is_absorbing():
    b = np.array([1.0, -2.0])
    lam = [np.array([1.0, 2.0]), np.array([0.5, 0.5])]
    clients = [QuadraticCost(b), QuadraticCost(b)]
    x = newton_consensus_solve(clients, lam)
    clients = [QuadraticCost(b, target=x), QuadraticCost(b, target=x)]
    op = PushSum(graph_cursor(Settings(), 2, 0, "hgp"), 2)
    for M in (1, 10, 50):
        for v in hgp_run(FederatedProblem(clients, x, lam, op), HgpConfig(M=M)).v:
            np.testing.assert_array_equal(v, 0.0)


def test_deterministic_given_seed(optimum0):
    clients, lam, x = optimum0
    runs = [estimate(clients, lam, np.tile(x, (3, 1)), Settings(M=30, S=5, batch=10), 4).v
            for _ in range(2)]
    np.testing.assert_array_equal(np.concatenate(runs[0]), np.concatenate(runs[1]))


def test_single_sample_and_persistent_weights_run(optimum0):
    clients, lam, x = optimum0
    out = estimate(clients, lam, np.tile(x, (3, 1)), Settings(M=200, S=10), 0,
                   batch_size=50, single_sample=True, persistent_weights=True).v
    assert rel(out, ift_hypergradient(clients, lam)) < 0.5


def test_trace_errors_shape(optimum0):
    clients, lam, x = optimum0
    result = hgp_run(FederatedProblem(clients, x, lam), HgpConfig(M=7, keep_trace=True))
    errors = trace_errors(result.trace, ift_hypergradient(clients, lam))
    assert errors.shape == (8,)
    assert errors[-1] < errors[0]


@pytest.fixture(scope="module")
def trained0(logistic0):
    clients, lam = logistic0
    return clients, lam, train(clients, lam, Settings(), 0)


# The two trend checks below run at the exact optimum: with a trained x the
# error bottoms out at the inner-solve error and the S ordering becomes noise.
def test_full_batch_error_nonincreasing_in_m(optimum0):
    clients, lam, x = optimum0
    x = np.tile(x, (3, 1))
    errors = trace_errors(estimate(clients, lam, x, Settings(), 0, M=300, keep_trace=True).trace,
                          ift_hypergradient(clients, lam))
    assert np.all(np.diff(errors[5:]) <= 1e-9)


def test_full_batch_error_decreases_in_rounds(optimum0):
    clients, lam, x = optimum0
    x = np.tile(x, (3, 1))
    ref = ift_hypergradient(clients, lam)
    errors = [rel(estimate(clients, lam, x, Settings(), 0, M=200, S=S).v, ref) for S in (3, 5, 10)]
    assert errors[0] > errors[1] > errors[2]


def test_minibatch_floor_shrinks_with_batch(trained0):
    clients, lam, x = trained0
    ref = ift_hypergradient(clients, lam)
    medians = []
    for b in (10, 100):
        errs = [rel(estimate(clients, lam, x, Settings(), seed, M=100, S=10, batch_size=b).v, ref)
                for seed in range(10)]
        medians.append(np.median(errs))
    assert medians[1] < medians[0]
