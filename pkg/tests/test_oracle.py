import numpy as np
import pytest

from pushgrad.innersolve import newton_consensus_solve
from pushgrad.objective import QuadraticCost
from pushgrad.oracle import (OracleDivergenceError, estimate_bound_constants,
                             finite_difference_hypergradient, fixed_point_reference,
                             ift_hypergradient)

from conftest import logistic_federation

# closed-form hyper-gradient of the seed-0 federation at lambda = 0.1 (one
# client's block; the logistic cross-Jacobian depends only on the shared x*)
IFT_SEED0_BLOCK = np.array([0.01004931536703511, 0.0111361235505663, 0.05923600275808116,
                            -0.00229182333900184, 0.01826233995305749])


def rel(a, b):
    a, b = np.concatenate(a), np.concatenate(b)
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_frozen_closed_form(logistic0):
    clients, lam = logistic0
    for block in ift_hypergradient(clients, lam):
        np.testing.assert_allclose(block, IFT_SEED0_BLOCK, rtol=1e-8)


def test_closed_form_equals_long_fixed_point(logistic0):
    clients, lam = logistic0
    x = newton_consensus_solve(clients, lam)
    assert rel(fixed_point_reference(clients, lam, x, 10000, 1.0),
               ift_hypergradient(clients, lam, x)) <= 1e-8


def test_closed_form_equals_finite_differences(logistic0):
    clients, lam = logistic0
    assert rel(finite_difference_hypergradient(clients, lam), ift_hypergradient(clients, lam)) <= 1e-4


def test_zero_outer_gradient_gives_zero():
    b = np.array([1.0, 2.0])
    lam = [np.array([1.0, 3.0])]
    x = newton_consensus_solve([QuadraticCost(b)], lam)
    for v in ift_hypergradient([QuadraticCost(b, target=x)], lam):
        np.testing.assert_allclose(v, 0.0, atol=1e-15)


def quadratic_problem():
    rng = np.random.default_rng(0)
    clients = [QuadraticCost(rng.normal(size=3), target=rng.normal(size=3)) for _ in range(3)]
    lam = [rng.uniform(0.5, 2.0, size=3) for _ in range(3)]
    return clients, lam


def quadratic_closed_form(clients, lam):
    total = sum(lam)
    x = -sum(c.b for c in clients) / total
    grad = sum(x - c.target for c in clients) * (-x / total)
    return [grad.copy() for _ in clients]


def test_quadratic_finite_differences_match_hand_formula():
    clients, lam = quadratic_problem()
    expected = quadratic_closed_form(clients, lam)
    fd = finite_difference_hypergradient(clients, lam)
    np.testing.assert_allclose(np.concatenate(fd), np.concatenate(expected), atol=1e-7)
    np.testing.assert_allclose(np.concatenate(ift_hypergradient(clients, lam)),
                               np.concatenate(expected), rtol=1e-12)


def test_fixed_point_zero_iterations(logistic0):
    clients, lam = logistic0
    for v in fixed_point_reference(clients, lam, np.zeros(5), 0, 1.0):
        np.testing.assert_array_equal(v, 0.0)


def test_fixed_point_geometric_rate(logistic0):
    clients, lam = logistic0
    x = newton_consensus_solve(clients, lam)
    alpha = estimate_bound_constants(clients, lam, x_star=x).alpha_est
    _, trace = fixed_point_reference(clients, lam, x, 40, 1.0, return_trace=True)
    steps = np.array([np.linalg.norm(np.concatenate(b) - np.concatenate(a))
                      for a, b in zip(trace, trace[1:])])
    assert steps[-1] > 1e-13  # still above rounding
    ratios = steps[11:] / steps[10:-1]
    assert np.all(ratios <= 1 - alpha + 1e-9)


def test_fixed_point_divergence_detected():
    clients, lam = logistic_federation(0, reduction="sum")
    x = newton_consensus_solve(clients, lam)
    with pytest.raises(OracleDivergenceError):
        fixed_point_reference(clients, lam, x, 200, 1.0)


def test_bound_constants_full_batch_have_no_deviation(logistic0):
    clients, lam = logistic0
    diag = estimate_bound_constants(clients, lam)
    assert diag.kappa_x_est == 0.0 and diag.kappa_lambda_est == 0.0 and diag.mu_est == 0.0
    assert 0 < diag.eta_alpha_product < 1
    assert set(diag.as_row()) == {"alpha", "beta", "kappa_x", "kappa_lambda", "mu",
                                  "eta_alpha_product"}


def test_bound_constants_quadratic():
    clients, lam = quadratic_problem()
    x = newton_consensus_solve(clients, lam)
    diag = estimate_bound_constants(clients, lam, x_star=x)
    assert diag.alpha_est == pytest.approx(min(l.min() for l in lam), rel=1e-12)
    assert diag.beta_est == pytest.approx(np.abs(x).max(), rel=1e-12)


def test_bound_constants_grow_as_batches_shrink(logistic0):
    clients, lam = logistic0
    kx = []
    for b in (10, 50, 100):
        kx.append(np.median([estimate_bound_constants(clients, lam, 10, b, seed=s).kappa_x_est
                             for s in range(5)]))
    assert kx[0] > kx[1] > kx[2]


def test_mu_formula(logistic0):
    clients, lam = logistic0
    d = estimate_bound_constants(clients, lam, 10, 20)
    expected = np.sqrt(d.kappa_lambda_est ** 2 + d.kappa_x_est ** 2 * d.beta_est ** 2 / d.alpha_est ** 2)
    assert d.mu_est == pytest.approx(expected)
