import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from constrained_nn.data_io import make_dataset
from constrained_nn.evaluation import evaluate_net
from constrained_nn.losses import OuterConstraint, ScalarLoss
from constrained_nn.model import forward, grad_theta, init_net, make_rng, project_onto_ball
from constrained_nn.optimizer import (NonFiniteGradient, Samples, StepSizes, draw_samples, enumerate_samples,
                                      grad_lambda, grad_theta_lagrangian, grad_xi, lagrangian, run)
from constrained_nn.problem import (ConstraintProblem, DistributionSpec, build_fairness_problem,
                                    build_imbalance_problem, build_unconstrained_problem, constraint_values,
                                    exact_rates, exact_surrogate_rates)


@pytest.fixture
def fair(toy_dataset):
    return build_fairness_problem(toy_dataset, D=2.0)


def moved_net(d, seed, D=2.0, m=12):
    net = init_net(m, d, D, seed)
    delta = np.random.default_rng(seed).normal(size=net.theta.size)
    return net.with_theta(net.theta0 + 0.5 * D * delta / np.linalg.norm(delta))


def full_batch_theta_gradient(problem, net, lam):
    """Direct per-row sum of the chain rule, independent of weighted_grad."""
    ds = problem.dataset
    J = problem.J
    total = np.zeros_like(net.theta)
    for k, spec in enumerate(problem.samplers):
        loss = problem.objective if k == 0 else problem.surrogates[k - 1]
        weight = 1.0 if k == 0 else lam[J + k - 1]
        for r in spec.rows:
            y = forward(net, ds.X[r])
            total += weight * loss.grad(y, ds.z[r]) * grad_theta(net, ds.X[r]) / spec.size
    return total


def test_theory_step_sizes_fairness():
    ds = make_dataset(np.eye(4)[[0, 1, 2, 3, 0, 1]], np.array([1, 1, -1, 1, 1, -1.0]),
                      np.array([True, True, True, False, False, False]))
    p = build_fairness_problem(ds, D=10.0)
    # L = max(1, 1, |1|+|1|) = 2; C = max(log(1+e^20), 1+20, 20) = 21; K = 4, J = 2, kappa = 1
    T = 1000
    s = StepSizes.from_theory(p, T)
    assert np.isclose(s.theta, np.sqrt(100 / (4 * 1 * 4 * 2 * T)))
    assert np.isclose(s.xi, np.sqrt(21 / (2 * T * 1 * 2 * 2 * 2)))
    assert np.isclose(s.lam, np.sqrt(1 / (2 * 2 * 21 * 2 * np.sqrt(2) * T)))


def test_step_sizes_finite_without_constraints(toy_dataset):
    s = StepSizes.from_theory(build_unconstrained_problem(toy_dataset, D=1.0), 100)
    assert all(np.isfinite([s.theta, s.xi, s.lam]))
    assert s.override({"theta": 0.5}).theta == 0.5
    with pytest.raises(ValueError):
        s.override({"eta": 1.0})


def test_zero_multipliers_leave_objective_term(fair):
    net = moved_net(4, 0)
    samples = enumerate_samples(fair)
    lam = np.zeros(fair.J + fair.K)
    obj_only = build_unconstrained_problem(fair.dataset, D=2.0)
    expected = grad_theta_lagrangian(net, np.zeros(0), obj_only, Samples(samples.objective, []))
    assert np.allclose(grad_theta_lagrangian(net, lam, fair, samples), expected, atol=1e-15)


@given(seed=st.integers(0, 10_000))
def test_enumerated_theta_gradient_matches_full_batch(seed, ):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(16, 4))
    ds = make_dataset(X, np.array([1.0, -1.0] * 8), np.array([True] * 8 + [False] * 8))
    p = build_fairness_problem(ds, D=2.0)
    net = moved_net(4, seed)
    lam = rng.uniform(0, 1, p.J + p.K)
    assert np.allclose(grad_theta_lagrangian(net, lam, p, enumerate_samples(p)),
                       full_batch_theta_gradient(p, net, lam), atol=1e-10, rtol=0)


def test_hinge_objective_negates_when_label_flips():
    X = np.array([[0.3, 0.2, 0.1]])
    net = moved_net(3, 4, m=6)
    y = forward(net, X[0])
    assert abs(y) < 1  # inside the margin for both labels
    grads = []
    for z in (1.0, -1.0):
        ds = make_dataset(X, np.array([z]), scale=False)
        p = build_unconstrained_problem(ds, "hinge", D=2.0)
        grads.append(grad_theta_lagrangian(net, np.zeros(0), p, Samples(np.array([0]), [])))
    assert np.allclose(grads[0], -grads[1])


def test_grad_xi_examples(fair):
    xi = np.array([0.1, -0.3, 0.2, 0.4])
    assert np.all(grad_xi(xi, np.zeros(6), fair) == 0)
    lam = np.array([0.3, 0.7, 0.1, 0.2, 0.3, 0.4])
    assert np.array_equal(grad_xi(xi, lam, fair), grad_xi(-xi, lam, fair))
    assert np.allclose(grad_xi(xi, lam, fair), [0.3 - 0.1, 0.7 - 0.2, 0.7 - 0.3, 0.3 - 0.4])
    ds = fair.dataset
    one = ConstraintProblem(ScalarLoss("zero"), (ScalarLoss("zero-one-match"),), (ScalarLoss("hinge"),),
                            (OuterConstraint("linear-combination", (1.0,)),),
                            (DistributionSpec(ds), DistributionSpec(ds)), D=1.0)
    assert np.allclose(grad_xi(np.array([0.2]), np.array([0.6, 0.25]), one), [0.35])


def test_grad_lambda_enumerated_matches_rates(fair):
    net = moved_net(4, 1)
    xi = np.array([0.1, -0.3, 0.2, 0.4])
    _, r = exact_rates(fair, net)
    g = grad_lambda(net, xi, fair, enumerate_samples(fair))
    assert np.allclose(g, np.concatenate([constraint_values(fair, xi), r - xi]), atol=1e-12)
    # stationary point of the lambda player
    sym = np.array([r[0], r[1], -r[0], -r[1]])
    if np.allclose(constraint_values(fair, r), 0):
        assert np.allclose(grad_lambda(net, r, fair, enumerate_samples(fair)), 0)
    assert sym.shape == (4,)


def test_grad_lambda_zero_at_stationary_point(toy_dataset):
    ds = toy_dataset
    p = ConstraintProblem(ScalarLoss("zero"), (ScalarLoss("zero-one-match"),), (ScalarLoss("reverse-hinge", offset=1.0),),
                          (OuterConstraint("linear-combination", (0.0,)),),
                          (DistributionSpec(ds), DistributionSpec(ds)), D=1.0)
    net = moved_net(4, 2, D=1.0)
    _, r = exact_rates(p, net)
    assert np.allclose(grad_lambda(net, r, p, enumerate_samples(p)), 0.0)


def test_grad_lambda_single_indicator_sample(fair):
    net = moved_net(4, 3)
    xi = np.full(4, 0.5)
    rng = make_rng(0)
    for _ in range(20):
        g = grad_lambda(net, xi, fair, draw_samples(fair, rng))
        assert set(np.round(g[[2, 4]], 12)) <= {-0.5, 0.5}
        assert set(np.round(g[[3, 5]], 12)) <= {-0.5, -1.5}


def test_lambda_ascent_increases_lagrangian(fair):
    net = moved_net(4, 5)
    r0, r = exact_rates(fair, net)
    xi = np.array([-0.4, 0.3, 0.1, -0.2])
    lam = np.zeros(6)
    samples = enumerate_samples(fair)
    values = [lagrangian(fair, r0, r, xi, lam)]
    for _ in range(30):
        lam = fair.project_lambda(lam + 0.1 * grad_lambda(net, xi, fair, samples))
        values.append(lagrangian(fair, r0, r, xi, lam))
    assert np.all(np.diff(values) >= -1e-12)
    assert values[-1] > values[0]


def test_run_with_zero_iterations(fair):
    net = init_net(8, 4, 2.0, 0)
    res = run(fair, net, 0)
    assert len(res.trace) == 0 and res.snapshots == [] and np.array_equal(res.state.theta, net.theta0)


def test_run_rejects_mismatched_radius(fair):
    with pytest.raises(ValueError, match="radius"):
        run(fair, init_net(8, 4, 3.0, 0), 10)


def test_run_is_deterministic_and_stays_in_domains(fair):
    net = init_net(8, 4, 2.0, 0)
    a = run(fair, net, 600, seed=3, log_every=20, burn_in=100, step_overrides={"theta": 0.5, "lam": 0.2})
    b = run(fair, net, 600, seed=3, log_every=20, burn_in=100, step_overrides={"theta": 0.5, "lam": 0.2})
    assert a.trace.rows == b.trace.rows
    assert len(a.snapshots) == 25 and a.snapshot_iterations[0] == 120
    bound = fair.xi_bound
    for row in a.trace.rows:
        assert row["theta_dist"] <= 2.0 + 1e-9
        assert all(abs(row[f"xi_{k + 1}"]) <= bound[k] + 1e-12 for k in range(4))
        assert all(0 <= row[f"lambda_{i + 1}"] <= 1.0 for i in range(6))
    assert np.allclose(a.trace.running_average_rates(), a.trace.rate_matrix().mean(axis=0))


def test_update_order_does_not_matter(fair):
    """Reference loop that applies the lambda, xi and theta updates in reverse order."""
    net = init_net(8, 4, 2.0, 1)
    T = 200
    res = run(fair, net, T, seed=9, log_every=T, burn_in=0, step_overrides={"theta": 0.3, "xi": 0.05, "lam": 0.1})
    steps = res.state.steps
    rng = make_rng(9)
    theta, xi, lam = net.theta0.copy(), np.zeros(4), np.zeros(6)
    for _ in range(T):
        s_theta, s_lam = draw_samples(fair, rng), draw_samples(fair, rng)
        cur = net.with_theta(theta)
        g_t = grad_theta_lagrangian(cur, lam, fair, s_theta)
        g_x = grad_xi(xi, lam, fair)
        g_l = grad_lambda(cur, xi, fair, s_lam)
        lam = np.clip(lam + steps.lam * g_l, 0, fair.kappa)
        xi = np.clip(xi - steps.xi * g_x, -fair.xi_bound, fair.xi_bound)
        theta = project_onto_ball(theta - steps.theta * g_t, net.theta0, net.D)
    assert np.array_equal(theta, res.state.theta)
    assert np.array_equal(xi, res.state.xi) and np.array_equal(lam, res.state.lam)


def test_separable_data_is_fit_without_constraints():
    rng = np.random.default_rng(0)
    w = np.array([1.0, -1.0, 0.5])
    X = rng.normal(size=(40, 3))
    X = X[np.abs(X @ w) > 0.2]  # keep a margin
    z = np.where(X @ w > 0, 1.0, -1.0)
    ds = make_dataset(X, z)
    net = init_net(64, 3, 20.0, 0)
    res = run(build_unconstrained_problem(ds, "hinge", D=20.0), net, 2000, seed=0, log_every=100, burn_in=0)
    assert evaluate_net(res.net, ds)["accuracy"] == 1.0
    tail = res.trace.column("objective")[-5:]
    assert tail[-1] <= res.trace.column("objective")[0]


def test_non_finite_gradient_aborts_with_trace(toy_dataset):
    p = build_unconstrained_problem(toy_dataset, D=1.0)
    net = init_net(4, 4, 1.0, 0)
    with pytest.raises(NonFiniteGradient) as err:
        run(p, net, 5, step_overrides={"theta": np.inf}, log_every=1)
    assert err.value.trace is not None


def test_imbalance_problem_runs(toy_dataset):
    p = build_imbalance_problem(toy_dataset, "g-mean", D=1.0)
    res = run(p, init_net(8, 4, 1.0, 0), 300, seed=0, log_every=50, burn_in=0)
    assert len(res.snapshots) == 6 and np.all(np.isfinite(res.state.lam))


def test_trace_csv_round_trip(fair, tmp_path):
    res = run(fair, init_net(8, 4, 2.0, 0), 100, seed=0, log_every=10, burn_in=0)
    res.trace.to_csv(tmp_path / "t.csv")
    import csv
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert len(rows) == 10 and float(rows[-1]["objective"]) == pytest.approx(res.trace.rows[-1]["objective"])


def test_batched_estimator_unbiased_over_all_pairs():
    """Averaging over every ordered pair of rows equals the exact gradient (batch size 2)."""
    X = np.random.default_rng(4).normal(size=(6, 3))
    ds = make_dataset(X, np.array([1, -1, 1, 1, -1, 1.0]))
    p = build_unconstrained_problem(ds, D=1.0)
    net = moved_net(3, 0, D=1.0, m=5)
    grads = [grad_theta_lagrangian(net, np.zeros(0), p, Samples(np.array(pair), []))
             for pair in itertools.product(range(6), repeat=2)]
    assert np.allclose(np.mean(grads, axis=0), full_batch_theta_gradient(p, net, np.zeros(0)), atol=1e-12)
    assert exact_surrogate_rates(p, net).size == 0
