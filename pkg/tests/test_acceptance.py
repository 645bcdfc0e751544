"""End-to-end acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line that is repeated in the terminal summary.
"""

import itertools
import time

import numpy as np
import pytest

from constrained_nn.cli import cmd_evaluate, cmd_shrink, cmd_train, cmd_verify_bound
from constrained_nn.config import LinearizationConfig, RegretConfig
from constrained_nn.data_io import make_dataset
from constrained_nn.linearization import (ScalingExperiment, estimate_linearization_errors, estimate_output_bound,
                                          fit_scaling_exponent)
from constrained_nn.model import forward, grad_theta, init_net
from constrained_nn.online import QuadraticFamily, regret_slope_experiment
from constrained_nn.optimizer import Samples, enumerate_samples, grad_lambda, grad_theta_lagrangian
from constrained_nn.problem import (build_fairness_problem, build_imbalance_problem, constraint_values,
                                    exact_rates)
from constrained_nn.stochastic import ShrinkInfeasible, ShrinkInstance, shrink

from acceptance_report import record
from lp_oracle import brute_force_optimum, random_shrink_instance

pytestmark = pytest.mark.acceptance


def check(number, limit, ok, detail, t0):
    elapsed = time.perf_counter() - t0
    within = elapsed < limit
    record(number, ok and within, f"{detail}; runtime limit {limit:g}s", elapsed)
    assert ok, detail
    assert within, f"runtime {elapsed:.1f}s exceeds {limit}s"


def test_gradient_matches_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, pairs = 0.0, 0
    while pairs < 200:
        m, d = int(rng.integers(2, 65)), int(rng.integers(3, 17))
        net = init_net(m, d, 1.0, int(rng.integers(0, 2**31)))
        net = net.with_theta(net.theta0 + rng.normal(size=net.theta.size) * 0.3 / np.sqrt(net.theta.size))
        x = rng.normal(size=d)
        x *= rng.uniform(0.2, 1.0) / np.linalg.norm(x)
        if np.min(np.abs(net.hidden @ x)) <= 1e-3:
            continue
        g = grad_theta(net, x)
        fd = np.empty_like(g)
        for i in range(g.size):
            e = np.zeros_like(g)
            e[i] = 1e-6
            fd[i] = (forward(net.with_theta(net.theta + e), x) - forward(net.with_theta(net.theta - e), x)) / 2e-6
        scale = max(np.linalg.norm(g), np.linalg.norm(fd))
        err = np.linalg.norm(g - fd) / scale if scale > 0 else 0.0
        worst = max(worst, err)
        pairs += 1
    check(1, 10, worst < 1e-5, f"max relative error {worst:.2e} over 200 pairs (< 1e-5)", t0)


def test_linearization_scaling():
    t0 = time.perf_counter()
    cfg = LinearizationConfig()
    exp = ScalingExperiment(m_grid=cfg.m_grid, D_grid=(cfg.D,), d=cfg.d, replicates=cfg.replicates,
                            x_per_init=cfg.x_per_init, seed=cfg.seed)
    cells = estimate_linearization_errors(exp)
    zero = estimate_linearization_errors(ScalingExperiment(m_grid=cfg.m_grid, D_grid=(cfg.D,), d=cfg.d,
                                                           replicates=cfg.replicates, x_per_init=cfg.x_per_init,
                                                           rho_fraction=0.0, seed=cfg.seed))
    sq, sq_se = fit_scaling_exponent(cells, "m", "sq_err")
    gr, gr_se = fit_scaling_exponent(cells, "m", "grad_err")
    lo, hi = cfg.slope_band
    zero_ok = all(c.sq_err == 0.0 and c.grad_err == 0.0 for c in zero)
    ok = lo <= sq <= hi and lo <= gr <= hi and zero_ok
    detail = (f"sq_err slope {sq:.3f} +/- {sq_se:.3f}, grad_err slope {gr:.3f} +/- {gr_se:.3f}, "
              f"band [{lo}, {hi}], zero at init {zero_ok}")
    check(2, 300, ok, detail, t0)


def test_output_boundedness():
    t0 = time.perf_counter()
    cells = estimate_output_bound((2**6, 2**10, 2**14), d=16, replicates=2000, threshold=10.0)
    means = [c.mean_abs for c in cells]
    ratio = max(means) / min(means)
    markov = all(c.markov_ok for c in cells)
    detail = (f"E|y| = {', '.join(f'{v:.4f}' for v in means)} (ratio {ratio:.3f} <= 2), "
              f"tail probs {[c.tail_prob for c in cells]} within Markov + 3 s.e.: {markov}")
    check(3, 60, ratio <= 2 and markov, detail, t0)


def test_regret_bound():
    t0 = time.perf_counter()
    cfg = RegretConfig()
    fam = dict(dim=cfg.dim, radius=cfg.radius, center_norm=cfg.center_norm, noise_radius=cfg.noise_radius)
    seeds = range(cfg.seeds)
    clean = regret_slope_experiment(QuadraticFamily(**fam), cfg.T_grid, seeds)
    biased = regret_slope_experiment(QuadraticFamily(**fam, bias_norm=0.1), cfg.T_grid, seeds)
    below = bool(np.all(clean.mean_regret <= clean.bound))
    lo, hi = cfg.slope_band
    T_grid = list(cfg.T_grid)
    r_hi, r_ref = biased.mean_regret[T_grid.index(2**13)], biased.mean_regret[T_grid.index(2**9)]
    plateau = r_hi > 0.5 * r_ref
    ok = below and lo <= clean.slope <= hi and plateau
    detail = (f"below bound at every T: {below}, slope {clean.slope:.3f} in [{lo}, {hi}], "
              f"biased regret {r_hi:.5f} at 2^13 vs {r_ref:.5f} at 2^9")
    check(4, 120, ok, detail, t0)


def _enumeration_gap(problem, net, lam, xi):
    """Max deviation between the mean over every joint sampler outcome and the full-batch gradients."""
    pools = [problem.samplers[0].rows] + [problem.samplers[k].rows for k in range(1, problem.K + 1)]
    g_theta = np.zeros_like(net.theta)
    g_lam = np.zeros(problem.J + problem.K)
    count = 0
    for outcome in itertools.product(*pools):
        s = Samples(np.array([outcome[0]]), [np.array([i]) for i in outcome[1:]])
        g_theta += grad_theta_lagrangian(net, lam, problem, s)
        g_lam += grad_lambda(net, xi, problem, s)
        count += 1
    g_theta /= count
    g_lam /= count
    exact = enumerate_samples(problem)
    full_theta = grad_theta_lagrangian(net, lam, problem, exact)
    _, r = exact_rates(problem, net)
    full_lam = np.concatenate([constraint_values(problem, xi), r - xi])
    return max(np.abs(g_theta - full_theta).max(), np.abs(g_lam - full_lam).max()), count


def test_estimators_unbiased():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    gaps = []
    # fairness: 12 rows, three positives per group
    X = rng.normal(size=(12, 4))
    z = np.array([1, 1, 1, -1, -1, -1] * 2, dtype=float)
    g = np.array([True] * 6 + [False] * 6)
    fair = build_fairness_problem(make_dataset(X, z, g), D=2.0)
    # imbalance: 16 rows
    X2 = rng.normal(size=(16, 3))
    imb = build_imbalance_problem(make_dataset(X2, np.array([1.0, -1.0] * 8)), "g-mean", D=2.0)
    total = 0
    for problem in (fair, imb):
        net = init_net(10, problem.dataset.d, 2.0, 1)
        net = net.with_theta(net.theta0 + rng.normal(size=net.theta.size) * 0.2)
        lam = rng.uniform(0, problem.kappa, problem.J + problem.K)
        xi = rng.uniform(-1, 1, problem.K) * problem.xi_bound
        gap, n = _enumeration_gap(problem, net, lam, xi)
        gaps.append(gap)
        total += n
    worst = max(gaps)
    check(5, 5, worst <= 1e-10, f"max deviation {worst:.2e} over {total} enumerated outcomes (<= 1e-10)", t0)


def test_shrink_lp_against_enumeration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst, sparsity_ok, reports_ok, n_infeasible = 0.0, True, True, 0
    for _ in range(500):
        c0, cj, eps = random_shrink_instance(rng)
        best = brute_force_optimum(c0, cj, eps)
        try:
            p = shrink(ShrinkInstance(c0, cj, eps))
        except ShrinkInfeasible:
            n_infeasible += 1
            reports_ok &= best is None
            continue
        if best is None:
            reports_ok = False
            continue
        worst = max(worst, abs(c0 @ p - best))
        sparsity_ok &= np.count_nonzero(p) <= cj.shape[0] + 1
    ok = worst <= 1e-8 and sparsity_ok and reports_ok and n_infeasible > 0
    detail = (f"max objective gap {worst:.2e}, nnz <= J+1: {sparsity_ok}, "
              f"{n_infeasible} infeasible instances reported correctly: {reports_ok}")
    check(6, 30, ok, detail, t0)


@pytest.fixture(scope="module")
def fairness_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("fairness")
    t0 = time.perf_counter()
    cmd_train(None, run_dir, None, False)
    rows = cmd_evaluate(run_dir, draws=10_000)
    return run_dir, rows, time.perf_counter() - t0


def _row(rows, classifier, mode="expected", split="train"):
    return next(r for r in rows if r["classifier"] == classifier and r["mode"] == mode and r["split"] == split)


def test_fairness_training(fairness_run):
    run_dir, rows, elapsed = fairness_run
    t0 = time.perf_counter() - elapsed
    tst, base = _row(rows, "T-Stoch"), _row(rows, "Unconstrained T-Stoch")
    gap_ok = tst["recall_gap"] <= 0.5 * base["recall_gap"]
    acc_ok = abs(tst["accuracy"] - base["accuracy"]) <= 0.05
    detail = (f"T-Stoch gap {tst['recall_gap']:.4f} vs baseline {base['recall_gap']:.4f} (<= 50%), "
              f"accuracy {tst['accuracy']:.4f} vs {base['accuracy']:.4f} (within 5pp)")
    check(7, 300, gap_ok and acc_ok, detail, t0)


def test_kappa_feasibility_trend(tmp_path):
    t0 = time.perf_counter()
    verdict = cmd_verify_bound(None, tmp_path)
    c = verdict["checks"]["feasibility_nonincreasing_in_kappa"]
    ses = [s["se"] for s in verdict["summary"]]
    detail = (f"mean max_j g_j over kappa (0.5, 1, 2, 4): {', '.join(f'{v:.4f}' for v in c['values'])}; "
              f"s.e. {', '.join(f'{v:.4f}' for v in ses)}; inversions at {c['inversions']}")
    check(8, 1200, c["pass"], detail, t0)


def test_shrink_preserves_fairness(fairness_run, tmp_path):
    run_dir, rows, _ = fairness_run
    t0 = time.perf_counter()
    report = cmd_shrink(run_dir, out=run_dir)
    after = cmd_evaluate(run_dir, out=tmp_path, draws=10_000)
    tst, jst = _row(after, "T-Stoch"), _row(after, "J-Stoch")
    d_gap = abs(jst["recall_gap"] - tst["recall_gap"])
    d_acc = abs(jst["accuracy"] - tst["accuracy"])
    ok = report["nnz"] <= 3 and d_gap <= 0.03 and d_acc <= 0.03
    detail = f"nnz {report['nnz']}, recall gap change {d_gap:.4f}, accuracy change {d_acc:.4f} (each <= 0.03)"
    check(9, 60, ok, detail, t0)
