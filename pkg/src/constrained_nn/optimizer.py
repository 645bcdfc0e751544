"""Three-player projected stochastic gradient play on the surrogate Lagrangian.

    L(theta, xi, lam) = r_0(theta) + sum_j lam_j g_j(xi) - sum_k lam_{J+k} xi_k
                        + sum_k lam_{J+k} r_k(theta)

theta descends the surrogate part (r_k replaced by the surrogate rates), xi
descends the (xi, lam) part, and lam ascends L built from the original
indicator rates. All three gradients are taken at the current iterate before
any of them is updated.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import TwoLayerNet, forward, make_rng, project_onto_ball, weighted_grad
from .problem import ConstraintProblem, constraint_values, exact_rates

log = logging.getLogger(__name__)


class NonFiniteGradient(FloatingPointError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class StepSizes:
    theta: float
    xi: float
    lam: float

    @classmethod
    def from_theory(cls, problem: ConstraintProblem, T: int) -> "StepSizes":
        """Step sizes that balance the three players for horizon T; K and J are floored at 1 so
        the unconstrained case (K = J = 0) stays finite."""
        K = max(problem.K, 1)
        J = max(problem.J, 1)
        L = problem.lipschitz
        C = problem.bound_C
        kappa, D = problem.kappa, problem.D
        return cls(
            theta=np.sqrt(D**2 / (4 * kappa * K * L * T)),
            xi=np.sqrt(C / (2 * T * kappa * J * L * np.sqrt(K))),
            lam=np.sqrt(kappa / (2 * L * C * np.sqrt(K) * np.sqrt(J) * T)),
        )

    def override(self, overrides: dict | None) -> "StepSizes":
        if not overrides:
            return self
        unknown = set(overrides) - {"theta", "xi", "lam"}
        if unknown:
            raise ValueError(f"unknown step size keys: {sorted(unknown)}")
        return StepSizes(**{**self.__dict__, **{k: float(v) for k, v in overrides.items()}})


@dataclass
class GameState:
    theta: np.ndarray
    xi: np.ndarray
    lam: np.ndarray
    t: int
    steps: StepSizes


@dataclass
class Samples:
    """Row indices drawn for one iteration: one batch from D_0 and one per D_k."""

    objective: np.ndarray
    metrics: list[np.ndarray]


def draw_samples(problem: ConstraintProblem, rng: np.random.Generator, batch_size: int = 1) -> Samples:
    return Samples(
        objective=problem.samplers[0].sample(rng, batch_size),
        metrics=[problem.samplers[k].sample(rng, batch_size) for k in range(1, problem.K + 1)],
    )


def enumerate_samples(problem: ConstraintProblem) -> Samples:
    """Every row of every sampler at once; averaging over it is the exact expectation."""
    return Samples(
        objective=problem.samplers[0].rows,
        metrics=[problem.samplers[k].rows for k in range(1, problem.K + 1)],
    )


def grad_theta_lagrangian(net: TwoLayerNet, lam: np.ndarray, problem: ConstraintProblem,
                          samples: Samples) -> np.ndarray:
    """Stochastic gradient of r_0 + sum_k lam_{J+k} * surrogate_rate_k at ``net.theta``.

    Each batch contributes its own mean, so a batch holding every row of a
    sampler gives the exact gradient of that term.
    """
    ds = problem.dataset
    J = problem.J
    rows = [samples.objective, *samples.metrics]
    idx = np.concatenate(rows)
    X = ds.X[idx]
    y = forward(net, X)
    weights = np.empty(idx.size)
    z = ds.z[idx]
    start = 0
    for k, r in enumerate(rows):
        sl = slice(start, start + r.size)
        if k == 0:
            weights[sl] = problem.objective.grad(y[sl], z[sl]) / r.size
        else:
            weights[sl] = lam[J + k - 1] * problem.surrogates[k - 1].grad(y[sl], z[sl]) / r.size
        start += r.size
    return weighted_grad(net, X, weights)


def grad_xi(xi: np.ndarray, lam: np.ndarray, problem: ConstraintProblem) -> np.ndarray:
    J = problem.J
    out = -lam[J:].copy()
    for j, g in enumerate(problem.outers):
        out += lam[j] * g.grad(xi)
    return out


def grad_lambda(net: TwoLayerNet, xi: np.ndarray, problem: ConstraintProblem,
                samples: Samples) -> np.ndarray:
    """(g_1(xi), ..., g_J(xi), h_1 - xi_1, ..., h_K - xi_K) with the ORIGINAL metrics h_k."""
    ds = problem.dataset
    out = np.empty(problem.J + problem.K)
    out[: problem.J] = constraint_values(problem, xi)
    for k, rows in enumerate(samples.metrics):
        y = forward(net, ds.X[rows])
        out[problem.J + k] = np.mean(problem.metrics[k](y, ds.z[rows])) - xi[k]
    return out


def lagrangian(problem: ConstraintProblem, r0: float, rates: np.ndarray, xi: np.ndarray,
               lam: np.ndarray) -> float:
    J = problem.J
    return float(r0 + lam[:J] @ constraint_values(problem, xi) - lam[J:] @ xi + lam[J:] @ rates)


@dataclass
class MetricsTrace:
    """Rows logged every ``log_every`` iterations with exact rates at the current theta."""

    K: int
    J: int
    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def log(self, t: int, problem: ConstraintProblem, net: TwoLayerNet, state: GameState,
            objective_estimate: float, snapshot: bool) -> dict:
        r0, rates = exact_rates(problem, net)
        row = {"t": t, "snapshot": int(snapshot), "objective_estimate": objective_estimate,
               "objective": r0, "theta_dist": net.distance_from_init()}
        for k in range(self.K):
            row[f"rate_{k + 1}"] = rates[k]
            row[f"xi_{k + 1}"] = state.xi[k]
        gvals = constraint_values(problem, state.xi)
        grates = constraint_values(problem, rates)
        for j in range(self.J):
            row[f"g_{j + 1}"] = gvals[j]
            row[f"g_rates_{j + 1}"] = grates[j]
        for i, v in enumerate(state.lam):
            row[f"lambda_{i + 1}"] = v
        self.rows.append(row)
        return row

    def __len__(self):
        return len(self.rows)

    def column(self, name: str, snapshots_only: bool = False) -> np.ndarray:
        rows = [r for r in self.rows if r["snapshot"]] if snapshots_only else self.rows
        return np.array([r[name] for r in rows], dtype=np.float64)

    def rate_matrix(self, snapshots_only: bool = True) -> np.ndarray:
        cols = [self.column(f"rate_{k + 1}", snapshots_only) for k in range(self.K)]
        n = len([r for r in self.rows if r["snapshot"]]) if snapshots_only else len(self.rows)
        return np.stack(cols, axis=1) if cols else np.zeros((n, 0))

    def running_average_rates(self, snapshots_only: bool = True) -> np.ndarray:
        """(1/T) sum_t r(theta^t) over the logged (snapshot) iterations."""
        return self.rate_matrix(snapshots_only).mean(axis=0)

    def running_average_objective(self, snapshots_only: bool = True) -> float:
        return float(self.column("objective", snapshots_only).mean())

    def to_csv(self, path) -> None:
        if not self.rows:
            Path(path).write_text("")
            return
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(self.rows[0]))
            writer.writeheader()
            writer.writerows(self.rows)


@dataclass
class RunResult:
    snapshots: list[np.ndarray]
    snapshot_iterations: list[int]
    trace: MetricsTrace
    state: GameState
    net: TwoLayerNet


def run(problem: ConstraintProblem, net: TwoLayerNet, T: int, step_overrides: dict | None = None,
        seed: int = 0, log_every: int | None = None, burn_in: int = 1000,
        batch_size: int = 1, xi0: np.ndarray | None = None) -> RunResult:
    """Algorithm loop. Logs every ``log_every`` iterations and keeps a snapshot
    of theta at each logged iteration past ``burn_in``."""
    if T < 0:
        raise ValueError("T must be >= 0")
    if net.d != problem.dataset.d:
        raise ValueError(f"net input dim {net.d} != dataset dim {problem.dataset.d}")
    if abs(net.D - problem.D) > 0:
        raise ValueError(f"net radius {net.D} != problem radius {problem.D}")
    if log_every is None:
        log_every = problem.dataset.n
    if log_every < 1:
        raise ValueError("log_every must be >= 1")

    K, J = problem.K, problem.J
    steps = StepSizes.from_theory(problem, max(T, 1)).override(step_overrides)
    xi = problem.project_xi(np.zeros(K) if xi0 is None else np.asarray(xi0, dtype=np.float64))
    state = GameState(theta=net.theta.copy(), xi=xi, lam=np.zeros(J + K), t=0, steps=steps)
    trace = MetricsTrace(K=K, J=J, meta={
        "T": T, "seed": seed, "log_every": log_every, "burn_in": burn_in, "batch_size": batch_size,
        "steps": dict(steps.__dict__), "problem": problem.describe(),
    })
    snapshots: list[np.ndarray] = []
    snap_iters: list[int] = []
    if T == 0:
        return RunResult(snapshots, snap_iters, trace, state, net)

    rng = make_rng(seed)
    ds = problem.dataset
    xi_bound = problem.xi_bound
    cur = net
    for t in range(1, T + 1):
        theta_samples = draw_samples(problem, rng, batch_size)
        lam_samples = draw_samples(problem, rng, batch_size)

        g_theta = grad_theta_lagrangian(cur, state.lam, problem, theta_samples)
        g_xi = grad_xi(state.xi, state.lam, problem)
        g_lam = grad_lambda(cur, state.xi, problem, lam_samples)
        if not (np.all(np.isfinite(g_theta)) and np.all(np.isfinite(g_xi)) and np.all(np.isfinite(g_lam))):
            raise NonFiniteGradient(f"non-finite gradient at iteration {t}", trace)

        theta = project_onto_ball(state.theta - steps.theta * g_theta, net.theta0, net.D)
        xi = np.clip(state.xi - steps.xi * g_xi, -xi_bound, xi_bound)
        lam = np.clip(state.lam + steps.lam * g_lam, 0.0, problem.kappa)
        state = GameState(theta=theta, xi=xi, lam=lam, t=t, steps=steps)
        cur = cur.with_theta(theta)

        if t % log_every == 0:
            snap = t > burn_in
            rows = theta_samples.objective
            obj_est = float(np.mean(problem.objective(forward(cur, ds.X[rows]), ds.z[rows])))
            trace.log(t, problem, cur, state, obj_est, snap)
            if snap:
                snapshots.append(theta.copy())
                snap_iters.append(t)
    return RunResult(snapshots, snap_iters, trace, state, cur)
