"""Experiment drivers shared by the CLI, the scripts and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DataConfig, TrainConfig
from .data_io import Dataset, generate_biased_synthetic, load_csv, split
from .model import TwoLayerNet, init_net
from .optimizer import RunResult, run
from .problem import ConstraintProblem, build_unconstrained_problem, constraint_values, problem_from_config
from .stochastic import StochasticClassifier


def load_data(cfg: DataConfig) -> tuple[Dataset, Dataset | None]:
    """(train, test); test is None unless a train fraction is configured."""
    if cfg.synthetic is not None:
        ds = generate_biased_synthetic(**cfg.synthetic)
    else:
        ds = load_csv(cfg.csv, cfg.schema)
    if cfg.train_fraction is None:
        return ds, None
    return split(ds, cfg.train_fraction, cfg.split_seed)


@dataclass
class TrainedRun:
    problem: ConstraintProblem
    result: RunResult
    net0: TwoLayerNet

    @property
    def tstoch(self) -> StochasticClassifier:
        return StochasticClassifier.uniform(self.net0, self.result.snapshots, seed=self.result.trace.meta["seed"])

    @property
    def last(self) -> TwoLayerNet:
        return self.result.net

    @property
    def best_index(self) -> int:
        """Snapshot with the smallest exact training objective."""
        return int(np.argmin(self.result.trace.column("objective", snapshots_only=True)))

    @property
    def best(self) -> TwoLayerNet:
        return self.net0.with_theta(self.result.snapshots[self.best_index])


def train_problem(problem: ConstraintProblem, cfg: TrainConfig) -> TrainedRun:
    net0 = init_net(cfg.model.m, problem.dataset.d, problem.D, cfg.model.seed)
    o = cfg.optimizer
    result = run(problem, net0, o.T, step_overrides=o.steps, seed=o.seed, log_every=o.log_every,
                 burn_in=o.burn_in, batch_size=o.batch_size)
    return TrainedRun(problem, result, net0)


def train_from_config(cfg: TrainConfig, train_ds: Dataset | None = None) -> tuple[TrainedRun, TrainedRun | None]:
    """Constrained run and, if configured, the unconstrained baseline with the same seeds."""
    if train_ds is None:
        train_ds, _ = load_data(cfg.data)
    problem = problem_from_config(train_ds, cfg.problem)
    constrained = train_problem(problem, cfg)
    baseline = None
    if cfg.baseline:
        base = build_unconstrained_problem(train_ds, problem.objective.kind, problem.D,
                                           float(cfg.problem.get("smoothing", 0.1)))
        baseline = train_problem(base, cfg)
    return constrained, baseline


def feasibility_of_average(run_: TrainedRun) -> float:
    """max_j g_j of the rates averaged over the kept snapshots."""
    if run_.problem.J == 0:
        return 0.0
    avg = run_.result.trace.running_average_rates()
    return float(constraint_values(run_.problem, avg).max())


def kappa_sweep(cfg: TrainConfig, kappas, seeds) -> list[dict]:
    """Train once per (kappa, seed) sharing model and sampling seeds across kappa."""
    train_ds, _ = load_data(cfg.data)
    rows = []
    for seed in seeds:
        for kappa in kappas:
            c = TrainConfig(data=cfg.data, problem={**cfg.problem, "kappa": float(kappa)},
                            model=type(cfg.model)(m=cfg.model.m, seed=seed),
                            optimizer=type(cfg.optimizer)(**{**cfg.optimizer.__dict__, "seed": seed}),
                            baseline=False)
            r, _ = train_from_config(c, train_ds)
            rows.append({"kappa": float(kappa), "seed": int(seed), "max_g": feasibility_of_average(r),
                         "objective": r.result.trace.running_average_objective()})
    return rows


def summarize_sweep(rows: list[dict]) -> list[dict]:
    out = []
    for kappa in sorted({r["kappa"] for r in rows}):
        vals = np.array([r["max_g"] for r in rows if r["kappa"] == kappa])
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        out.append({"kappa": kappa, "mean_max_g": float(vals.mean()), "se": se, "n_seeds": int(vals.size)})
    return out


def nonincreasing_with_tolerance(means, ses, max_inversions: int = 1) -> tuple[bool, list[int]]:
    """True if the sequence never increases, except for at most ``max_inversions``
    steps whose increase is within the combined standard error of the pair."""
    means, ses = np.asarray(means, dtype=float), np.asarray(ses, dtype=float)
    inversions = [i for i in range(len(means) - 1) if means[i + 1] > means[i]]
    if len(inversions) > max_inversions:
        return False, inversions
    for i in inversions:
        if means[i + 1] - means[i] > np.hypot(ses[i], ses[i + 1]):
            return False, inversions
    return True, inversions
