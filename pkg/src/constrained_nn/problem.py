"""Constrained classification problems: objective, rate metrics with surrogates,
outer constraints, and the finite conditional distributions they are averaged over."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data_io import GROUP_A, GROUP_AC, DataError, Dataset
from .losses import OuterConstraint, ScalarLoss
from .model import TwoLayerNet, forward

PRESETS = ("equal-opportunity", "g-mean", "h-mean", "unconstrained")


class EmptyConditionalError(DataError):
    pass


@dataclass(frozen=True)
class DistributionSpec:
    """Uniform distribution over the rows of ``dataset`` matching (group, label)."""

    dataset: Dataset = field(repr=False)
    group: str | None = None
    label: int | None = None
    rows: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rows = self.dataset.rows_where(self.group, self.label)
        if rows.size == 0:
            raise EmptyConditionalError(
                f"empty conditional distribution for cell (group={self.group}, label={self.label})"
            )
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def size(self) -> int:
        return self.rows.size

    def sample(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """Row indices drawn uniformly with replacement."""
        return self.rows[rng.integers(self.rows.size, size=size)]

    def describe(self) -> dict:
        return {"group": self.group, "label": self.label, "size": int(self.size)}


@dataclass(frozen=True)
class ConstraintProblem:
    objective: ScalarLoss
    metrics: tuple[ScalarLoss, ...]
    surrogates: tuple[ScalarLoss, ...]
    outers: tuple[OuterConstraint, ...]
    samplers: tuple[DistributionSpec, ...]  # D_0, D_1, ..., D_K
    kappa: float = 1.0
    D: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        K = len(self.metrics)
        if len(self.surrogates) != K:
            raise ValueError("need one surrogate per metric")
        if len(self.samplers) != K + 1:
            raise ValueError(f"need K+1 = {K + 1} samplers, got {len(self.samplers)}")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.D > 0:
            raise ValueError("D must be positive")
        for s in self.surrogates:
            if s.is_indicator:
                raise ValueError(f"surrogate {s.kind!r} is not differentiable")
        for g in self.outers:
            if g.kind == "linear-combination" and len(g.coefficients) != K:
                raise ValueError(f"outer constraint has {len(g.coefficients)} coefficients, K = {K}")
            if g.kind != "linear-combination" and max(g.indices) >= K:
                raise ValueError("outer constraint index out of range")

    @property
    def K(self) -> int:
        return len(self.metrics)

    @property
    def J(self) -> int:
        return len(self.outers)

    @property
    def dataset(self) -> Dataset:
        return self.samplers[0].dataset

    @property
    def xi_bound(self) -> np.ndarray:
        return compute_xi_domain(self)

    @property
    def lipschitz(self) -> float:
        """Largest registered Lipschitz constant among h_0, surrogates and outer constraints."""
        consts = [self.objective.lipschitz]
        consts += [s.lipschitz for s in self.surrogates]
        consts += [g.lipschitz for g in self.outers]
        return float(max(consts))

    @property
    def bound_C(self) -> float:
        """Bound on |h_0| and the surrogates over |y| <= 2D."""
        vals = [self.objective.sup_abs(self.D), *compute_xi_domain(self)]
        return float(max(vals))

    def project_xi(self, xi: np.ndarray) -> np.ndarray:
        b = compute_xi_domain(self)
        return np.clip(xi, -b, b)

    def project_lambda(self, lam: np.ndarray) -> np.ndarray:
        return np.clip(lam, 0.0, self.kappa)

    def with_kappa(self, kappa: float) -> "ConstraintProblem":
        return replace(self, kappa=float(kappa))

    def describe(self) -> dict:
        return {
            "name": self.name,
            "K": self.K,
            "J": self.J,
            "kappa": self.kappa,
            "D": self.D,
            "objective": self.objective.kind,
            "metrics": [m.kind for m in self.metrics],
            "surrogates": [(s.kind, s.offset) for s in self.surrogates],
            "outers": [g.kind for g in self.outers],
            "samplers": [s.describe() for s in self.samplers],
        }


def compute_xi_domain(problem: ConstraintProblem) -> np.ndarray:
    """Per-coordinate bounds sup_{|y| <= 2D, z} |surrogate_k(y, z)|, closed form."""
    return np.array([s.sup_abs(problem.D) for s in problem.surrogates], dtype=np.float64)


def exact_rate(problem: ConstraintProblem, k: int, net: TwoLayerNet, outputs=None) -> float:
    """Exact mean of h_k over the rows behind D_k (k = 0 is the objective)."""
    spec = problem.samplers[k]
    loss = problem.objective if k == 0 else problem.metrics[k - 1]
    ds = spec.dataset
    y = forward(net, ds.X[spec.rows]) if outputs is None else outputs[spec.rows]
    return float(np.mean(loss(y, ds.z[spec.rows])))


def exact_rates(problem: ConstraintProblem, net: TwoLayerNet) -> tuple[float, np.ndarray]:
    """(r_0, [r_1..r_K]) with one forward pass over the whole dataset."""
    y = forward(net, problem.dataset.X)
    r0 = exact_rate(problem, 0, net, y)
    r = np.array([exact_rate(problem, k, net, y) for k in range(1, problem.K + 1)])
    return r0, r


def exact_surrogate_rates(problem: ConstraintProblem, net: TwoLayerNet) -> np.ndarray:
    y = forward(net, problem.dataset.X)
    out = []
    for k in range(1, problem.K + 1):
        spec = problem.samplers[k]
        out.append(np.mean(problem.surrogates[k - 1](y[spec.rows], spec.dataset.z[spec.rows])))
    return np.array(out)


def constraint_values(problem: ConstraintProblem, rates: np.ndarray) -> np.ndarray:
    return np.array([g(rates) for g in problem.outers])


def _surrogate_for(metric_kind: str, smoothing: float) -> ScalarLoss:
    # 1{match} <= max(0, 1 + zy) = reverse-hinge + 1;  -1{match} <= max(-1, -zy) = hinge - 1
    if metric_kind == "zero-one-match":
        return ScalarLoss("smoothed-reverse-hinge" if smoothing else "reverse-hinge", smoothing, offset=1.0)
    if metric_kind == "neg-zero-one-match":
        return ScalarLoss("smoothed-hinge" if smoothing else "hinge", smoothing, offset=-1.0)
    if metric_kind == "misclassification":
        return ScalarLoss("smoothed-hinge" if smoothing else "hinge", smoothing)
    raise ValueError(f"no default surrogate for {metric_kind!r}")


def build_fairness_problem(dataset: Dataset, objective_kind: str = "cross-entropy-on-score",
                           kappa: float = 1.0, D: float = 1.0, smoothing: float = 0.1) -> ConstraintProblem:
    """Equal opportunity: recall in group A equals recall in group Ac.

    Written as two inequalities R(A) - R(Ac) <= 0 and R(Ac) - R(A) <= 0 over
    K = 4 rates: h_1 = 1{match}, h_2 = -1{match} on (A, z=1) and
    h_3 = 1{match}, h_4 = -1{match} on (Ac, z=1), with g_1 = xi_1 + xi_4 and
    g_2 = xi_2 + xi_3.
    """
    if dataset.group is None:
        raise DataError("equal opportunity needs a group column")
    objective = ScalarLoss(objective_kind, smoothing if objective_kind.startswith("smoothed") else 0.0)
    metric_kinds = ("zero-one-match", "neg-zero-one-match", "zero-one-match", "neg-zero-one-match")
    metrics = tuple(ScalarLoss(k) for k in metric_kinds)
    surrogates = tuple(_surrogate_for(k, smoothing) for k in metric_kinds)
    cell_a = DistributionSpec(dataset, GROUP_A, 1)
    cell_ac = DistributionSpec(dataset, GROUP_AC, 1)
    samplers = (DistributionSpec(dataset), cell_a, cell_a, cell_ac, cell_ac)
    outers = (
        OuterConstraint("linear-combination", (1.0, 0.0, 0.0, 1.0)),
        OuterConstraint("linear-combination", (0.0, 1.0, 1.0, 0.0)),
    )
    return ConstraintProblem(objective, metrics, surrogates, outers, samplers,
                             kappa=kappa, D=D, name="equal-opportunity")


def build_imbalance_problem(dataset: Dataset, kind: str = "g-mean",
                            objective_kind: str = "cross-entropy-on-score",
                            kappa: float = 1.0, D: float = 1.0, smoothing: float = 0.1,
                            threshold: float = 0.0) -> ConstraintProblem:
    """Constrain 1 - G-mean (or 1 - H-mean) of (TPR, TNR) to be at most ``threshold``.

    Both rates enter as negated match rates on the positive and negative rows.
    """
    if kind not in ("g-mean", "h-mean"):
        raise ValueError("kind must be 'g-mean' or 'h-mean'")
    objective = ScalarLoss(objective_kind, smoothing if objective_kind.startswith("smoothed") else 0.0)
    metrics = (ScalarLoss("neg-zero-one-match"), ScalarLoss("neg-zero-one-match"))
    surrogates = tuple(_surrogate_for("neg-zero-one-match", smoothing) for _ in metrics)
    samplers = (DistributionSpec(dataset), DistributionSpec(dataset, None, 1), DistributionSpec(dataset, None, -1))
    outers = (OuterConstraint(kind, indices=(0, 1), threshold=threshold),)
    return ConstraintProblem(objective, metrics, surrogates, outers, samplers,
                             kappa=kappa, D=D, name=kind)


def build_unconstrained_problem(dataset: Dataset, objective_kind: str = "cross-entropy-on-score",
                                D: float = 1.0, smoothing: float = 0.1) -> ConstraintProblem:
    objective = ScalarLoss(objective_kind, smoothing if objective_kind.startswith("smoothed") else 0.0)
    return ConstraintProblem(objective, (), (), (), (DistributionSpec(dataset),),
                             kappa=1.0, D=D, name="unconstrained")


def problem_from_config(dataset: Dataset, config: dict) -> ConstraintProblem:
    """Build a problem from a JSON-style dict.

    Either ``{"preset": name, ...}`` or a full spec with ``objective``,
    ``metrics``, ``surrogates``, ``outers`` and ``samplers`` (K+1 filters of the
    form ``{"group": "A" | "Ac" | null, "label": 1 | -1 | null}``).
    """
    kappa = float(config.get("kappa", 1.0))
    D = float(config.get("D", 1.0))
    smoothing = float(config.get("smoothing", 0.1))
    objective_kind = config.get("objective", "cross-entropy-on-score")
    if isinstance(objective_kind, dict):
        objective_kind = objective_kind["kind"]
    preset = config.get("preset")
    if preset is not None:
        if preset == "equal-opportunity":
            return build_fairness_problem(dataset, objective_kind, kappa, D, smoothing)
        if preset in ("g-mean", "h-mean"):
            return build_imbalance_problem(dataset, preset, objective_kind, kappa, D, smoothing,
                                           float(config.get("threshold", 0.0)))
        if preset == "unconstrained":
            return build_unconstrained_problem(dataset, objective_kind, D, smoothing)
        raise ValueError(f"unknown preset {preset!r}; expected one of {PRESETS}")

    def loss(spec):
        if isinstance(spec, str):
            return ScalarLoss(spec)
        return ScalarLoss(spec["kind"], float(spec.get("smoothing", 0.0)), float(spec.get("offset", 0.0)))

    def outer(spec):
        return OuterConstraint(
            spec["kind"],
            coefficients=tuple(spec.get("coefficients", ())),
            indices=tuple(spec.get("indices", (0, 1))),
            threshold=float(spec.get("threshold", 0.0)),
        )

    objective = loss(config["objective"])
    metrics = tuple(loss(s) for s in config.get("metrics", []))
    surrogates = tuple(loss(s) for s in config.get("surrogates", []))
    outers = tuple(outer(s) for s in config.get("outers", []))
    filters = config.get("samplers") or [{}] * (len(metrics) + 1)
    samplers = tuple(DistributionSpec(dataset, f.get("group"), f.get("label")) for f in filters)
    return ConstraintProblem(objective, metrics, surrogates, outers, samplers,
                             kappa=kappa, D=D, name=config.get("name", "custom"))
