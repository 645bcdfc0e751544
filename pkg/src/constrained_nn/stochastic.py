"""Randomized classifiers over parameter snapshots and LP-based shrinking of their support."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import TwoLayerNet, forward, make_rng
from .problem import ConstraintProblem, constraint_values, exact_rates
from .simplex import LPInfeasible, solve_standard_form

BUNDLE_VERSION = 1


class ShrinkInfeasible(ValueError):
    def __init__(self, message, violations, most_violated):
        super().__init__(message)
        self.violations = violations
        self.most_violated = most_violated


@dataclass
class StochasticClassifier:
    """Predict with snapshot ``i ~ categorical(probs)``."""

    skeleton: TwoLayerNet = field(repr=False)
    snapshots: np.ndarray = field(repr=False)  # (S, m*d)
    probs: np.ndarray
    seed: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.snapshots = np.atleast_2d(np.asarray(self.snapshots, dtype=np.float64))
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.snapshots.shape[0] == 0:
            raise ValueError("stochastic classifier needs at least one snapshot")
        if self.probs.shape != (self.snapshots.shape[0],):
            raise ValueError("need one probability per snapshot")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("probs must lie on the simplex")
        self._rng = make_rng(self.seed)

    @classmethod
    def uniform(cls, skeleton: TwoLayerNet, snapshots, seed: int = 0, **kw) -> "StochasticClassifier":
        snaps = np.atleast_2d(np.asarray(snapshots, dtype=np.float64))
        return cls(skeleton, snaps, np.full(snaps.shape[0], 1.0 / snaps.shape[0]), seed, **kw)

    @property
    def size(self) -> int:
        return self.snapshots.shape[0]

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    def net(self, i: int) -> TwoLayerNet:
        return self.skeleton.with_theta(self.snapshots[i])

    def snapshot_outputs(self, X) -> np.ndarray:
        """(S, n) matrix of each snapshot's outputs on the rows of X."""
        X = np.atleast_2d(X)
        return np.stack([forward(self.net(i), X) for i in range(self.size)])

    def predict(self, x, rng: np.random.Generator | None = None):
        """Draw one snapshot per input row and return its output."""
        rng = self._rng if rng is None else rng
        X = np.asarray(x, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        picks = rng.choice(self.size, size=X.shape[0], p=self.probs)
        out = np.empty(X.shape[0])
        for i in np.unique(picks):
            rows = picks == i
            out[rows] = forward(self.net(i), X[rows])
        return float(out[0]) if single else out

    def predict_expected(self, x):
        X = np.asarray(x, dtype=np.float64)
        single = X.ndim == 1
        out = self.probs[self.support] @ np.stack(
            [forward(self.net(i), np.atleast_2d(X)) for i in self.support])
        return float(out[0]) if single else out

    def positive_probability(self, X) -> np.ndarray:
        """P(prediction = +1) per row, exact over the categorical draw."""
        outs = np.stack([forward(self.net(i), np.atleast_2d(X)) for i in self.support])
        return self.probs[self.support] @ (outs > 0)

    def compressed(self, probs: np.ndarray, tol: float = 0.0) -> "StochasticClassifier":
        keep = np.flatnonzero(probs > tol)
        p = probs[keep] / probs[keep].sum()
        return StochasticClassifier(self.skeleton, self.snapshots[keep], p, self.seed,
                                    dict(self.provenance, compressed_from=int(self.size)))


def save_bundle(clf: StochasticClassifier, path) -> None:
    net = clf.skeleton
    meta = {
        "format_version": BUNDLE_VERSION,
        "m": net.m, "d": net.d, "D": net.D, "seed": net.seed, "sampling_seed": clf.seed,
        "provenance": clf.provenance,
    }
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), signs=net.signs, theta0=net.theta0,
                 snapshots=clf.snapshots, probs=clf.probs)


def load_bundle(path) -> StochasticClassifier:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != BUNDLE_VERSION:
            raise ValueError(f"unsupported bundle format_version {meta.get('format_version')!r}")
        theta0 = data["theta0"].copy()
        skeleton = TwoLayerNet(m=meta["m"], d=meta["d"], D=meta["D"], seed=meta["seed"],
                               signs=data["signs"].copy(), theta=theta0.copy(), theta0=theta0)
        return StochasticClassifier(skeleton, data["snapshots"].copy(), data["probs"].copy(),
                                    meta["sampling_seed"], meta.get("provenance", {}))


@dataclass
class ShrinkInstance:
    c0: np.ndarray  # (T,)
    cj: np.ndarray  # (J, T)
    epsilon: float

    def __post_init__(self):
        self.c0 = np.asarray(self.c0, dtype=np.float64)
        self.cj = np.atleast_2d(np.asarray(self.cj, dtype=np.float64)).reshape(-1, self.c0.size)
        if not (np.all(np.isfinite(self.c0)) and np.all(np.isfinite(self.cj))):
            raise ValueError("shrink instance entries must be finite")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")

    @property
    def T(self) -> int:
        return self.c0.size

    @property
    def J(self) -> int:
        return self.cj.shape[0]


def shrink(instance: ShrinkInstance) -> np.ndarray:
    """Vertex minimizer of c0 @ p over the simplex subject to cj @ p <= epsilon.

    The standard form has J + 1 rows, so the returned p has at most J + 1
    nonzero entries.
    """
    T, J = instance.T, instance.J
    if not np.isfinite(instance.epsilon) or J == 0:
        p = np.zeros(T)
        p[int(np.argmin(instance.c0))] = 1.0
        return p
    # variables: p (T), slacks (J); rows: cj p + s = eps, 1 p = 1
    A = np.zeros((J + 1, T + J))
    A[:J, :T] = instance.cj
    A[:J, T:] = np.eye(J)
    A[J, :T] = 1.0
    b = np.append(np.full(J, instance.epsilon), 1.0)
    c = np.append(instance.c0, np.zeros(J))
    try:
        res = solve_standard_form(c, A, b)
    except LPInfeasible as exc:
        p1 = exc.phase1_x[:T]
        if p1.sum() > 0:
            p1 = p1 / p1.sum()
        else:
            p1 = np.full(T, 1.0 / T)
        viol = instance.cj @ p1 - instance.epsilon
        # the least infeasible single snapshot gives a more readable report
        per_point = instance.cj.max(axis=0)
        best = int(np.argmin(per_point))
        viol_best = instance.cj[:, best] - instance.epsilon
        j = int(np.argmax(viol_best))
        raise ShrinkInfeasible(
            f"shrink LP infeasible: constraint {j + 1} is violated by {viol_best[j]:.6g} "
            f"even at the least violating snapshot {best}",
            violations=viol, most_violated=j,
        ) from None
    p = np.clip(res.x[:T], 0.0, None)
    return p / p.sum()


def default_epsilon(cj: np.ndarray) -> float:
    """Largest constraint value of the uniform mixture, floored at 0; uniform is then feasible."""
    cj = np.atleast_2d(cj)
    if cj.size == 0:
        return 0.0
    return float(max(0.0, cj.mean(axis=1).max()))


def build_shrink_instance(snapshots, problem: ConstraintProblem, skeleton: TwoLayerNet,
                          epsilon: float | None = None) -> ShrinkInstance:
    snaps = np.atleast_2d(snapshots)
    c0 = np.empty(snaps.shape[0])
    cj = np.empty((problem.J, snaps.shape[0]))
    for t, theta in enumerate(snaps):
        r0, rates = exact_rates(problem, skeleton.with_theta(theta))
        c0[t] = r0
        cj[:, t] = constraint_values(problem, rates)
    eps = default_epsilon(cj) if epsilon is None else float(epsilon)
    return ShrinkInstance(c0, cj, eps)


def mixture_rates(problem: ConstraintProblem, clf: StochasticClassifier) -> tuple[float, np.ndarray]:
    """Exact (objective, rates) of the randomized classifier: probability-weighted snapshot values."""
    r0 = 0.0
    r = np.zeros(problem.K)
    for i in clf.support:
        a, b = exact_rates(problem, clf.net(i))
        r0 += clf.probs[i] * a
        r += clf.probs[i] * b
    return r0, r
