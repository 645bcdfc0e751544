"""Online mirror descent with (possibly biased) gradient estimates and regret accounting.

Only the Euclidean mirror map h(theta) = 0.5 * ||theta - anchor||^2 ships. Its
gradient and the gradient of its conjugate are shifts by the anchor, so one
mirror step followed by the Bregman projection is a projected gradient step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .fitting import PowerLawFit, fit_loglog
from .model import make_rng, project_onto_ball


class Domain(Protocol):
    def project(self, theta: np.ndarray) -> np.ndarray: ...
    def contains(self, theta: np.ndarray, tol: float = 1e-12) -> bool: ...


@dataclass(frozen=True)
class BallDomain:
    center: np.ndarray
    radius: float

    def project(self, theta):
        return project_onto_ball(np.asarray(theta, dtype=np.float64), self.center, self.radius)

    def contains(self, theta, tol=1e-12):
        return bool(np.linalg.norm(np.asarray(theta) - self.center) <= self.radius * (1 + tol) + tol)

    @property
    def dim(self) -> int:
        return self.center.size


@dataclass(frozen=True)
class BoxDomain:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise ValueError("box lower bound exceeds upper bound")

    def project(self, theta):
        return np.clip(np.asarray(theta, dtype=np.float64), self.lower, self.upper)

    def contains(self, theta, tol=1e-12):
        theta = np.asarray(theta)
        return bool(np.all(theta >= self.lower - tol) and np.all(theta <= self.upper + tol))

    @property
    def dim(self) -> int:
        return np.asarray(self.lower).size


@dataclass(frozen=True)
class EuclideanMirrorMap:
    anchor: np.ndarray

    def value(self, theta) -> float:
        diff = np.asarray(theta) - self.anchor
        return 0.5 * float(diff @ diff)

    def grad(self, theta) -> np.ndarray:
        return np.asarray(theta, dtype=np.float64) - self.anchor

    def grad_conjugate(self, zeta) -> np.ndarray:
        return np.asarray(zeta, dtype=np.float64) + self.anchor

    def bregman(self, a, b) -> float:
        diff = np.asarray(a) - np.asarray(b)
        return 0.5 * float(diff @ diff)

    def sup_over(self, domain) -> float:
        """M = max of h over the domain."""
        if isinstance(domain, BallDomain):
            r = np.linalg.norm(domain.center - self.anchor) + domain.radius
            return 0.5 * float(r) ** 2
        if isinstance(domain, BoxDomain):
            far = np.maximum(np.abs(domain.lower - self.anchor), np.abs(domain.upper - self.anchor))
            return 0.5 * float(far @ far)
        raise TypeError(f"unsupported domain {type(domain).__name__}")


@dataclass(frozen=True)
class MirrorDescentConfig:
    eta: float
    domain: BallDomain | BoxDomain
    T: int
    mirror: EuclideanMirrorMap | None = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("step size eta must be > 0")
        if self.T < 1:
            raise ValueError("horizon T must be >= 1")
        if self.mirror is None:
            anchor = self.domain.center if isinstance(self.domain, BallDomain) else \
                0.5 * (np.asarray(self.domain.lower) + np.asarray(self.domain.upper))
            object.__setattr__(self, "mirror", EuclideanMirrorMap(np.asarray(anchor, dtype=np.float64)))

    @property
    def M(self) -> float:
        return self.mirror.sup_over(self.domain)


def omd_step(config: MirrorDescentConfig, theta, mu) -> np.ndarray:
    """Mirror step in the dual space, map back, then project onto the domain."""
    mu = np.asarray(mu, dtype=np.float64)
    if not np.all(np.isfinite(mu)):
        raise FloatingPointError("non-finite gradient estimate")
    h = config.mirror
    zeta = h.grad_conjugate(h.grad(theta) - config.eta * mu)
    return config.domain.project(zeta)


LossFn = Callable[[np.ndarray], float]


@dataclass
class RegretLedger:
    """Realized losses plus the loss closures, so any comparator can be scored later."""

    losses: list[LossFn] = field(default_factory=list)
    realized: list[float] = field(default_factory=list)
    trajectory: list[np.ndarray] = field(default_factory=list)
    comparator: np.ndarray | None = None
    comparator_value: float | None = None

    def record(self, theta: np.ndarray, loss: LossFn) -> float:
        value = float(loss(theta))
        self.losses.append(loss)
        self.realized.append(value)
        self.trajectory.append(np.array(theta, copy=True))
        self.comparator = self.comparator_value = None
        return value

    def average_loss_at(self, theta) -> float:
        return float(np.mean([f(theta) for f in self.losses]))

    def set_comparator(self, theta) -> None:
        self.comparator = np.array(theta, copy=True)
        self.comparator_value = self.average_loss_at(theta)

    def average_regret(self) -> float:
        if self.comparator_value is None:
            raise ValueError("comparator not set")
        return float(np.mean(self.realized)) - self.comparator_value


def quadratic_comparator(centers: np.ndarray, domain) -> np.ndarray:
    """argmin over the domain of the mean of 0.5 * ||theta - c_t||^2: project the mean center."""
    return domain.project(np.mean(centers, axis=0))


def projected_gd_comparator(avg_grad: Callable[[np.ndarray], np.ndarray], domain, starts: Sequence[np.ndarray],
                            avg_loss: LossFn, step: float, iters: int = 5000) -> np.ndarray:
    """Multi-restart projected gradient descent on the averaged loss.

    Exact for smooth convex losses given enough iterations; for non-convex
    losses the returned value only upper-bounds the true minimum, so regret
    measured against it is a lower bound.
    """
    best, best_val = None, np.inf
    for x in starts:
        x = domain.project(np.asarray(x, dtype=np.float64))
        for _ in range(iters):
            x = domain.project(x - step * avg_grad(x))
        val = avg_loss(x)
        if val < best_val:
            best, best_val = x, val
    return best


def measure_regret(losses: Sequence[LossFn], trajectory: Sequence[np.ndarray],
                   comparator_solver: Callable[[], np.ndarray]) -> tuple[float, np.ndarray]:
    """(average regret, comparator) of a trajectory against the best fixed point in hindsight."""
    if len(losses) != len(trajectory):
        raise ValueError("need one trajectory point per loss")
    ledger = RegretLedger()
    for theta, f in zip(trajectory, losses):
        ledger.record(theta, f)
    ledger.set_comparator(comparator_solver())
    return ledger.average_regret(), ledger.comparator


def unbiased_regret_bound(M: float, W: float, T: int) -> float:
    """(3/2) sqrt(M W / T): unbiased-gradient average regret bound for eta = sqrt(M / (W T))."""
    return 1.5 * np.sqrt(M * W / T)


def biased_bound(M: float, W: float, T: int, delta: float, bias_norms) -> float:
    """High-probability bound with a concentration term and the accumulated bias."""
    bias_sum = float(np.sum(bias_norms))
    return (unbiased_regret_bound(M, W, T) + 8 * W * np.sqrt(M * np.log(1 / delta) / T)
            + 2 * np.sqrt(2 * M) / T * bias_sum)


@dataclass(frozen=True)
class QuadraticFamily:
    """f_t(theta) = 0.5 * ||theta - c_t||^2 on the ball of radius ``radius`` around 0.

    c_t = center + noise_radius * u_t with u_t uniform in the unit ball. With
    ||center|| + noise_radius + radius <= 1 every gradient has norm <= 1, so
    W = 1. The learner sees the gradient plus a constant ``bias`` vector of norm
    ``bias_norm`` along a fixed unit direction.
    """

    dim: int = 5
    radius: float = 0.5
    center_norm: float = 0.2
    noise_radius: float = 0.2
    bias_norm: float = 0.0

    def __post_init__(self):
        if self.center_norm + self.noise_radius + self.radius > 1.0 + 1e-12:
            raise ValueError("family must keep gradient norms <= 1")

    @property
    def domain(self) -> BallDomain:
        return BallDomain(np.zeros(self.dim), self.radius)

    @property
    def W(self) -> float:
        return 1.0

    @property
    def M(self) -> float:
        return 0.5 * self.radius**2

    def draw(self, rng: np.random.Generator, T: int) -> tuple[np.ndarray, np.ndarray]:
        """(centers (T, dim), bias vector (dim,)) for one run."""
        direction = rng.normal(size=self.dim)
        direction /= np.linalg.norm(direction)
        center = self.center_norm * direction
        u = rng.normal(size=(T, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        u *= rng.random((T, 1)) ** (1.0 / self.dim)
        bias_dir = rng.normal(size=self.dim)
        bias_dir /= np.linalg.norm(bias_dir)
        return center + self.noise_radius * u, self.bias_norm * bias_dir


def run_quadratic(family: QuadraticFamily, T: int, seed: int, eta: float | None = None) -> dict:
    """Play T rounds of OMD on the quadratic family and score the regret exactly."""
    rng = make_rng(seed)
    centers, bias = family.draw(rng, T)
    eta = np.sqrt(family.M / (family.W * T)) if eta is None else eta
    config = MirrorDescentConfig(eta=eta, domain=family.domain, T=T)
    theta = family.domain.center.copy()
    traj = np.empty((T, family.dim))
    for t in range(T):
        traj[t] = theta
        theta = omd_step(config, theta, (theta - centers[t]) + bias)
    realized = 0.5 * np.sum((traj - centers) ** 2, axis=1)
    star = quadratic_comparator(centers, family.domain)
    best = 0.5 * np.sum((star - centers) ** 2, axis=1)
    return {"regret": float(realized.mean() - best.mean()), "comparator": star, "trajectory": traj,
            "eta": eta, "max_grad_norm": float(np.linalg.norm(traj - centers, axis=1).max())}


@dataclass
class SlopeResult:
    fit: PowerLawFit
    T_grid: list[int]
    mean_regret: np.ndarray
    std_regret: np.ndarray
    bound: np.ndarray
    per_seed: np.ndarray  # (len(T_grid), n_seeds)

    @property
    def slope(self) -> float:
        return self.fit.slope

    @property
    def intercept(self) -> float:
        return self.fit.intercept

    def rows(self) -> list[dict]:
        return [{"T": T, "mean_regret": float(m), "std_regret": float(s), "bound": float(b)}
                for T, m, s, b in zip(self.T_grid, self.mean_regret, self.std_regret, self.bound)]


def regret_slope_experiment(family: QuadraticFamily, T_grid: Sequence[int], seeds: Sequence[int]) -> SlopeResult:
    """Mean average regret over seeds per horizon, and its log-log slope in T."""
    T_grid = [int(T) for T in T_grid]
    if len(T_grid) < 3:
        raise ValueError(f"need >= 3 points for a scaling fit, got {len(T_grid)}")
    per = np.array([[run_quadratic(family, T, s)["regret"] for s in seeds] for T in T_grid])
    mean = per.mean(axis=1)
    fit = fit_loglog(T_grid, mean, labels=[f"T={T}" for T in T_grid])
    bound = np.array([unbiased_regret_bound(family.M, family.W, T) for T in T_grid])
    return SlopeResult(fit=fit, T_grid=T_grid, mean_regret=mean,
                       std_regret=per.std(axis=1, ddof=1) if per.shape[1] > 1 else np.zeros(len(T_grid)),
                       bound=bound, per_seed=per)
