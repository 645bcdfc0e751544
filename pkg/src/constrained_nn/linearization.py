"""Monte Carlo checks of output boundedness at initialization and of the
linearization error of wide two-layer ReLU networks.

Each replicate block draws a fresh network (one init), one weight perturbation
at radius rho from theta0 along a uniform direction, and ``x_per_init`` inputs.
Blocks have independent PRNG streams keyed by (seed, cell, block), so a table
is reproducible and cells can be computed in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fitting import FitError, PowerLawFit, fit_loglog
from .model import TwoLayerNet, forward, forward_linear, init_net

InputSampler = Callable[[np.random.Generator, int, int], np.ndarray]


def sample_unit_ball_inputs(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Uniform direction scaled by a radius uniform in [0.5, 1]."""
    X = rng.normal(size=(n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X * rng.uniform(0.5, 1.0, size=(n, 1))


def zero_inputs(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    return np.zeros((n, d))


def _block_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([seed, *keys]))


def _block_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def perturb(net: TwoLayerNet, rho: float, rng: np.random.Generator) -> TwoLayerNet:
    """theta = theta0 + rho * u with u uniform on the unit sphere."""
    u = rng.normal(size=net.theta0.size)
    u /= np.linalg.norm(u)
    return net.with_theta(net.theta0 + rho * u)


def gradient_gap_norm(net: TwoLayerNet, X: np.ndarray) -> np.ndarray:
    """||grad y - grad y0|| per row.

    The two gradients differ only in units whose activation flipped, each by
    b_i x / sqrt(m), so the norm is sqrt(#flips / m) * ||x||.
    """
    flips = ((X @ net.hidden.T > 0) != (X @ net.hidden0.T > 0)).sum(axis=1)
    return np.sqrt(flips / net.m) * np.linalg.norm(X, axis=1)


def per_sample_bound(net: TwoLayerNet, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(|y - y0|, (2/sqrt(m)) sum_i 1{|a0_i . x| <= ||a_i - a0_i||} ||a_i - a0_i||) per row."""
    gap = np.abs(forward(net, X) - forward_linear(net, X))
    shift = np.linalg.norm(net.hidden - net.hidden0, axis=1)
    near_kink = np.abs(X @ net.hidden0.T) <= shift
    rhs = 2.0 / np.sqrt(net.m) * (near_kink @ shift)
    return gap, rhs


@dataclass(frozen=True)
class ScalingExperiment:
    m_grid: tuple[int, ...]
    D_grid: tuple[float, ...]
    d: int = 16
    replicates: int = 2000
    x_per_init: int = 40
    rho_fraction: float = 1.0  # perturbation radius as a fraction of D; 0 gives theta = theta0
    seed: int = 0
    sampler: InputSampler = field(default=sample_unit_ball_inputs, compare=False)

    def __post_init__(self):
        for name, grid in (("m_grid", self.m_grid), ("D_grid", self.D_grid)):
            if len(grid) == 0 or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError(f"{name} must be non-empty and strictly increasing")
        if self.replicates < 5:
            raise ValueError("replicates must be >= 5")
        if self.x_per_init < 1 or self.replicates % self.x_per_init:
            raise ValueError("replicates must be a positive multiple of x_per_init")
        if not 0.0 <= self.rho_fraction <= 1.0:
            raise ValueError("rho_fraction must lie in [0, 1]")

    @property
    def n_inits(self) -> int:
        return self.replicates // self.x_per_init


@dataclass
class ErrorCell:
    m: int
    D: float
    sq_err: float
    sq_err_se: float
    grad_err: float
    grad_err_se: float
    max_grad_err: float
    bound_violations: int
    n: int
    block_sq_err: np.ndarray = field(repr=False)  # per-init means, for the cluster bootstrap
    block_grad_err: np.ndarray = field(repr=False)

    def row(self) -> dict:
        return {"m": self.m, "D": self.D, "sq_err": self.sq_err, "sq_err_se": self.sq_err_se,
                "grad_err": self.grad_err, "grad_err_se": self.grad_err_se,
                "max_grad_err": self.max_grad_err, "bound_violations": self.bound_violations, "n": self.n}


def _cluster_se(block_means: np.ndarray) -> float:
    if block_means.size < 2:
        return 0.0
    return float(block_means.std(ddof=1) / np.sqrt(block_means.size))


def estimate_linearization_errors(exp: ScalingExperiment) -> list[ErrorCell]:
    """One cell per (m, D) with E|y - y0|^2 and E||grad y - grad y0|| and their standard errors."""
    cells = []
    for ci, (m, D) in enumerate((m, D) for D in exp.D_grid for m in exp.m_grid):
        sq_blocks, g_blocks = np.empty(exp.n_inits), np.empty(exp.n_inits)
        max_g, violations = 0.0, 0
        for b in range(exp.n_inits):
            rng = _block_rng(exp.seed, ci, b)
            net = init_net(m, exp.d, D, _block_seed(rng))
            net = perturb(net, exp.rho_fraction * D, rng)
            X = exp.sampler(rng, exp.x_per_init, exp.d)
            gap, rhs = per_sample_bound(net, X)
            g = gradient_gap_norm(net, X)
            sq_blocks[b] = np.mean(gap**2)
            g_blocks[b] = np.mean(g)
            max_g = max(max_g, float(g.max()))
            violations += int(np.sum(gap > rhs + 1e-12))
        cells.append(ErrorCell(
            m=m, D=float(D), sq_err=float(sq_blocks.mean()), sq_err_se=_cluster_se(sq_blocks),
            grad_err=float(g_blocks.mean()), grad_err_se=_cluster_se(g_blocks), max_grad_err=max_g,
            bound_violations=violations, n=exp.replicates, block_sq_err=sq_blocks, block_grad_err=g_blocks,
        ))
    return cells


_QUANTITIES = {"sq_err": "block_sq_err", "grad_err": "block_grad_err"}


def fit_scaling_exponent(table: Sequence[ErrorCell], axis: str = "m", quantity: str = "sq_err",
                         n_boot: int = 200, seed: int = 0) -> tuple[float, float]:
    """(slope, stderr) of log mean error vs log grid value along ``axis``.

    The standard error comes from resampling inits within each cell. Cells
    must vary only along ``axis``.
    """
    if axis not in ("m", "D"):
        raise ValueError("axis must be 'm' or 'D'")
    if quantity not in _QUANTITIES:
        raise ValueError(f"quantity must be one of {sorted(_QUANTITIES)}")
    cells = sorted(table, key=lambda c: getattr(c, axis))
    x = [getattr(c, axis) for c in cells]
    labels = [f"m={c.m}, D={c.D:g}" for c in cells]
    fit = fit_loglog(x, [getattr(c, quantity) for c in cells], labels)
    blocks = [getattr(c, _QUANTITIES[quantity]) for c in cells]
    rng = _block_rng(seed, 0xB007)
    slopes = []
    for _ in range(n_boot):
        means = [blk[rng.integers(0, blk.size, blk.size)].mean() for blk in blocks]
        try:
            slopes.append(fit_loglog(x, means, labels).slope)
        except FitError:
            continue
    stderr = float(np.std(slopes, ddof=1)) if len(slopes) > 1 else fit.stderr
    return fit.slope, stderr


def fit_power_law(table: Sequence[ErrorCell], axis: str = "m", quantity: str = "sq_err") -> PowerLawFit:
    cells = sorted(table, key=lambda c: getattr(c, axis))
    return fit_loglog([getattr(c, axis) for c in cells], [getattr(c, quantity) for c in cells],
                      [f"m={c.m}, D={c.D:g}" for c in cells])


@dataclass
class OutputCell:
    m: int
    mean_abs: float
    mean_abs_se: float
    tail_prob: float
    tail_prob_se: float
    threshold: float
    n: int

    @property
    def markov_ok(self) -> bool:
        """P(|y| > t) <= E|y| / t + 3 s.e. of the tail estimate, on the same sample."""
        return self.tail_prob <= self.mean_abs / self.threshold + 3 * self.tail_prob_se

    def row(self) -> dict:
        return {"m": self.m, "mean_abs": self.mean_abs, "mean_abs_se": self.mean_abs_se,
                "tail_prob": self.tail_prob, "tail_prob_se": self.tail_prob_se,
                "threshold": self.threshold, "n": self.n, "markov_ok": self.markov_ok}


def estimate_output_bound(m_grid: Sequence[int], d: int = 16, replicates: int = 2000, seed: int = 0,
                          x_per_init: int = 40, threshold: float = 10.0,
                          sampler: InputSampler = sample_unit_ball_inputs) -> list[OutputCell]:
    """Per-width Monte Carlo E|y(theta0; x)| and P(|y(theta0; x)| > threshold)."""
    if replicates % x_per_init:
        raise ValueError("replicates must be a multiple of x_per_init")
    n_inits = replicates // x_per_init
    out = []
    for ci, m in enumerate(m_grid):
        abs_blocks, tail_blocks = np.empty(n_inits), np.empty(n_inits)
        for b in range(n_inits):
            rng = _block_rng(seed, 0x0B, ci, b)
            net = init_net(int(m), d, 1.0, _block_seed(rng))
            y = np.abs(forward(net, sampler(rng, x_per_init, d)))
            abs_blocks[b] = y.mean()
            tail_blocks[b] = np.mean(y > threshold)
        out.append(OutputCell(m=int(m), mean_abs=float(abs_blocks.mean()), mean_abs_se=_cluster_se(abs_blocks),
                              tail_prob=float(tail_blocks.mean()), tail_prob_se=_cluster_se(tail_blocks),
                              threshold=threshold, n=replicates))
    return out
