"""Two-layer ReLU network with fixed output signs, its NTK linearization, and the
projection onto the ball around initialization.

Weights are stored as a single flat vector ``theta`` of length ``m * d``; unit ``i``
owns the slice ``theta[i*d:(i+1)*d]``. The ReLU indicator uses a strict inequality,
so the subgradient at a kink is 0 for both the forward masks and the gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

PRNG_ALGORITHM = "pcg64"
CHECKPOINT_VERSION = 1


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class TwoLayerNet:
    m: int
    d: int
    D: float
    seed: int
    signs: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    theta0: np.ndarray = field(repr=False)

    def __post_init__(self):
        for arr in (self.signs, self.theta0):
            arr.setflags(write=False)

    @property
    def hidden(self) -> np.ndarray:
        """Current hidden weights as an (m, d) view."""
        return self.theta.reshape(self.m, self.d)

    @property
    def hidden0(self) -> np.ndarray:
        return self.theta0.reshape(self.m, self.d)

    def with_theta(self, theta: np.ndarray) -> "TwoLayerNet":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.m * self.d,):
            raise ValueError(f"theta must have shape ({self.m * self.d},), got {theta.shape}")
        return replace(self, theta=theta)

    def distance_from_init(self) -> float:
        return float(np.linalg.norm(self.theta - self.theta0))


def init_net(m: int, d: int, D: float, seed: int) -> TwoLayerNet:
    """Draw b_i uniformly from {-1, +1} and a_i^0 ~ N(0, I_d / d)."""
    if m < 1:
        raise ValueError("width m must be >= 1")
    if d < 3:
        raise ValueError(
            "input dimension d must be >= 3: the linearization error analysis uses "
            "E||a_i^0||^-2 = 1/(d-2), which is undefined for d < 3"
        )
    if not D > 0:
        raise ValueError("radius D must be positive")
    rng = make_rng(seed)
    signs = rng.choice(np.array([-1.0, 1.0]), size=m)
    theta0 = rng.normal(0.0, 1.0 / np.sqrt(d), size=m * d)
    return TwoLayerNet(m=m, d=d, D=float(D), seed=int(seed), signs=signs,
                       theta=theta0.copy(), theta0=theta0)


def _as_batch(net: TwoLayerNet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.d:
        raise ValueError(f"expected input of dimension {net.d}, got shape {x.shape}")
    return X, single


def forward(net: TwoLayerNet, x) -> np.ndarray | float:
    """y = m^{-1/2} sum_i b_i relu(a_i . x) for one input or a batch of rows."""
    X, single = _as_batch(net, x)
    pre = X @ net.hidden.T
    y = np.maximum(pre, 0.0) @ net.signs / np.sqrt(net.m)
    return float(y[0]) if single else y


def grad_theta(net: TwoLayerNet, x) -> np.ndarray:
    """Gradient of ``forward`` w.r.t. the flat weights; shape (md,) or (n, md)."""
    X, single = _as_batch(net, x)
    active = (X @ net.hidden.T > 0.0) * net.signs  # (n, m)
    G = active[:, :, None] * X[:, None, :] / np.sqrt(net.m)
    G = G.reshape(X.shape[0], net.m * net.d)
    return G[0] if single else G


def weighted_grad(net: TwoLayerNet, X: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_n weights[n] * grad_theta(net, X[n]) without materializing per-row gradients."""
    active = (X @ net.hidden.T > 0.0) * net.signs
    G = (active * weights[:, None]).T @ X / np.sqrt(net.m)
    return G.reshape(-1)


def feature_map0(net: TwoLayerNet, x) -> np.ndarray:
    """Random features f0(x) fixed at initialization, so that y0(theta; x) = f0(x) . theta."""
    X, single = _as_batch(net, x)
    active0 = (X @ net.hidden0.T > 0.0) * net.signs
    F = (active0[:, :, None] * X[:, None, :] / np.sqrt(net.m)).reshape(X.shape[0], -1)
    return F[0] if single else F


def forward_linear(net: TwoLayerNet, x) -> np.ndarray | float:
    X, single = _as_batch(net, x)
    active0 = X @ net.hidden0.T > 0.0
    y = (active0 * (X @ net.hidden.T)) @ net.signs / np.sqrt(net.m)
    return float(y[0]) if single else y


def project_onto_ball(theta: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    delta = theta - center
    norm = np.linalg.norm(delta)
    if norm <= radius:
        return theta
    return center + delta * (radius / norm)


def project_theta(net: TwoLayerNet) -> TwoLayerNet:
    projected = project_onto_ball(net.theta, net.theta0, net.D)
    if projected is net.theta:
        return net
    return net.with_theta(projected)


def save_checkpoint(net: TwoLayerNet, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "prng": PRNG_ALGORITHM,
        "m": net.m,
        "d": net.d,
        "D": net.D,
        "seed": net.seed,
        "signs": net.signs.tolist(),
        "theta": net.theta.tolist(),
        "theta0": net.theta0.tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> TwoLayerNet:
    payload = json.loads(Path(path).read_text())
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    return TwoLayerNet(
        m=int(payload["m"]),
        d=int(payload["d"]),
        D=float(payload["D"]),
        seed=int(payload["seed"]),
        signs=np.asarray(payload["signs"], dtype=np.float64),
        theta=np.asarray(payload["theta"], dtype=np.float64),
        theta0=np.asarray(payload["theta0"], dtype=np.float64),
    )
