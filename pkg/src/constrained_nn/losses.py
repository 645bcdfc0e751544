"""Per-example losses h(y, z), their convex surrogates, and outer constraint functions g(xi).

Every margin-based kind is a function of u = z * y and is monotone in u, so its
supremum over |y| <= 2D is attained at an endpoint. sgn(0) is taken to be -1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INDICATOR_KINDS = frozenset({"zero-one-match", "neg-zero-one-match", "misclassification"})
SMOOTH_KINDS = frozenset({"smoothed-hinge", "smoothed-reverse-hinge", "cross-entropy-on-score", "zero"})
LOSS_KINDS = frozenset({
    "hinge", "smoothed-hinge", "reverse-hinge", "smoothed-reverse-hinge",
    "cross-entropy-on-score", "zero",
}) | INDICATOR_KINDS
OUTER_KINDS = frozenset({"linear-combination", "g-mean", "h-mean"})

DEFAULT_SMOOTHING = 0.1
DEFAULT_RATE_FLOOR = 1e-3


class NonDifferentiableLoss(ValueError):
    pass


def sgn(y):
    return np.where(np.asarray(y) > 0, 1.0, -1.0)


def _check_labels(z):
    z = np.asarray(z, dtype=np.float64)
    if not np.all((z == 1.0) | (z == -1.0)):
        raise ValueError("labels must be in {-1, +1}")
    return z


def _smooth_relu(v, s):
    """Quadratic (Huber-style) smoothing of max(0, v) on [-s, s]; upper-bounds max(0, v)."""
    if s == 0:
        return np.maximum(v, 0.0)
    return np.where(v >= s, v, np.where(v <= -s, 0.0, (v + s) ** 2 / (4 * s)))


def _smooth_relu_grad(v, s):
    if s == 0:
        return (v > 0).astype(np.float64)
    return np.clip((v + s) / (2 * s), 0.0, 1.0)


@dataclass(frozen=True)
class ScalarLoss:
    """A loss ``h(y, z) + offset``.

    ``offset`` shifts a kind so that it can dominate a shifted indicator, e.g.
    ``ScalarLoss("hinge", offset=-1)`` = max(-1, -zy) >= -1{z = sgn(y)}.
    """

    kind: str
    smoothing: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.smoothing < 0:
            raise ValueError("smoothing must be nonnegative")
        if self.kind.startswith("smoothed") and self.smoothing == 0:
            object.__setattr__(self, "smoothing", DEFAULT_SMOOTHING)

    @property
    def is_indicator(self) -> bool:
        return self.kind in INDICATOR_KINDS

    @property
    def lipschitz(self) -> float:
        """Bound on |dh/dy| over all of R (indicators: no gradient, reported as 0)."""
        if self.is_indicator or self.kind == "zero":
            return 0.0
        return 1.0

    @property
    def smoothness(self) -> float:
        """Lipschitz constant of dh/dy (inf for kinked losses)."""
        if self.kind in ("smoothed-hinge", "smoothed-reverse-hinge"):
            return 1.0 / (2.0 * self.smoothing)
        if self.kind == "cross-entropy-on-score":
            return 0.25
        if self.kind == "zero":
            return 0.0
        return np.inf

    def _margin_value(self, u):
        s = self.smoothing
        k = self.kind
        if k == "hinge":
            return np.maximum(0.0, 1.0 - u)
        if k == "smoothed-hinge":
            return _smooth_relu(1.0 - u, s)
        if k == "reverse-hinge":
            return np.maximum(-1.0, u)
        if k == "smoothed-reverse-hinge":
            return _smooth_relu(u + 1.0, s) - 1.0
        if k == "cross-entropy-on-score":
            return np.logaddexp(0.0, -u)
        if k == "zero":
            return np.zeros_like(u)
        raise AssertionError(k)

    def __call__(self, y, z):
        return eval_loss(self, y, z)

    def grad(self, y, z):
        return eval_loss_grad(self, y, z)

    def sup_abs(self, D: float) -> float:
        """Certified sup of |h(y, z)| over |y| <= 2D and z in {-1, +1}."""
        if self.is_indicator:
            lo, hi = (-1.0, 0.0) if self.kind == "neg-zero-one-match" else (0.0, 1.0)
            return max(abs(lo + self.offset), abs(hi + self.offset))
        ends = self._margin_value(np.array([-2.0 * D, 2.0 * D])) + self.offset
        return float(np.max(np.abs(ends)))


def eval_loss(loss: ScalarLoss, y, z):
    y = np.asarray(y, dtype=np.float64)
    z = _check_labels(z)
    if loss.is_indicator:
        match = (z == sgn(y)).astype(np.float64)
        if loss.kind == "zero-one-match":
            val = match
        elif loss.kind == "neg-zero-one-match":
            val = -match
        else:
            val = 1.0 - match
    else:
        val = loss._margin_value(z * y)
    val = val + loss.offset
    return float(val) if np.ndim(val) == 0 else val


def eval_loss_grad(loss: ScalarLoss, y, z):
    """dh/dy. Kinked kinds use the subgradient that is 0 at the kink."""
    if loss.is_indicator:
        raise NonDifferentiableLoss(
            f"{loss.kind} is an indicator and has no usable gradient; "
            "only the objective and surrogate losses may be differentiated"
        )
    y = np.asarray(y, dtype=np.float64)
    z = _check_labels(z)
    u = z * y
    s = loss.smoothing
    k = loss.kind
    if k == "hinge":
        du = -(u < 1.0).astype(np.float64)
    elif k == "smoothed-hinge":
        du = -_smooth_relu_grad(1.0 - u, s)
    elif k == "reverse-hinge":
        du = (u > -1.0).astype(np.float64)
    elif k == "smoothed-reverse-hinge":
        du = _smooth_relu_grad(u + 1.0, s)
    elif k == "cross-entropy-on-score":
        du = -0.5 * (1.0 - np.tanh(0.5 * u))  # -1 / (1 + e^u), overflow-safe
    else:
        du = np.zeros_like(u)
    g = z * du
    return float(g) if np.ndim(g) == 0 else g


@dataclass(frozen=True)
class OuterConstraint:
    """g(xi) <= 0 over the auxiliary variables.

    For ``g-mean`` / ``h-mean`` the two rates are read from ``xi[indices]`` as
    tau = clip(-xi, 0, 1): the paired metrics are negated match indicators, so
    g stays increasing in xi. A zero rate gives the boundary value 1 (minus ``threshold``).
    """

    kind: str
    coefficients: tuple[float, ...] = ()
    indices: tuple[int, int] = (0, 1)
    rate_floor: float = DEFAULT_RATE_FLOOR
    threshold: float = 0.0  # mean kinds only: constrain g(xi) - threshold <= 0

    def __post_init__(self):
        if self.kind not in OUTER_KINDS:
            raise ValueError(f"unknown outer constraint kind {self.kind!r}")
        if self.kind == "linear-combination":
            object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
            if not self.coefficients:
                raise ValueError("linear-combination needs coefficients")

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant w.r.t. the infinity norm (= sup of the gradient's l1 norm)."""
        if self.kind == "linear-combination":
            return float(np.sum(np.abs(self.coefficients)))
        e = self.rate_floor
        if self.kind == "g-mean":
            # |d/dtau1| + |d/dtau2| = (sqrt(t2/t1) + sqrt(t1/t2)) / 2, largest at (e, 1)
            return 0.5 * (np.sqrt(1.0 / e) + np.sqrt(e))
        # harmonic mean: d/dt1 = 2 t2^2 / (t1 + t2)^2 <= 2, and the two partials sum to <= 2
        return 2.0

    def monotone_directions(self, K: int) -> np.ndarray:
        if self.kind == "linear-combination":
            return np.sign(np.asarray(self.coefficients))
        out = np.zeros(K)
        out[list(self.indices)] = 1.0
        return out

    def __call__(self, xi):
        return eval_outer(self, xi)

    def grad(self, xi):
        return eval_outer_grad(self, xi)


def eval_outer(g: OuterConstraint, xi) -> float:
    xi = np.asarray(xi, dtype=np.float64)
    if g.kind == "linear-combination":
        c = np.asarray(g.coefficients)
        if c.shape != xi.shape:
            raise ValueError(f"coefficients have {c.size} entries but xi has {xi.size}")
        return float(c @ xi)
    t1, t2 = np.clip(-xi[list(g.indices)], 0.0, 1.0)
    if g.kind == "g-mean":
        return float(1.0 - np.sqrt(t1 * t2) - g.threshold)
    if t1 + t2 == 0:
        return 1.0 - g.threshold
    return float(1.0 - 2.0 * t1 * t2 / (t1 + t2) - g.threshold)


def eval_outer_grad(g: OuterConstraint, xi) -> np.ndarray:
    """Gradient in xi; near a zero rate it is evaluated at the floored rate so it stays bounded."""
    xi = np.asarray(xi, dtype=np.float64)
    if g.kind == "linear-combination":
        return np.asarray(g.coefficients, dtype=np.float64).copy()
    raw = -xi[list(g.indices)]
    t1, t2 = np.clip(raw, g.rate_floor, 1.0)
    if g.kind == "g-mean":
        dt = np.array([-0.5 * np.sqrt(t2 / t1), -0.5 * np.sqrt(t1 / t2)])
    else:
        dt = np.array([-2.0 * t2**2 / (t1 + t2) ** 2, -2.0 * t1**2 / (t1 + t2) ** 2])
    # tau = -xi, and g is flat where a rate is clipped at 1
    out = np.zeros_like(xi)
    out[list(g.indices)] = -dt * (raw < 1.0)
    return out
