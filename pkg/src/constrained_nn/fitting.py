"""Log-log least-squares fits for power-law scaling checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    stderr: float  # classical OLS standard error of the slope
    n_points: int


def fit_loglog(x, y, labels=None) -> PowerLawFit:
    """OLS of log(y) on log(x). Needs >= 3 points and positive values."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("x and y must be 1-d arrays of equal length")
    if x.size < 3:
        raise FitError(f"need >= 3 points for a scaling fit, got {x.size}")
    labels = list(labels) if labels is not None else [f"x={v:g}" for v in x]
    for v, lab in zip(x, labels):
        if not v > 0:
            raise FitError(f"non-positive grid value at cell {lab}")
    for v, lab in zip(y, labels):
        if not (np.isfinite(v) and v > 0):
            raise FitError(f"non-positive mean at cell {lab}: {v!r}, cannot take log")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    dof = x.size - 2
    sxx = np.sum((lx - lx.mean()) ** 2)
    stderr = float(np.sqrt(resid @ resid / dof / sxx)) if dof > 0 and sxx > 0 else float("nan")
    return PowerLawFit(slope=float(coef[0]), intercept=float(coef[1]), stderr=stderr, n_points=x.size)
