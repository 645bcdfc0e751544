"""Datasets with binary labels and an optional binary protected group.

Features are rescaled by the largest row norm so that every row satisfies
||x|| <= 1; the factor is kept in ``norm_scale``.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .model import make_rng

log = logging.getLogger(__name__)

GROUP_A = "A"
GROUP_AC = "Ac"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    group: np.ndarray | None = field(default=None, repr=False)  # True for group A
    norm_scale: float = 1.0
    feature_names: tuple[str, ...] = ()
    dropped_rows: int = 0

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] != self.z.shape[0]:
            raise DataError("X must be (n, d) with one label per row")
        if not np.all(np.isin(self.z, (-1.0, 1.0))):
            raise DataError("labels must be in {-1, +1}")
        if self.group is not None and self.group.shape != self.z.shape:
            raise DataError("group column must have one entry per row")
        for arr in (self.X, self.z, self.group):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.z).tobytes())
        if self.group is not None:
            h.update(np.ascontiguousarray(self.group).tobytes())
        return h.hexdigest()

    def rows_where(self, group: str | None = None, label: int | None = None) -> np.ndarray:
        """Indices of rows matching the (group, label) predicate; None matches anything."""
        mask = np.ones(self.n, dtype=bool)
        if group is not None:
            if self.group is None:
                raise DataError("dataset has no group column")
            if group not in (GROUP_A, GROUP_AC):
                raise DataError(f"group must be {GROUP_A!r} or {GROUP_AC!r}, got {group!r}")
            mask &= self.group if group == GROUP_A else ~self.group
        if label is not None:
            mask &= self.z == label
        return np.flatnonzero(mask)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return replace(
            self,
            X=self.X[idx].copy(),
            z=self.z[idx].copy(),
            group=None if self.group is None else self.group[idx].copy(),
        )

    def swap_groups(self) -> "Dataset":
        if self.group is None:
            raise DataError("dataset has no group column")
        return replace(self, group=~self.group)


def scale_to_unit_ball(X: np.ndarray) -> tuple[np.ndarray, float]:
    norms = np.linalg.norm(X, axis=1)
    scale = float(norms.max()) if norms.size else 1.0
    if scale == 0.0:
        scale = 1.0
    return X / scale, scale


def make_dataset(X, z, group=None, feature_names=(), dropped_rows=0, scale=True) -> Dataset:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise DataError("empty dataset")
    norm_scale = 1.0
    if scale:
        X, norm_scale = scale_to_unit_ball(X)
    elif np.linalg.norm(X, axis=1).max() > 1.0 + 1e-12:
        raise DataError("rows must satisfy ||x|| <= 1; pass scale=True to rescale")
    return Dataset(
        X=X,
        z=np.asarray(z, dtype=np.float64),
        group=None if group is None else np.asarray(group, dtype=bool),
        norm_scale=norm_scale,
        feature_names=tuple(feature_names),
        dropped_rows=dropped_rows,
    )


def load_csv(path, schema: dict) -> Dataset:
    """Load a headered CSV.

    ``schema`` keys: ``features`` (list), ``categorical`` (subset of features to
    one-hot encode, optional), ``label``, ``label_map``, and optionally ``group``
    and ``group_map`` (raw value -> "A" or "Ac"). Rows with a missing value in any
    schema column are dropped. ``standardize: true`` z-scores numeric columns
    before the max-norm rescaling.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    frame = pd.read_csv(path)
    features = list(schema["features"])
    label_col = schema["label"]
    group_col = schema.get("group")
    cols = features + [label_col] + ([group_col] if group_col else [])
    missing = [c for c in cols if c not in frame.columns]
    if missing:
        raise DataError(f"columns not found in {path.name}: {missing}")

    n_raw = len(frame)
    frame = frame.dropna(subset=cols)
    dropped = n_raw - len(frame)
    if dropped:
        log.info("dropped %d rows with missing values", dropped)
    if frame.empty:
        raise DataError("empty dataset after dropping rows with missing values")

    label_map = {str(k): float(v) for k, v in schema["label_map"].items()}
    raw_labels = frame[label_col].astype(str)
    unmapped = sorted(set(raw_labels) - set(label_map))
    if unmapped:
        raise DataError(f"unmapped label values: {unmapped}")
    z = raw_labels.map(label_map).to_numpy(dtype=np.float64)

    group = None
    if group_col:
        group_map = {str(k): v for k, v in schema["group_map"].items()}
        raw_groups = frame[group_col].astype(str)
        unmapped = sorted(set(raw_groups) - set(group_map))
        if unmapped:
            raise DataError(f"unmapped group values: {unmapped}")
        group = (raw_groups.map(group_map) == GROUP_A).to_numpy()

    categorical = [c for c in schema.get("categorical", []) if c in features]
    feats = pd.get_dummies(frame[features], columns=categorical, dtype=np.float64)
    if schema.get("standardize"):
        numeric = [c for c in features if c not in categorical]
        std = feats[numeric].std(ddof=0).replace(0.0, 1.0)
        feats[numeric] = (feats[numeric] - feats[numeric].mean()) / std
    return make_dataset(feats.to_numpy(dtype=np.float64), z, group,
                        feature_names=feats.columns, dropped_rows=dropped)


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Shuffle split; the train side gets floor(fraction * n) rows, at least 1 on each side."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must be in (0, 1)")
    n = dataset.n
    if n < 2:
        raise DataError("need at least 2 rows to split")
    n_train = min(max(int(np.floor(train_fraction * n)), 1), n - 1)
    perm = make_rng(seed).permutation(n)
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))


def generate_biased_synthetic(n: int, d: int, bias_gap: float, seed: int,
                              noise: float = 0.7, separation: float = 1.0) -> Dataset:
    """Two-group Gaussian data where group Ac's positives sit closer to the negatives.

    Construction (before max-norm scaling), for every row:

    * group A with probability 1/2, label +1 with probability 1/2, independently;
    * a signal coordinate s = mu + noise * N(0, 1) with mu = -separation for
      negatives, +separation for positives in A, and
      separation * (1 - 2 * bias_gap) for positives in Ac;
    * group columns acting as per-group intercepts: x = (1{A}, 1{Ac}, s, ...)
      when d >= 3, and x = (s, +-1) with +1 for A when d = 2;
    * any remaining coordinates are 0.5 * noise * N(0, 1), uninformative.

    With bias_gap = 0 both groups are exchangeable up to the group columns.
    The best threshold on s for group Ac moves towards the negatives as
    bias_gap grows, which lowers its recall relative to A.
    """
    if n < 40:
        raise DataError("n must be >= 40")
    if d < 2:
        raise DataError("d must be >= 2")
    if not 0.0 <= bias_gap < 1.0:
        raise DataError("bias_gap must be in [0, 1)")
    rng = make_rng(seed)
    in_a = rng.random(n) < 0.5
    z = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    mu = np.where(z < 0, -separation, np.where(in_a, separation, separation * (1.0 - 2.0 * bias_gap)))
    signal = mu + noise * rng.normal(size=n)
    X = np.empty((n, d))
    if d == 2:
        X[:, 0] = signal
        X[:, 1] = np.where(in_a, 1.0, -1.0)
        names = ["signal", "group_sign"]
    else:
        X[:, 0] = in_a
        X[:, 1] = ~in_a
        X[:, 2] = signal
        X[:, 3:] = 0.5 * noise * rng.normal(size=(n, d - 3))
        names = ["group_A", "group_Ac", "signal"] + [f"noise_{i}" for i in range(d - 3)]
    return make_dataset(X, z, in_a, feature_names=names)


def dataset_to_frame(ds: Dataset) -> pd.DataFrame:
    names = list(ds.feature_names) or [f"x{i}" for i in range(ds.d)]
    frame = pd.DataFrame(ds.X, columns=names)
    frame["label"] = ds.z.astype(int)
    if ds.group is not None:
        frame["group"] = np.where(ds.group, GROUP_A, GROUP_AC)
    return frame


def write_csv(ds: Dataset, path) -> dict:
    """Write a dataset as CSV and return the schema that loads it back."""
    frame = dataset_to_frame(ds)
    frame.to_csv(path, index=False)
    schema = {
        "features": [c for c in frame.columns if c not in ("label", "group")],
        "label": "label",
        "label_map": {"1": 1, "-1": -1},
    }
    if ds.group is not None:
        schema["group"] = "group"
        schema["group_map"] = {GROUP_A: GROUP_A, GROUP_AC: GROUP_AC}
    return schema
