"""Accuracy and per-group accuracy/recall for deterministic and randomized classifiers."""

from __future__ import annotations

import numpy as np

from .data_io import Dataset
from .model import TwoLayerNet, forward
from .stochastic import StochasticClassifier

REPORT_COLUMNS = ("accuracy", "accuracy_A", "accuracy_Ac", "recall_A", "recall_Ac", "recall_gap")


def report_from_positive_prob(prob_pos: np.ndarray, ds: Dataset) -> dict:
    """Expected metrics when row n is predicted +1 with probability prob_pos[n]."""
    prob_pos = np.asarray(prob_pos, dtype=np.float64)
    correct = np.where(ds.z > 0, prob_pos, 1.0 - prob_pos)
    out = {"accuracy": float(correct.mean())}
    if ds.group is None:
        pos = ds.z > 0
        out["recall"] = float(prob_pos[pos].mean()) if pos.any() else float("nan")
        return out
    for name, mask in (("A", ds.group), ("Ac", ~ds.group)):
        out[f"accuracy_{name}"] = float(correct[mask].mean()) if mask.any() else float("nan")
        pos = mask & (ds.z > 0)
        out[f"recall_{name}"] = float(prob_pos[pos].mean()) if pos.any() else float("nan")
    out["recall_gap"] = abs(out["recall_A"] - out["recall_Ac"])
    return out


def evaluate_net(net: TwoLayerNet, ds: Dataset) -> dict:
    return report_from_positive_prob((forward(net, ds.X) > 0).astype(np.float64), ds)


def evaluate_expected(clf: StochasticClassifier, ds: Dataset) -> dict:
    """Exact expectation over the categorical draw."""
    return report_from_positive_prob(clf.positive_probability(ds.X), ds)


def evaluate_sampled(clf: StochasticClassifier, ds: Dataset, draws: int = 10_000,
                     rng: np.random.Generator | None = None) -> dict:
    """Metrics of actual randomized predictions, sweeping the data until ``draws`` predictions are made."""
    passes = max(1, int(np.ceil(draws / ds.n)))
    hits = np.zeros(ds.n)
    for _ in range(passes):
        hits += clf.predict(ds.X, rng=rng) > 0
    out = report_from_positive_prob(hits / passes, ds)
    out["draws"] = passes * ds.n
    return out
