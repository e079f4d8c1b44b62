"""Information-theoretic probes of a prediction matrix.

All quantities are in nats and use the nonnegative entropy convention, so
0 <= gd, iu <= ln K and the mutual-information estimate gd - iu is >= 0 up
to floating-point slack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import LOG_FLOOR


def _validate(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0 or probs.shape[1] == 0:
        raise ValueError(f"prediction matrix must be nonempty 2-D, got {probs.shape}")
    if probs.min() < -1e-12:
        raise ValueError("prediction matrix has negative entries")
    rows = probs.sum(axis=1)
    if np.abs(rows - 1.0).max() > 1e-6:
        raise ValueError("prediction matrix rows must sum to 1")
    return probs


def _entropy(p: np.ndarray, axis=None) -> np.ndarray:
    return -(p * np.log(np.maximum(p, LOG_FLOOR))).sum(axis=axis)


def global_diversity(probs: np.ndarray) -> float:
    """Entropy of the mean prediction: high when outputs cover classes broadly."""
    probs = _validate(probs)
    return float(_entropy(probs.mean(axis=0)))


def individual_uncertainty(probs: np.ndarray) -> float:
    """Mean per-sample prediction entropy: low when outputs are confident."""
    probs = _validate(probs)
    return float(_entropy(probs, axis=1).mean())


def prediction_distribution(probs: np.ndarray) -> np.ndarray:
    """Column mean of the prediction matrix; sums to 1."""
    probs = _validate(probs)
    return probs.mean(axis=0)


def mutual_info_estimate(probs: np.ndarray) -> float:
    """Monte Carlo information gain between inputs and predictions: gd - iu."""
    return global_diversity(probs) - individual_uncertainty(probs)


@dataclass
class FeatureRecord:
    """Per-epoch estimator input, plus ground-truth accuracy change if known."""

    epoch: int
    gd: float
    iu: float
    pd: np.ndarray
    dgd: float = 0.0
    diu: float = 0.0
    dpd: np.ndarray = field(default=None)
    truth_delta_acc: float | None = None
    accuracy: float | None = None

    def __post_init__(self):
        if self.dpd is None:
            self.dpd = np.zeros_like(np.asarray(self.pd))

    def vector(self) -> np.ndarray:
        """Layout: gd, iu, pd[0..K), dgd, diu, dpd[0..K) -> length 2*(K+2)."""
        return np.concatenate([[self.gd, self.iu], self.pd,
                               [self.dgd, self.diu], self.dpd])


def feature_names(n_classes: int) -> list[str]:
    base = ["gd", "iu"] + [f"pd_{i}" for i in range(n_classes)]
    return base + ["d" + n for n in base]


def build_feature_sequence(matrices: list[np.ndarray],
                           accuracies: list[float] | None = None
                           ) -> list[FeatureRecord]:
    """One record per epoch with epoch-over-epoch deltas (zeros at epoch 0).

    truth_delta_acc is accuracy[e] - accuracy[0] when accuracies are given.
    """
    if not matrices:
        raise ValueError("need at least one prediction matrix")
    if accuracies is not None and len(accuracies) != len(matrices):
        raise ValueError(
            f"{len(accuracies)} accuracies do not align with {len(matrices)} matrices")
    records = []
    prev = None
    for e, probs in enumerate(matrices):
        gd = global_diversity(probs)
        iu = individual_uncertainty(probs)
        pd = prediction_distribution(probs)
        rec = FeatureRecord(epoch=e, gd=gd, iu=iu, pd=pd)
        if prev is not None:
            rec.dgd = gd - prev.gd
            rec.diu = iu - prev.iu
            rec.dpd = pd - prev.pd
        if accuracies is not None:
            rec.accuracy = float(accuracies[e])
            rec.truth_delta_acc = float(accuracies[e] - accuracies[0])
        records.append(rec)
        prev = rec
    return records
