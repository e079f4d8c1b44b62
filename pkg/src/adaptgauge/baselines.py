"""Ground-truth and baseline accuracy-change traces, and the similarity metric."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EstimationTrace:
    """Per-epoch accuracy-change estimates (entry 0 is always 0)."""

    method: str
    deltas: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        if len(self.deltas) and abs(self.deltas[0]) > 1e-12:
            raise ValueError(f"{self.method}: delta trace must start at 0")


@dataclass
class SimilarityScore:
    value: float
    per_epoch_errors: np.ndarray


def tgtlabel_trace(accuracies: list[float]) -> EstimationTrace:
    """The labeled-validation oracle; all other methods are scored against it."""
    if not len(accuracies):
        raise ValueError("no accuracies")
    acc = np.asarray(accuracies, dtype=np.float64)
    return EstimationTrace("TgtLabel", acc - acc[0])


def srclabel_trace(holdout_accuracies: list[float]) -> EstimationTrace:
    """Accuracy changes on held-out labeled source data as a proxy for the target."""
    if not len(holdout_accuracies):
        raise ValueError("no holdout accuracies")
    acc = np.asarray(holdout_accuracies, dtype=np.float64)
    return EstimationTrace("SrcLabel", acc - acc[0])


def softmax_scores(matrices: list[np.ndarray]) -> np.ndarray:
    """Mean max-class probability per epoch (the confidence heuristic)."""
    return np.array([m.max(axis=1).mean() for m in matrices])


def softmax_score_trace(matrices: list[np.ndarray]) -> EstimationTrace:
    scores = softmax_scores(matrices)
    return EstimationTrace("SoftmaxScore", scores - scores[0])


def estimator_trace(deltas: np.ndarray) -> EstimationTrace:
    return EstimationTrace("AdaptGauge", np.asarray(deltas, dtype=np.float64))


def similarity(truth: EstimationTrace, estimate: EstimationTrace) -> SimilarityScore:
    """1 minus the mean absolute delta error over epochs 1..T.

    Epoch 0 is excluded (both traces are 0 there by definition), and estimates
    are clamped to [-1, 1] first. Values below 0 are possible and kept as-is.
    """
    if len(truth.deltas) != len(estimate.deltas):
        raise ValueError(
            f"trace length mismatch: {len(truth.deltas)} vs {len(estimate.deltas)}")
    est = np.clip(estimate.deltas, -1.0, 1.0)
    errors = np.abs(truth.deltas[1:] - est[1:])
    if errors.size == 0:
        return SimilarityScore(1.0, errors)
    return SimilarityScore(float(1.0 - errors.mean()), errors)
