"""Sensing classifier and the adversarial discriminators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .nn import BatchNorm1d, Conv1d, Dense, Module


@dataclass(frozen=True)
class ClassifierArch:
    channels: tuple[int, int, int] = (32, 64, 128)
    kernel: int = 9
    strides: tuple[int, int, int] = (2, 2, 2)
    dense_width: int = 256


class ClassifierNet(Module):
    """Three conv->batchnorm->relu blocks, flatten, then a two-layer head."""

    def __init__(self, rng, in_channels: int, length: int, n_classes: int,
                 arch: ClassifierArch = ClassifierArch()):
        super().__init__()
        self.arch = arch
        self.n_classes = n_classes
        self.in_channels = in_channels
        self.length = length
        ch = in_channels
        ln = length
        for i, (out_ch, stride) in enumerate(zip(arch.channels, arch.strides)):
            self.add_child(f"conv{i}", Conv1d(rng, ch, out_ch, arch.kernel, stride))
            self.add_child(f"bn{i}", BatchNorm1d(out_ch))
            ch = out_ch
            ln = (ln - arch.kernel) // stride + 1
            if ln < 1:
                raise ValueError(f"input length {length} too short for arch {arch}")
        self.feature_dim = ch * ln
        self.add_child("fc1", Dense(rng, self.feature_dim, arch.dense_width))
        self.add_child("fc2", Dense(rng, arch.dense_width, n_classes))

    def features(self, x: Value) -> Value:
        h = x
        for i in range(len(self.arch.channels)):
            h = ad.relu(self._children[f"bn{i}"](self._children[f"conv{i}"](h)))
        return ad.reshape(h, (h.data.shape[0], self.feature_dim))

    def logits_from_features(self, f: Value) -> Value:
        return self._children["fc2"](ad.relu(self._children["fc1"](f)))

    def __call__(self, x: Value) -> Value:
        return self.logits_from_features(self.features(x))

    def extractor_parameters(self) -> dict[str, Value]:
        return {name: p for name, p in self.parameters().items()
                if not name.startswith("fc")}

    def head_parameters(self) -> dict[str, Value]:
        return {name: p for name, p in self.parameters().items()
                if name.startswith("fc")}

    def spawn_like(self, rng) -> "ClassifierNet":
        return ClassifierNet(rng, self.in_channels, self.length,
                             self.n_classes, self.arch)


class DomainDiscriminator(Module):
    """Two dense layers scoring source-vs-target on (possibly conditioned) features."""

    def __init__(self, rng, in_dim: int, hidden: int = 64):
        super().__init__()
        self.add_child("d1", Dense(rng, in_dim, hidden))
        self.add_child("d2", Dense(rng, hidden, 2))

    def __call__(self, f: Value) -> Value:
        return self._children["d2"](ad.relu(self._children["d1"](f)))


def predict_matrix(model: ClassifierNet, windows: np.ndarray,
                   batch_size: int = 128) -> np.ndarray:
    """Row-stochastic output probabilities in eval mode.

    Never mutates the model: batchnorm reads running statistics and the
    previous train/eval mode is restored afterwards.
    """
    was_training = model.training
    model.eval()
    rows = []
    for lo in range(0, len(windows), batch_size):
        logits = model(Value(windows[lo:lo + batch_size]))
        rows.append(ad.softmax(logits).data)
    if was_training:
        model.train()
    return np.concatenate(rows, axis=0)


def feature_matrix(model: ClassifierNet, windows: np.ndarray,
                   batch_size: int = 128) -> np.ndarray:
    was_training = model.training
    model.eval()
    rows = []
    for lo in range(0, len(windows), batch_size):
        rows.append(model.features(Value(windows[lo:lo + batch_size])).data)
    if was_training:
        model.train()
    return np.concatenate(rows, axis=0)


def accuracy_from_matrix(probs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax (first index on ties) equals the label."""
    return float(np.mean(probs.argmax(axis=1) == labels))
