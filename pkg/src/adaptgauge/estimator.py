"""The accuracy-change estimator: stacked LSTM over per-epoch features.

The estimator maps the feature sequence (gd, iu, pd and their deltas) to the
change in validation accuracy since epoch 0. Epoch 0 output is 0 by
definition, inference outputs are clamped to [-1, 1], and inputs are
standardized with corpus statistics stored in the checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from . import checkpoint as ckpt
from .features import FeatureRecord, feature_names
from .nn import Dense, LSTMCell, Module
from .optim import Adam, clip_grad_norm

ESTIMATOR_FORMAT = 1


@dataclass(frozen=True)
class EstimatorArch:
    n_classes: int
    hidden: int = 200
    head_hidden: int = 20
    recurrent: bool = True
    feature_mask: tuple[str, ...] | None = None  # None = all features

    def active_features(self) -> list[str]:
        names = feature_names(self.n_classes)
        if self.feature_mask is None:
            return names
        unknown = set(self.feature_mask) - set(names)
        if unknown:
            raise ValueError(f"unknown feature names in mask: {sorted(unknown)}")
        return [n for n in names if n in self.feature_mask]


class EstimatorNet(Module):
    def __init__(self, rng, arch: EstimatorArch):
        super().__init__()
        self.arch = arch
        self.active = arch.active_features()
        names = feature_names(arch.n_classes)
        self._active_idx = np.array([names.index(n) for n in self.active])
        in_dim = len(self.active)
        if arch.recurrent:
            self.add_child("lstm0", LSTMCell(rng, in_dim, arch.hidden))
            self.add_child("lstm1", LSTMCell(rng, arch.hidden, arch.hidden))
            head_in = arch.hidden
        else:
            head_in = in_dim
        self.add_child("head0", Dense(rng, head_in, arch.head_hidden))
        self.add_child("head1", Dense(rng, arch.head_hidden, 1))
        # Input standardization constants; identity until fitted on a corpus.
        self.input_mean = np.zeros(in_dim)
        self.input_std = np.ones(in_dim)

    def extra_state(self):
        return {"input_mean": self.input_mean, "input_std": self.input_std}

    def load_extra_state(self, state):
        self.input_mean = np.array(state["input_mean"], dtype=np.float64)
        self.input_std = np.array(state["input_std"], dtype=np.float64)

    def select(self, full_vectors: np.ndarray) -> np.ndarray:
        """Slice the active feature columns out of full layout vectors."""
        expected = 2 * (self.arch.n_classes + 2)
        if full_vectors.shape[-1] != expected:
            raise ValueError(
                f"feature dimension {full_vectors.shape[-1]} does not match "
                f"estimator trained for K={self.arch.n_classes} (wants {expected})")
        return full_vectors[..., self._active_idx]

    def step_outputs(self, batch: np.ndarray) -> list[Value]:
        """Raw per-step outputs for a (B, T+1, D_active) standardized batch."""
        b, steps, _ = batch.shape
        outs = []
        if self.arch.recurrent:
            h0, c0 = self._children["lstm0"].zero_state(b)
            h1, c1 = self._children["lstm1"].zero_state(b)
            for t in range(steps):
                x = Value(batch[:, t, :])
                h0, c0 = self._children["lstm0"](x, h0, c0)
                h1, c1 = self._children["lstm1"](h0, h1, c1)
                outs.append(self._head(h1))
        else:
            for t in range(steps):
                outs.append(self._head(Value(batch[:, t, :])))
        return outs

    def _head(self, h: Value) -> Value:
        return self._children["head1"](ad.relu(self._children["head0"](h)))

    def standardize(self, active_vectors: np.ndarray) -> np.ndarray:
        return (active_vectors - self.input_mean) / self.input_std


def estimate_sequence(net: EstimatorNet, records: list[FeatureRecord]) -> np.ndarray:
    """Predicted accuracy change per epoch; entry 0 is 0, rest clamped to [-1,1].

    State is reset at the start, so replaying a sequence is bit-exact.
    """
    full = np.stack([r.vector() for r in records])
    batch = net.standardize(net.select(full))[None, :, :]
    outs = net.step_outputs(batch)
    est = np.array([float(o.data[0, 0]) for o in outs])
    est[0] = 0.0
    return np.clip(est, -1.0, 1.0)


def sequence_loss(net: EstimatorNet, batch: np.ndarray, targets: np.ndarray,
                  mask: np.ndarray) -> Value:
    """Masked mean L1 between raw outputs and delta-accuracy targets.

    mask must already exclude epoch 0 (a definitional zero) and padding.
    """
    outs = net.step_outputs(batch)
    total = None
    for t, out in enumerate(outs):
        m = mask[:, t]
        if not m.any():
            continue
        diff = ad.absolute(out - Value(targets[:, t:t + 1]))
        term = ad.sum_all(ad.mul(diff, Value(m[:, None].astype(float))))
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / mask.sum())


@dataclass
class TrainSpec:
    learning_rate: float = 1e-5
    epochs: int = 200
    batch_episodes: int = 16
    clip_norm: float = 5.0
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    n_train: int = 0
    n_val: int = 0


def train_estimator(sequences: list[tuple[np.ndarray, np.ndarray]],
                    spec: TrainSpec, seed: int, arch: EstimatorArch,
                    ) -> tuple[EstimatorNet, TrainReport]:
    """Fit on (full feature matrix, delta-accuracy) pairs; keeps the
    checkpoint with the best held-out loss rather than the last epoch.

    Each sequence is ((T+1, 2*(K+2)) features, (T+1,) targets).
    """
    if len(sequences) < 2:
        raise ValueError(f"corpus of {len(sequences)} episode(s) is too small to split")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(21,)))
    net = EstimatorNet(rng, arch)

    perm = rng.permutation(len(sequences))
    n_val = max(1, int(round(spec.val_fraction * len(sequences))))
    val_set = [sequences[i] for i in perm[:n_val]]
    train_set = [sequences[i] for i in perm[n_val:]]

    picked = np.concatenate([net.select(f) for f, _ in train_set], axis=0)
    net.input_mean = picked.mean(axis=0)
    net.input_std = np.maximum(picked.std(axis=0), 1e-8)

    opt = Adam(net.parameters(), spec.learning_rate)
    report = TrainReport(n_train=len(train_set), n_val=len(val_set))
    best_params = None

    def batches(items, shuffle):
        order = rng.permutation(len(items)) if shuffle else np.arange(len(items))
        for lo in range(0, len(items), spec.batch_episodes):
            group = [items[i] for i in order[lo:lo + spec.batch_episodes]]
            yield _pad_batch(net, group)

    for epoch in range(spec.epochs):
        losses = []
        for batch, targets, mask in batches(train_set, shuffle=True):
            net.zero_grad()
            loss = sequence_loss(net, batch, targets, mask)
            loss.backward()
            clip_grad_norm(net.parameters(), spec.clip_norm)
            opt.step()
            losses.append(float(loss.data))
        report.train_losses.append(float(np.mean(losses)))
        val_loss = evaluate_loss(net, val_set, spec.batch_episodes)
        report.val_losses.append(val_loss)
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in net.parameters().items()}

    if best_params is not None:
        for k, p in net.parameters().items():
            p.data[...] = best_params[k]
    return net, report


def evaluate_loss(net: EstimatorNet, sequences, batch_episodes: int = 16) -> float:
    total, count = 0.0, 0
    for lo in range(0, len(sequences), batch_episodes):
        batch, targets, mask = _pad_batch(net, sequences[lo:lo + batch_episodes])
        loss = sequence_loss(net, batch, targets, mask)
        total += float(loss.data) * mask.sum()
        count += mask.sum()
    return total / count


def _pad_batch(net, group):
    steps = max(f.shape[0] for f, _ in group)
    dim = len(net.active)
    batch = np.zeros((len(group), steps, dim))
    targets = np.zeros((len(group), steps))
    mask = np.zeros((len(group), steps), dtype=bool)
    for i, (feats, targ) in enumerate(group):
        t = feats.shape[0]
        batch[i, :t] = net.standardize(net.select(feats))
        targets[i, :t] = targ
        mask[i, 1:t] = True  # epoch 0 is definitionally zero; padding stays off
    return batch, targets, mask


# ---------------------------------------------------------------------------
# persistence


def save_estimator(path, net: EstimatorNet, corpus_fingerprint: str = ""):
    meta = {
        "estimator_format": ESTIMATOR_FORMAT,
        "n_classes": net.arch.n_classes,
        "hidden": net.arch.hidden,
        "head_hidden": net.arch.head_hidden,
        "recurrent": net.arch.recurrent,
        "feature_mask": list(net.arch.feature_mask) if net.arch.feature_mask else None,
        "feature_layout": net.active,
        "corpus_fingerprint": corpus_fingerprint,
    }
    ckpt.save_module(path, net, meta)


def load_estimator(path) -> tuple[EstimatorNet, dict]:
    arrays, meta = ckpt.load_arrays(path)
    fmt = meta.get("estimator_format")
    if fmt != ESTIMATOR_FORMAT:
        raise ckpt.CheckpointError(
            f"estimator format mismatch: file has {fmt}, reader supports {ESTIMATOR_FORMAT}")
    arch = EstimatorArch(
        n_classes=meta["n_classes"], hidden=meta["hidden"],
        head_hidden=meta["head_hidden"], recurrent=meta["recurrent"],
        feature_mask=tuple(meta["feature_mask"]) if meta["feature_mask"] else None)
    net = EstimatorNet(np.random.default_rng(0), arch)
    ckpt.load_module(path, net)
    return net, meta
