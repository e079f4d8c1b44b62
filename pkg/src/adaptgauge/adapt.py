"""Source pre-training and the four target-adaptation procedures.

Every procedure records, per epoch, the model's output probabilities on a
fixed validation set (epoch 0 before any update), together with ground-truth
accuracy where labels are available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .data import DomainDataset
from .models import (ClassifierArch, ClassifierNet, DomainDiscriminator,
                     accuracy_from_matrix, feature_matrix, predict_matrix)
from .nn import cross_entropy, l2_penalty
from .optim import FrozenOptimizer, make_optimizer

ALGORITHMS = ("finetune", "dann", "cdan", "shot")


@dataclass
class AdaptationConfig:
    algorithm: str = "finetune"
    n_target_samples: int = 25
    labeled: bool = True
    epochs: int = 100
    learning_rate: float = 0.001
    lam: float = 1.0
    label_noise: float = 0.0
    optimizer: str = "adam"
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm == "finetune" and not self.labeled:
            raise ValueError("finetune requires labeled target data")
        if self.algorithm != "finetune" and self.labeled:
            raise ValueError(f"{self.algorithm} is an unlabeled-target procedure")
        # epochs=0 is legal for evaluation-only runs (one matrix, no updates).
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class PretrainReport:
    initial_loss: float
    final_loss: float
    val_accuracy: float | None = None


def pretrain(sources: list[DomainDataset], epochs: int, seed: int,
             arch: ClassifierArch = ClassifierArch(), learning_rate: float = 0.001,
             l2_weight: float = 1e-4, batch_size: int = 32,
             val: DomainDataset | None = None) -> tuple[ClassifierNet, PretrainReport]:
    """Cross-entropy training of a fresh classifier on pooled source domains."""
    if not sources:
        raise ValueError("pretrain needs at least one source domain")
    xs = np.concatenate([d.windows for d in sources], axis=0)
    ys = np.concatenate([d.labels for d in sources], axis=0)
    k = sources[0].n_classes
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    model = ClassifierNet(rng, xs.shape[1], xs.shape[2], k, arch)
    opt = make_optimizer("adam", model.parameters(), learning_rate)

    initial = final = None
    for epoch in range(epochs):
        order = rng.permutation(len(xs))
        losses = []
        for lo in range(0, len(order), batch_size):
            idx = order[lo:lo + batch_size]
            model.zero_grad()
            loss = cross_entropy(model(Value(xs[idx])), ys[idx])
            loss = ad.add(loss, l2_penalty(model.parameters(), l2_weight))
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        mean_loss = float(np.mean(losses))
        if initial is None:
            initial = mean_loss
        final = mean_loss
    report = PretrainReport(initial_loss=initial, final_loss=final)
    if val is not None:
        report.val_accuracy = accuracy_from_matrix(
            predict_matrix(model, val.windows), val.labels)
    return model, report


# ---------------------------------------------------------------------------
# per-batch steps


def finetune_step(model, opt, xb: np.ndarray, yb: np.ndarray) -> float:
    model.zero_grad()
    loss = cross_entropy(model(Value(xb)), yb)
    loss.backward()
    opt.step()
    return float(loss.data)


def dann_step(model, disc, opt, xs, ys, xt, lam: float) -> float:
    """Class CE on source plus adversarial domain CE through gradient reversal.

    The balancing factor lives inside the reversal layer: the discriminator
    always receives the full domain-CE gradient, while the features receive
    it scaled by -lam. With lam=0 this reduces to source-only CE for the
    classifier while the discriminator keeps training.
    """
    if xs is None or len(xs) == 0:
        raise ValueError("dann requires source batches during adaptation")
    model.zero_grad()
    disc.zero_grad()
    fs = model.features(Value(xs))
    ft = model.features(Value(xt))
    class_loss = cross_entropy(model.logits_from_features(fs), ys)
    dom_logits = disc(ad.grad_reversal(ad.concat_rows(fs, ft), lam))
    dom_labels = np.r_[np.zeros(len(xs), dtype=int), np.ones(len(xt), dtype=int)]
    loss = ad.add(class_loss, cross_entropy(dom_logits, dom_labels))
    loss.backward()
    opt.step()
    return float(loss.data)


def cdan_step(model, disc, opt, xs, ys, xt, lam: float) -> float:
    """As dann_step but the discriminator sees feature x prediction outer products."""
    if xs is None or len(xs) == 0:
        raise ValueError("cdan requires source batches during adaptation")
    model.zero_grad()
    disc.zero_grad()
    fs = model.features(Value(xs))
    ft = model.features(Value(xt))
    class_loss = cross_entropy(model.logits_from_features(fs), ys)
    # Predictions enter the conditioning map as constants, matching the usual
    # practice of detaching the classifier output.
    ps = ad.softmax(model.logits_from_features(fs)).data
    pt = ad.softmax(model.logits_from_features(ft)).data
    cond = ad.concat_rows(_outer_map(fs, ps), _outer_map(ft, pt))
    dom_logits = disc(ad.grad_reversal(cond, lam))
    dom_labels = np.r_[np.zeros(len(xs), dtype=int), np.ones(len(xt), dtype=int)]
    loss = ad.add(class_loss, cross_entropy(dom_logits, dom_labels))
    loss.backward()
    opt.step()
    return float(loss.data)


def _outer_map(f: Value, probs: np.ndarray) -> Value:
    """Flattened outer product f_i p_j per row; probs held constant."""
    n, d = f.data.shape
    k = probs.shape[1]
    tiled = ad.tile_cols(f, k)                       # (n, d*k): f repeated per class
    weights = Value(np.repeat(probs, d, axis=1))     # p_j broadcast over feature dim
    return ad.mul(tiled, weights)


def im_terms(probs: "Value") -> tuple["Value", "Value"]:
    """The two information-maximization entropies of a prediction batch.

    Returns (mean per-sample entropy, entropy of the mean prediction); the
    adaptation objective minimizes the first and maximizes the second.
    """
    n = probs.data.shape[0]
    logp = ad.log(probs)
    iu_term = ad.scale(ad.sum_all(ad.mul(probs, logp)), -1.0 / n)
    mean_p = ad.mean_axis0(probs)
    gd_term = ad.scale(ad.sum_all(ad.mul(mean_p, ad.log(mean_p))), -1.0)
    return iu_term, gd_term


def shot_step(model, opt, xt: np.ndarray, pseudo: np.ndarray, lam: float) -> float:
    """Information-maximization plus pseudo-label CE; classifier head frozen.

    Receives only unlabeled target windows; pseudo comes from feature-space
    centroids, never from ground truth.
    """
    model.zero_grad()
    logits = model(Value(xt))
    iu_term, gd_term = im_terms(ad.softmax(logits))
    loss = ad.add(iu_term, ad.scale(gd_term, -1.0))
    if lam > 0:
        loss = ad.add(loss, ad.scale(cross_entropy(logits, pseudo), lam))
    loss.backward()
    opt.step()
    return float(loss.data)


def shot_centroids_and_pseudo(model, windows: np.ndarray,
                              prev_centroids: np.ndarray | None
                              ) -> tuple[np.ndarray, np.ndarray]:
    """Per-class feature centroids (cosine geometry) and nearest-centroid labels.

    Classes with an empty prediction bucket keep their previous centroid; at
    the first epoch an empty bucket falls back to the soft-weighted mean.
    """
    feats = feature_matrix(model, windows)
    probs = predict_matrix(model, windows)
    k = probs.shape[1]
    hard = probs.argmax(axis=1)
    soft = (probs.T @ feats) / np.maximum(probs.sum(axis=0)[:, None], 1e-8)
    centroids = np.empty((k, feats.shape[1]))
    for cls in range(k):
        bucket = feats[hard == cls]
        if len(bucket):
            centroids[cls] = bucket.mean(axis=0)
        elif prev_centroids is not None:
            centroids[cls] = prev_centroids[cls]
        else:
            centroids[cls] = soft[cls]
    fn = feats / np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1e-12)
    cn = centroids / np.maximum(np.linalg.norm(centroids, axis=1, keepdims=True), 1e-12)
    pseudo = (fn @ cn.T).argmax(axis=1)
    return centroids, pseudo


# ---------------------------------------------------------------------------
# full adaptation runs


@dataclass
class AdaptationRun:
    matrices: list[np.ndarray] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    holdout_accuracies: list[float] | None = None
    losses: list[float] = field(default_factory=list)
    diverged: bool = False


def apply_label_noise(labels: np.ndarray, rate: float, k: int, rng) -> np.ndarray:
    """Uniformly relabel a fraction of instances (mislabeling simulation)."""
    noisy = labels.copy()
    n_flip = int(round(rate * len(labels)))
    if n_flip:
        idx = rng.choice(len(labels), size=n_flip, replace=False)
        noisy[idx] = rng.integers(0, k, size=n_flip)
    return noisy


def run_adaptation(model: ClassifierNet, target_train: DomainDataset,
                   target_val: DomainDataset, config: AdaptationConfig,
                   source_pool: DomainDataset | None = None,
                   holdout: DomainDataset | None = None) -> AdaptationRun:
    """Adapt in place for config.epochs, logging per-epoch validation outputs.

    Returns epochs+1 prediction matrices (entry 0 from the untouched model)
    and matching ground-truth accuracies. Divergence to non-finite values
    marks the run failed instead of raising.
    """
    if len(target_val) == 0:
        raise ValueError("empty validation set")
    _assert_disjoint(target_train, target_val)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(7,)))
    k = target_val.n_classes

    train_labels = target_train.labels
    if config.labeled and config.label_noise > 0:
        train_labels = apply_label_noise(train_labels, config.label_noise, k, rng)

    if config.algorithm == "shot":
        params = model.extractor_parameters()
    elif config.algorithm in ("dann", "cdan"):
        if source_pool is None:
            raise ValueError(f"{config.algorithm} requires source data")
        cond_dim = model.feature_dim * (k if config.algorithm == "cdan" else 1)
        disc = DomainDiscriminator(np.random.default_rng(
            np.random.SeedSequence(entropy=config.seed, spawn_key=(8,))), cond_dim)
        params = {**model.parameters(),
                  **{f"disc.{n}": p for n, p in disc.parameters().items()}}
    else:
        params = model.parameters()
    opt = (FrozenOptimizer(params) if config.learning_rate == 0
           else make_optimizer(config.optimizer, params, config.learning_rate))

    run = AdaptationRun(holdout_accuracies=[] if holdout is not None else None)
    centroids = None

    def log_epoch() -> bool:
        probs = predict_matrix(model, target_val.windows)
        if not np.isfinite(probs).all():
            return False
        run.matrices.append(probs)
        run.accuracies.append(accuracy_from_matrix(probs, target_val.labels))
        if holdout is not None:
            run.holdout_accuracies.append(accuracy_from_matrix(
                predict_matrix(model, holdout.windows), holdout.labels))
        return True

    if not log_epoch():
        run.diverged = True
        return run

    model.train()
    for _ in range(config.epochs):
        if config.algorithm == "shot":
            centroids, pseudo = shot_centroids_and_pseudo(
                model, target_train.windows, centroids)
        order = rng.permutation(len(target_train))
        epoch_losses = []
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            xb = target_train.windows[idx]
            if config.algorithm == "finetune":
                loss = finetune_step(model, opt, xb, train_labels[idx])
            elif config.algorithm == "shot":
                loss = shot_step(model, opt, xb, pseudo[idx], config.lam)
            else:
                sidx = rng.choice(len(source_pool), size=len(idx),
                                  replace=len(source_pool) < len(idx))
                step = dann_step if config.algorithm == "dann" else cdan_step
                loss = step(model, disc, opt, source_pool.windows[sidx],
                            source_pool.labels[sidx], xb, config.lam)
            epoch_losses.append(loss)
        run.losses.append(float(np.mean(epoch_losses)) if epoch_losses else math.nan)
        if epoch_losses and not math.isfinite(run.losses[-1]):
            run.diverged = True
            return run
        if not log_epoch():
            run.diverged = True
            return run
    model.eval()
    return run


def _assert_disjoint(train: DomainDataset, val: DomainDataset):
    train_keys = {w.tobytes() for w in train.windows}
    for w in val.windows:
        if w.tobytes() in train_keys:
            raise ValueError("adaptation-train and validation sets overlap")
