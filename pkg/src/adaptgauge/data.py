"""Multi-domain windowed time-series datasets.

A synthetic generator emulates user/device heterogeneity: every class has a
shared sinusoid-mixture template, and every domain distorts it with its own
gains, offsets, time warp, decimation, and noise level. Datasets round-trip
through a per-timestep CSV format.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DomainDataset:
    """Labeled fixed-shape windows from one domain (one user/device condition)."""

    domain_id: str
    windows: np.ndarray  # (n, C, L)
    labels: np.ndarray   # (n,) int
    n_classes: int

    def __post_init__(self):
        if self.windows.ndim != 3 or len(self.windows) != len(self.labels):
            raise ValueError(
                f"domain {self.domain_id}: windows {self.windows.shape} do not "
                f"match {len(self.labels)} labels")
        if len(self.labels) < 1:
            raise ValueError(f"domain {self.domain_id}: empty dataset")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError(
                f"domain {self.domain_id}: label out of range [0, {self.n_classes})")
        self.windows.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    @property
    def channels(self):
        return self.windows.shape[1]

    @property
    def length(self):
        return self.windows.shape[2]

    def subset(self, indices, tag: str = "") -> "DomainDataset":
        indices = np.asarray(indices)
        return DomainDataset(self.domain_id + tag, self.windows[indices].copy(),
                             self.labels[indices].copy(), self.n_classes)


@dataclass(frozen=True)
class Heterogeneity:
    """Per-factor strengths of the domain-level distortions; 0 disables all."""

    gain: float = 1.0
    offset: float = 1.0
    warp: float = 1.0
    decimate: float = 1.0
    noise: float = 1.0

    @classmethod
    def scaled(cls, strength: float) -> "Heterogeneity":
        return cls(*(strength,) * 5)


@dataclass(frozen=True)
class GeneratorConfig:
    n_domains: int = 8
    n_classes: int = 6
    channels: int = 3
    length: int = 128
    instances_per_domain: int = 600
    heterogeneity: Heterogeneity = field(default_factory=Heterogeneity)
    base_noise: float = 0.08
    sinusoids_per_class: int = 3


FREQ_RATIO = 1.3  # geometric spacing of class frequency bands


def generate_synthetic(config: GeneratorConfig, seed: int) -> list[DomainDataset]:
    """Draw one dataset per domain from shared class templates.

    Classes sit on a geometric frequency ladder, so a domain's time-warp
    factor (different user dynamics / sampling rate) pushes one class toward
    its neighbor's band: the mechanism behind cross-domain accuracy drops.
    Deterministic in (config, seed): same inputs give byte-identical arrays.
    """
    k, c, length = config.n_classes, config.channels, config.length
    if k < 2 or c < 1 or length < 8:
        raise ValueError(f"degenerate config: K={k}, C={c}, L={length}")
    if k > config.instances_per_domain:
        raise ValueError(
            f"degenerate config: {config.instances_per_domain} instances per domain "
            f"cannot cover {k} classes")

    root = np.random.SeedSequence(seed)
    template_rng = np.random.default_rng(root.spawn(1)[0])
    het = config.heterogeneity

    # Harmonic stacks per (class, channel): base frequencies shared up the
    # ladder, amplitudes and a slow envelope give secondary class cues.
    n_sin = config.sinusoids_per_class
    harmonics = np.arange(1, n_sin + 1)
    base = template_rng.uniform(1.2, 1.8, size=(k, c, n_sin)) * harmonics
    freq = base * FREQ_RATIO ** np.arange(k)[:, None, None]
    amp = template_rng.uniform(0.4, 1.2, size=(k, c, n_sin)) / harmonics
    phase = template_rng.uniform(0, 2 * math.pi, size=(k, c, n_sin))
    env_freq = template_rng.uniform(0.3, 1.0, size=k)
    env_phase = template_rng.uniform(0, 2 * math.pi, size=k)

    def template(cls: int, t: np.ndarray) -> np.ndarray:
        # t has shape (n, L); returns (n, C, L)
        out = np.zeros((t.shape[0], c, length))
        for ch in range(c):
            for j in range(n_sin):
                out[:, ch, :] += amp[cls, ch, j] * np.sin(
                    2 * math.pi * freq[cls, ch, j] * t + phase[cls, ch, j])
        envelope = 1.0 + 0.35 * np.sin(2 * math.pi * env_freq[cls] * t
                                       + env_phase[cls])
        return out * envelope[:, None, :]

    datasets = []
    for d, dom_seed in enumerate(root.spawn(config.n_domains + 1)[1:]):
        rng = np.random.default_rng(dom_seed)
        # Channel gain + cross-channel leakage emulate device placement.
        mix = np.diag(np.exp(rng.normal(0.0, 0.20 * het.gain, size=c)))
        mix += rng.normal(0.0, 0.25 * het.gain, size=(c, c)) * (1 - np.eye(c))
        offsets = rng.normal(0.0, 0.40 * het.offset, size=c)
        warp = math.exp(rng.normal(0.0, 0.22 * het.warp))
        decim = int(1 + rng.integers(1, 3)) if rng.random() < 0.4 * min(het.decimate, 1.0) else 1
        noise = config.base_noise + abs(rng.normal(0.0, 0.25 * het.noise))

        n = config.instances_per_domain
        labels = np.arange(n) % k
        rng.shuffle(labels)
        grid = np.arange(length) / length
        shifts = rng.uniform(0, 1, size=n)
        amps = np.exp(rng.normal(0.0, 0.10, size=n))
        jitter = np.exp(rng.normal(0.0, 0.04, size=n))  # within-domain pace spread
        windows = np.zeros((n, c, length))
        for cls in range(k):
            idx = np.where(labels == cls)[0]
            if idx.size == 0:
                continue
            t = (warp * jitter[idx, None]) * grid[None, :] + shifts[idx, None]
            windows[idx] = template(cls, t) * amps[idx, None, None]
        windows = np.einsum("ij,njl->nil", mix, windows)
        windows += offsets[None, :, None]
        if decim > 1:
            # Emulate a lower sampling rate: keep every decim-th sample and
            # linearly interpolate back to the native length.
            coarse = windows[:, :, ::decim]
            xi = np.linspace(0, coarse.shape[2] - 1, length)
            lo = np.floor(xi).astype(int)
            hi = np.minimum(lo + 1, coarse.shape[2] - 1)
            w = xi - lo
            windows = coarse[:, :, lo] * (1 - w) + coarse[:, :, hi] * w
        windows += rng.normal(0.0, noise, size=windows.shape)
        datasets.append(DomainDataset(f"dom{d}", windows, labels.astype(np.int64), k))
    return datasets


# ---------------------------------------------------------------------------
# standardization


def channel_stats(datasets: list[DomainDataset]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std pooled over windows and timesteps."""
    if not datasets or all(len(d) == 0 for d in datasets):
        raise ValueError("cannot compute standardization statistics from no data")
    stacked = np.concatenate([d.windows for d in datasets], axis=0)
    mean = stacked.mean(axis=(0, 2))
    std = stacked.std(axis=(0, 2))
    return mean, np.maximum(std, 1e-8)


def standardize(datasets: list[DomainDataset],
                stats: tuple[np.ndarray, np.ndarray]) -> list[DomainDataset]:
    mean, std = stats
    std = np.maximum(std, 1e-8)
    out = []
    for d in datasets:
        w = (d.windows - mean[None, :, None]) / std[None, :, None]
        out.append(DomainDataset(d.domain_id, w, d.labels.copy(), d.n_classes))
    return out


# ---------------------------------------------------------------------------
# splits


def split_dataset(ds: DomainDataset, train_fraction: float, seed: int
                  ) -> tuple[DomainDataset, DomainDataset]:
    """Disjoint (train, holdout) split, deterministic per (domain, seed)."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0,1), got {train_fraction}")
    rng = _domain_rng(ds.domain_id, seed, "split")
    perm = rng.permutation(len(ds))
    cut = int(round(train_fraction * len(ds)))
    return ds.subset(perm[:cut]), ds.subset(perm[cut:])


def sample_target_sets(target: DomainDataset, n_train: int, n_val: int, seed: int,
                       imbalance: dict[int, float] | None = None
                       ) -> tuple[DomainDataset, DomainDataset]:
    """Disjoint adaptation-train and validation subsets.

    The validation subset is a pure function of (domain, seed), independent of
    n_train, so every estimation method sees identical validation data.
    The optional imbalance spec maps class -> drop rate applied to the
    validation subset (each class retains ceil((1-rate)*count) instances).
    """
    if n_train + n_val > len(target):
        raise ValueError(
            f"domain {target.domain_id}: requested {n_train}+{n_val} samples "
            f"but only {len(target)} available")
    val_rng = _domain_rng(target.domain_id, seed, "val")
    perm = val_rng.permutation(len(target))
    val_idx = perm[:n_val]
    rest = perm[n_val:]
    train_rng = _domain_rng(target.domain_id, seed, "train")
    train_idx = rest[train_rng.permutation(len(rest))[:n_train]]
    val = target.subset(np.sort(val_idx), tag="/val")
    if imbalance:
        val = drop_classes(val, imbalance, seed)
    return target.subset(np.sort(train_idx), tag="/train"), val


def drop_classes(ds: DomainDataset, drop_rates: dict[int, float], seed: int
                 ) -> DomainDataset:
    """Drop a fraction of each listed class; keeps ceil((1-rate)*count)."""
    rng = _domain_rng(ds.domain_id, seed, "drop")
    keep = np.ones(len(ds), dtype=bool)
    for cls, rate in sorted(drop_rates.items()):
        if not 0 <= rate <= 1:
            raise ValueError(f"drop rate for class {cls} out of [0,1]: {rate}")
        idx = np.where(ds.labels == cls)[0]
        n_keep = math.ceil((1.0 - rate) * idx.size)
        drop = rng.permutation(idx.size)[n_keep:]
        keep[idx[drop]] = False
    return ds.subset(np.where(keep)[0], tag="/imb")


def skew_class_sample(ds: DomainDataset, n: int, weights: np.ndarray, rng
                      ) -> np.ndarray:
    """Indices of n instances drawn without replacement with per-class weights."""
    w = np.asarray(weights, dtype=np.float64)[ds.labels]
    w = w / w.sum()
    return rng.choice(len(ds), size=min(n, len(ds)), replace=False, p=w)


def _domain_rng(domain_id: str, seed: int, tag: str) -> np.random.Generator:
    # Stable across processes: hash the id bytes, not Python's salted hash.
    digest = hashlib.blake2s(f"{domain_id}:{tag}".encode(), digest_size=8).digest()
    key = int.from_bytes(digest, "little")
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


# ---------------------------------------------------------------------------
# CSV persistence


def write_csv(path, datasets: list[DomainDataset]):
    """One row per timestep: domain_id, instance_id, label, ch_0..ch_{C-1}.

    Floats are written with shortest round-trip repr, so read_csv reproduces
    values exactly.
    """
    channels = datasets[0].channels if datasets else 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["domain_id", "instance_id", "label"]
                        + [f"ch_{i}" for i in range(channels)])
        for ds in datasets:
            for i in range(len(ds)):
                inst = f"{ds.domain_id}_{i}"
                label = str(int(ds.labels[i]))
                for t in range(ds.length):
                    writer.writerow([ds.domain_id, inst, label]
                                    + [repr(float(v)) for v in ds.windows[i, :, t]])


def read_csv(path, length: int | None = None) -> list[DomainDataset]:
    """Windows are contiguous runs of one instance_id (fixed length each)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        channels = len(header) - 3
        if channels < 1 or header[:3] != ["domain_id", "instance_id", "label"]:
            raise ValueError(f"unrecognized CSV header: {header}")
        per_domain: dict[str, list] = {}
        cur_key, cur_rows, cur_label = None, [], None
        max_label = 0

        def flush():
            nonlocal cur_rows
            if cur_key is None:
                return
            dom = cur_key[0]
            win = np.array(cur_rows).T  # (C, L)
            per_domain.setdefault(dom, []).append((win, cur_label))
            cur_rows = []

        for row in reader:
            key = (row[0], row[1])
            if key != cur_key:
                flush()
                cur_key, cur_label = key, int(row[2])
            cur_rows.append([float(v) for v in row[3:]])
        flush()

    datasets = []
    for dom in per_domain:
        wins, labels = zip(*per_domain[dom])
        lengths = {w.shape[1] for w in wins}
        if length is not None:
            lengths |= {length}
        if len(lengths) != 1:
            raise ValueError(f"domain {dom}: inconsistent window lengths {sorted(lengths)}")
        labels = np.array(labels, dtype=np.int64)
        max_label = max(max_label, int(labels.max()))
        datasets.append((dom, np.stack(wins), labels))
    k = max_label + 1
    return [DomainDataset(dom, wins, labels, k) for dom, wins, labels in datasets]
