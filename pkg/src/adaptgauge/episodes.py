"""Simulated adaptation episodes: the estimator's training corpus.

Source domains are split into disjoint virtual-source/virtual-target groups;
a classifier is pre-trained on the virtual-source side (cached per split) and
adapted to the virtual-target side under randomized conditions. Features and
ground-truth accuracy are logged per epoch into an append-only, resumable
JSON-lines file keyed by episode index.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .adapt import AdaptationConfig, pretrain, run_adaptation
from .checkpoint import load_module, save_module
from .data import (DomainDataset, channel_stats, skew_class_sample, standardize,
                   _domain_rng)
from .features import FeatureRecord, build_feature_sequence
from .models import ClassifierArch, ClassifierNet

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RandomizationRanges:
    """Axes of the episode randomization; point-mass ranges are allowed."""

    algorithms: tuple[str, ...] = ("finetune", "dann", "cdan", "shot")
    labeled_samples: tuple[int, int] = (1, 50)
    unlabeled_samples: tuple[int, int] = (50, 500)
    learning_rate: tuple[float, float] = (1e-4, 1e-2)
    lambdas: tuple[float, ...] = (0.1, 0.5, 1.0)
    optimizers: tuple[str, ...] = ("adam", "sgd")
    label_noise_max: float = 0.3
    label_noise_prob: float = 0.5
    imbalance_prob: float = 0.5
    imbalance_min_weight: float = 0.2
    epochs: int = 100
    val_size: int = 500
    max_target_domains: int = 2
    pretrain_epochs: int = 20
    pretrain_lr: float = 0.001
    batch_size: int = 32


@dataclass(frozen=True)
class EpisodeConfig:
    episode_index: int
    seed: int
    split_mode: str                      # "domains" | "instances"
    virtual_target_ids: tuple[str, ...]
    split_seed: int
    algorithm: str
    n_target_samples: int
    learning_rate: float
    lam: float
    optimizer: str
    label_noise: float
    class_weights: tuple[float, ...]     # sampling weights for the train draw
    epochs: int
    val_size: int
    pretrain_epochs: int
    pretrain_lr: float
    batch_size: int


@dataclass
class Episode:
    config: EpisodeConfig
    records: list[FeatureRecord]
    code_version: str = __version__
    wall_time: float = 0.0


def draw_episode_config(master_seed: int, episode_index: int,
                        ranges: RandomizationRanges, domain_ids: list[str],
                        n_classes: int) -> EpisodeConfig:
    """Deterministic draw over every randomized axis for one episode index."""
    if len(domain_ids) < 2:
        raise ValueError(
            f"need at least 2 source domains to split, got {len(domain_ids)}")
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(1000, episode_index)))
    algorithm = str(ranges.algorithms[rng.integers(len(ranges.algorithms))])

    if len(domain_ids) >= 4:
        split_mode = "domains"
        max_vt = min(ranges.max_target_domains, len(domain_ids) - 2)
        n_vt = int(rng.integers(1, max_vt + 1))
        vt = tuple(sorted(rng.choice(domain_ids, size=n_vt, replace=False).tolist()))
    else:
        split_mode = "instances"
        vt = (str(domain_ids[rng.integers(len(domain_ids))]),)

    lo, hi = (ranges.labeled_samples if algorithm == "finetune"
              else ranges.unlabeled_samples)
    n_target = int(rng.integers(lo, hi + 1))
    lr_lo, lr_hi = ranges.learning_rate
    learning_rate = float(np.exp(rng.uniform(np.log(lr_lo), np.log(lr_hi))))
    lam = float(ranges.lambdas[rng.integers(len(ranges.lambdas))])
    optimizer = str(ranges.optimizers[rng.integers(len(ranges.optimizers))])
    label_noise = 0.0
    if algorithm == "finetune" and rng.random() < ranges.label_noise_prob:
        label_noise = float(rng.uniform(0.0, ranges.label_noise_max))
    weights = np.ones(n_classes)
    if rng.random() < ranges.imbalance_prob:
        skewed = rng.choice(n_classes, size=n_classes // 2, replace=False)
        weights[skewed] = rng.uniform(ranges.imbalance_min_weight, 1.0, size=len(skewed))
    return EpisodeConfig(
        episode_index=episode_index,
        seed=int(rng.integers(2 ** 31)),
        split_mode=split_mode,
        virtual_target_ids=vt,
        split_seed=int(rng.integers(2 ** 31)),
        algorithm=algorithm,
        n_target_samples=n_target,
        learning_rate=learning_rate,
        lam=lam,
        optimizer=optimizer,
        label_noise=label_noise,
        class_weights=tuple(round(float(w), 6) for w in weights),
        epochs=ranges.epochs,
        val_size=ranges.val_size,
        pretrain_epochs=ranges.pretrain_epochs,
        pretrain_lr=ranges.pretrain_lr,
        batch_size=ranges.batch_size,
    )


# ---------------------------------------------------------------------------
# running one episode


class PretrainCache:
    """Per-split classifier cache; optionally backed by a directory."""

    def __init__(self, directory=None, arch: ClassifierArch = ClassifierArch()):
        self.directory = directory
        self.arch = arch
        self.memory: dict[str, ClassifierNet] = {}
        if directory is not None:
            os.makedirs(directory, exist_ok=True)

    def get_or_train(self, key: str, sources: list[DomainDataset],
                     epochs: int, lr: float, batch_size: int) -> ClassifierNet:
        if key in self.memory:
            return _clone(self.memory[key])
        path = None
        template = ClassifierNet(
            np.random.default_rng(0), sources[0].channels, sources[0].length,
            sources[0].n_classes, self.arch)
        if self.directory is not None:
            path = os.path.join(self.directory, key + ".ckpt")
            if os.path.exists(path):
                load_module(path, template)
                self.memory[key] = template
                return _clone(template)
        seed = int.from_bytes(hashlib.blake2s(key.encode(), digest_size=4).digest(), "little")
        model, _ = pretrain(sources, epochs=epochs, seed=seed, arch=self.arch,
                            learning_rate=lr, batch_size=batch_size)
        self.memory[key] = model
        if path is not None:
            tmp = path + f".tmp{os.getpid()}"
            save_module(tmp, model)
            os.replace(tmp, path)
        return _clone(model)


def _clone(model: ClassifierNet) -> ClassifierNet:
    fresh = model.spawn_like(np.random.default_rng(0))
    for name, p in model.parameters().items():
        fresh.parameters()[name].data[...] = p.data
    for name in list(fresh._children):
        src, dst = model._children[name], fresh._children[name]
        if hasattr(src, "extra_state"):
            dst.load_extra_state(src.extra_state())
    fresh.training = model.training
    return fresh


def split_virtual(sources: list[DomainDataset], config: EpisodeConfig
                  ) -> tuple[list[DomainDataset], DomainDataset]:
    """Disjoint virtual-source list and pooled virtual-target dataset."""
    by_id = {d.domain_id: d for d in sources}
    if config.split_mode == "domains":
        vs = [d for d in sources if d.domain_id not in config.virtual_target_ids]
        vt_parts = [by_id[i] for i in config.virtual_target_ids]
    else:
        vs, vt_parts = [], []
        for d in sources:
            rng = _domain_rng(d.domain_id, config.split_seed, "virtual")
            perm = rng.permutation(len(d))
            half = len(d) // 2
            if d.domain_id in config.virtual_target_ids:
                vs.append(d.subset(perm[:half], tag="/vsrc"))
                vt_parts.append(d.subset(perm[half:], tag="/vtgt"))
            else:
                vs.append(d.subset(perm[:half], tag="/vsrc"))
    vt = DomainDataset(
        "+".join(config.virtual_target_ids),
        np.concatenate([d.windows for d in vt_parts], axis=0),
        np.concatenate([d.labels for d in vt_parts], axis=0),
        vt_parts[0].n_classes)
    return vs, vt


def split_key(config: EpisodeConfig, vs: list[DomainDataset]) -> str:
    raw = "|".join([",".join(sorted(d.domain_id for d in vs)), config.split_mode,
                    str(config.split_seed if config.split_mode == "instances" else 0),
                    str(config.pretrain_epochs), repr(config.pretrain_lr),
                    str(config.batch_size)])
    return hashlib.blake2s(raw.encode(), digest_size=10).hexdigest()


@dataclass
class EpisodeResult:
    episode: Episode | None
    failed: bool = False
    matrices: list[np.ndarray] | None = None


def run_episode(sources: list[DomainDataset], config: EpisodeConfig,
                cache: PretrainCache | None = None,
                keep_matrices: bool = False) -> EpisodeResult:
    """Pretrain on the virtual-source split, adapt to the virtual-target,
    and log per-epoch features with ground-truth accuracy.

    Ground-truth labels exist during simulation but never reach the feature
    path; they are only compared against argmax predictions.
    """
    start = time.monotonic()
    cache = cache or PretrainCache()
    vs, vt = split_virtual(sources, config)

    stats = channel_stats(vs)
    vs_std = standardize(vs, stats)
    vt_std = standardize([vt], stats)[0]

    model = cache.get_or_train(split_key(config, vs), vs_std,
                               config.pretrain_epochs, config.pretrain_lr,
                               config.batch_size)

    rng = np.random.default_rng(np.random.SeedSequence(
        entropy=config.seed, spawn_key=(2000,)))
    n_val = min(config.val_size, max(1, len(vt_std) - config.n_target_samples))
    val_rng = _domain_rng(vt_std.domain_id, config.seed, "val")
    perm = val_rng.permutation(len(vt_std))
    val = vt_std.subset(np.sort(perm[:n_val]), tag="/val")
    remainder = vt_std.subset(perm[n_val:], tag="/pool")
    train_idx = skew_class_sample(remainder, config.n_target_samples,
                                  np.array(config.class_weights), rng)
    train = remainder.subset(np.sort(train_idx), tag="/train")

    adapt_cfg = AdaptationConfig(
        algorithm=config.algorithm,
        n_target_samples=config.n_target_samples,
        labeled=config.algorithm == "finetune",
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        lam=config.lam,
        label_noise=config.label_noise,
        optimizer=config.optimizer,
        batch_size=config.batch_size,
        seed=config.seed,
    )
    source_pool = None
    if config.algorithm in ("dann", "cdan"):
        source_pool = DomainDataset(
            "vs_pool",
            np.concatenate([d.windows for d in vs_std], axis=0),
            np.concatenate([d.labels for d in vs_std], axis=0),
            vt.n_classes)
    run = run_adaptation(model, train, val, adapt_cfg, source_pool=source_pool)
    if run.diverged:
        return EpisodeResult(None, failed=True)
    records = build_feature_sequence(run.matrices, run.accuracies)
    episode = Episode(config=config, records=records,
                      wall_time=time.monotonic() - start)
    return EpisodeResult(episode, matrices=run.matrices if keep_matrices else None)


# ---------------------------------------------------------------------------
# episode log persistence


def episode_to_line(episode: Episode) -> str:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "episode_index": episode.config.episode_index,
        "config": dataclasses.asdict(episode.config),
        "epochs": [{
            "gd": r.gd, "iu": r.iu, "pd": [float(v) for v in r.pd],
            "dgd": r.dgd, "diu": r.diu, "dpd": [float(v) for v in r.dpd],
            "acc": r.accuracy, "delta_acc": r.truth_delta_acc,
        } for r in episode.records],
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def failed_line(index: int) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, "episode_index": index,
                       "failed": True}, sort_keys=True, separators=(",", ":"))


def parse_log(path) -> tuple[dict[int, dict], set[int]]:
    """Episodes by index plus the set of failed indices; rejects version skew."""
    episodes, failed = {}, set()
    if not os.path.exists(path):
        return episodes, failed
    with open(path) as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("schema_version") != SCHEMA_VERSION:
                raise ValueError(
                    f"{path}:{ln}: episode log schema version "
                    f"{obj.get('schema_version')} != supported {SCHEMA_VERSION}")
            if obj.get("kind") == "header":
                continue
            if obj.get("failed"):
                failed.add(obj["episode_index"])
            else:
                episodes[obj["episode_index"]] = obj
    return episodes, failed


def log_to_sequences(episodes: dict[int, dict]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Full-layout feature matrices and delta-accuracy targets, index-sorted."""
    out = []
    for index in sorted(episodes):
        rows, targets = [], []
        for rec in episodes[index]["epochs"]:
            rows.append(np.concatenate([[rec["gd"], rec["iu"]], rec["pd"],
                                        [rec["dgd"], rec["diu"]], rec["dpd"]]))
            targets.append(rec["delta_acc"])
        out.append((np.array(rows), np.array(targets, dtype=np.float64)))
    return out


def corpus_fingerprint(episodes: dict[int, dict]) -> str:
    digest = hashlib.blake2s(digest_size=8)
    for index in sorted(episodes):
        digest.update(episode_to_line_from_obj(episodes[index]).encode())
    return digest.hexdigest()


def episode_to_line_from_obj(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class CorpusReport:
    requested: int = 0
    completed: int = 0
    failed: int = 0
    reused: int = 0


def generate_corpus(sources: list[DomainDataset], n_episodes: int, master_seed: int,
                    ranges: RandomizationRanges, log_path, workers: int = 1,
                    cache_dir=None, arch: ClassifierArch = ClassifierArch(),
                    ) -> CorpusReport:
    """Append episodes for every index in [0, n_episodes) missing from the log.

    Safe to resume: existing indices are kept verbatim. Content is a pure
    function of (sources, master_seed, ranges) regardless of worker count.
    """
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    existing, failed = parse_log(log_path)
    report = CorpusReport(requested=n_episodes, reused=len(existing) + len(failed))
    todo = [i for i in range(n_episodes) if i not in existing and i not in failed]
    domain_ids = [d.domain_id for d in sources]
    n_classes = sources[0].n_classes
    configs = [draw_episode_config(master_seed, i, ranges, domain_ids, n_classes)
               for i in todo]

    new_header = not os.path.exists(log_path)
    with open(log_path, "a") as log:
        if new_header:
            log.write(json.dumps({
                "schema_version": SCHEMA_VERSION, "kind": "header",
                "code_version": __version__, "master_seed": master_seed,
            }, sort_keys=True, separators=(",", ":")) + "\n")
        if workers <= 1:
            cache = PretrainCache(cache_dir, arch)
            for config in configs:
                result = run_episode(sources, config, cache)
                _append(log, result, config, report)
        else:
            import multiprocessing as mp
            ctx = mp.get_context("spawn")
            with ctx.Pool(workers, initializer=_worker_init,
                          initargs=(sources, cache_dir, arch)) as pool:
                for config, result in pool.imap_unordered(_worker_run, configs):
                    _append(log, result, config, report)
    return report


def _append(log, result: EpisodeResult, config: EpisodeConfig, report: CorpusReport):
    if result.failed:
        log.write(failed_line(config.episode_index) + "\n")
        report.failed += 1
    else:
        log.write(episode_to_line(result.episode) + "\n")
        report.completed += 1
    log.flush()


_WORKER_STATE: dict = {}


def _worker_init(sources, cache_dir, arch):
    _WORKER_STATE["sources"] = sources
    _WORKER_STATE["cache"] = PretrainCache(cache_dir, arch)


def _worker_run(config: EpisodeConfig):
    result = run_episode(_WORKER_STATE["sources"], config, _WORKER_STATE["cache"])
    return config, result
