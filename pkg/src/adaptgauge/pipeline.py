"""Pipeline stages behind the CLI commands.

Every stage is a pure function of (inputs, resolved config, seed): rerunning
with the same arguments reproduces output files byte-identically. Stages
communicate through files in a run directory.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from . import checkpoint as ckpt
from .adapt import pretrain
from .config import RunConfig
from .data import (DomainDataset, GeneratorConfig, Heterogeneity, channel_stats,
                   generate_synthetic, read_csv, split_dataset, standardize,
                   write_csv)
from .episodes import (RandomizationRanges, generate_corpus, log_to_sequences,
                       corpus_fingerprint, parse_log)
from .estimator import (EstimatorArch, TrainSpec, load_estimator, save_estimator,
                        train_estimator)
from .evaluate import (CellResult, EvalSettings, evaluate_matrix, imbalance_scores,
                       mean_similarity, report_rows, rescore_with_estimator)
from .features import feature_names
from .models import ClassifierArch, ClassifierNet

DATASET_FILE = "dataset.csv"
MANIFEST_FILE = "manifest.json"
CLASSIFIER_FILE = "classifier.ckpt"
EPISODES_FILE = "episodes.jsonl"
ESTIMATOR_FILE = "estimator.ckpt"

FEATURE_SETS = ("full", "gd", "gd+iu", "feat", "dfeat")


def generator_config(cfg: RunConfig) -> GeneratorConfig:
    d = cfg["data"]
    return GeneratorConfig(
        n_domains=d["n_domains"], n_classes=d["n_classes"], channels=d["channels"],
        length=d["length"], instances_per_domain=d["instances_per_domain"],
        heterogeneity=Heterogeneity.scaled(d["heterogeneity"]),
        base_noise=d["base_noise"])


def classifier_arch(cfg: RunConfig) -> ClassifierArch:
    c = cfg["classifier"]
    return ClassifierArch(channels=tuple(c["conv_channels"]), kernel=c["kernel"],
                          strides=tuple(c["strides"]), dense_width=c["dense_width"])


def randomization_ranges(cfg: RunConfig) -> RandomizationRanges:
    s = cfg["simulate"]
    return RandomizationRanges(
        algorithms=tuple(s["algorithms"]),
        labeled_samples=tuple(s["labeled_samples"]),
        unlabeled_samples=tuple(s["unlabeled_samples"]),
        learning_rate=tuple(s["learning_rate_range"]),
        lambdas=tuple(s["lambdas"]),
        optimizers=tuple(s["optimizers"]),
        label_noise_max=s["label_noise_max"],
        label_noise_prob=s["label_noise_prob"],
        imbalance_prob=s["imbalance_prob"],
        imbalance_min_weight=s["imbalance_min_weight"],
        epochs=s["epochs"],
        val_size=s["val_size"],
        pretrain_epochs=s["pretrain_epochs"],
        pretrain_lr=cfg["pretrain"]["learning_rate"],
        batch_size=s["batch_size"])


def eval_settings(cfg: RunConfig) -> EvalSettings:
    e = cfg["evaluate"]
    return EvalSettings(
        algorithms=tuple(e["algorithms"]), seeds=tuple(range(e["n_seeds"])),
        epochs=e["epochs"], n_val=e["n_val"], n_labeled=e["n_labeled"],
        n_unlabeled=e["n_unlabeled"], learning_rate=e["learning_rate"],
        lam=e["lam"], batch_size=e["batch_size"])


def feature_mask(feature_set: str, n_classes: int) -> tuple[str, ...] | None:
    """Named ablation subsets of the full feature layout."""
    names = feature_names(n_classes)
    base = [n for n in names if not n.startswith("d")]
    deltas = [n for n in names if n.startswith("d")]
    if feature_set == "full":
        return None
    if feature_set == "gd":
        return ("gd", "dgd")
    if feature_set == "gd+iu":
        return ("gd", "iu", "dgd", "diu")
    if feature_set == "feat":
        return tuple(base)
    if feature_set == "dfeat":
        return tuple(deltas)
    raise ValueError(f"unknown feature set {feature_set!r}; choose from {FEATURE_SETS}")


# ---------------------------------------------------------------------------
# stages


def stage_gen_data(cfg: RunConfig, run_dir) -> list[DomainDataset]:
    os.makedirs(run_dir, exist_ok=True)
    seed = cfg["run"]["master_seed"]
    datasets = generate_synthetic(generator_config(cfg), seed)
    write_csv(os.path.join(run_dir, DATASET_FILE), datasets)
    n_targets = cfg["data"]["n_targets"]
    ids = [d.domain_id for d in datasets]
    manifest = {
        "schema_version": 1,
        "n_classes": datasets[0].n_classes,
        "sources": ids[:len(ids) - n_targets],
        "targets": ids[len(ids) - n_targets:],
    }
    with open(os.path.join(run_dir, MANIFEST_FILE), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    return datasets


def load_domains(run_dir) -> tuple[list[DomainDataset], list[DomainDataset], dict]:
    manifest_path = os.path.join(run_dir, MANIFEST_FILE)
    dataset_path = os.path.join(run_dir, DATASET_FILE)
    for path in (manifest_path, dataset_path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing upstream artifact: {path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    datasets = {d.domain_id: d for d in read_csv(dataset_path)}
    sources = [datasets[i] for i in manifest["sources"]]
    targets = [datasets[i] for i in manifest["targets"]]
    return sources, targets, manifest


def source_train_holdout(cfg: RunConfig, sources: list[DomainDataset]
                         ) -> tuple[list[DomainDataset], DomainDataset]:
    """Carve a labeled holdout from each source domain; pool the holdouts.

    The holdout never enters pre-training or episode simulation: it exists
    for the source-validation estimation baseline.
    """
    frac = 1.0 - cfg["pretrain"]["holdout_fraction"]
    seed = cfg["run"]["master_seed"]
    train_parts, hold_parts = [], []
    for d in sources:
        tr, ho = split_dataset(d, frac, seed)
        train_parts.append(tr)
        hold_parts.append(ho)
    holdout = DomainDataset(
        "src_holdout",
        np.concatenate([h.windows for h in hold_parts], axis=0),
        np.concatenate([h.labels for h in hold_parts], axis=0),
        sources[0].n_classes)
    return train_parts, holdout


def stage_pretrain(cfg: RunConfig, run_dir) -> dict:
    sources, _, manifest = load_domains(run_dir)
    train_parts, holdout = source_train_holdout(cfg, sources)
    stats = channel_stats(train_parts)
    train_std = standardize(train_parts, stats)
    holdout_std = standardize([holdout], stats)[0]
    p = cfg["pretrain"]
    model, report = pretrain(
        train_std, epochs=p["epochs"], seed=cfg["run"]["master_seed"],
        arch=classifier_arch(cfg), learning_rate=p["learning_rate"],
        l2_weight=p["l2_weight"], batch_size=p["batch_size"], val=holdout_std)
    meta = {
        "kind": "classifier",
        "n_classes": manifest["n_classes"],
        "channel_mean": [float(v) for v in stats[0]],
        "channel_std": [float(v) for v in stats[1]],
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
        "holdout_accuracy": report.val_accuracy,
    }
    ckpt.save_module(os.path.join(run_dir, CLASSIFIER_FILE), model, meta)
    return meta


def load_classifier(cfg: RunConfig, run_dir) -> tuple[ClassifierNet, dict]:
    path = os.path.join(run_dir, CLASSIFIER_FILE)
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing upstream artifact: {path}")
    sources, _, manifest = load_domains(run_dir)
    model = ClassifierNet(np.random.default_rng(0), sources[0].channels,
                          sources[0].length, manifest["n_classes"],
                          classifier_arch(cfg))
    meta = ckpt.load_module(path, model)
    model.eval()
    return model, meta


def stage_simulate(cfg: RunConfig, run_dir, n_episodes=None, workers=1):
    sources, _, _ = load_domains(run_dir)
    train_parts, _ = source_train_holdout(cfg, sources)
    ranges = randomization_ranges(cfg)
    n = n_episodes if n_episodes is not None else cfg["simulate"]["episodes"]
    return generate_corpus(
        train_parts, n, cfg["run"]["master_seed"], ranges,
        os.path.join(run_dir, EPISODES_FILE), workers=workers,
        cache_dir=os.path.join(run_dir, "pretrain_cache"),
        arch=classifier_arch(cfg))


def stage_train_estimator(cfg: RunConfig, run_dir, feature_set: str = "full",
                          head: str = "lstm", out_name: str = ESTIMATOR_FILE) -> dict:
    log_path = os.path.join(run_dir, EPISODES_FILE)
    if not os.path.exists(log_path):
        raise FileNotFoundError(f"missing upstream artifact: {log_path}")
    episodes, _ = parse_log(log_path)
    sequences = log_to_sequences(episodes)
    _, _, manifest = load_domains(run_dir)
    e = cfg["estimator"]
    arch = EstimatorArch(
        n_classes=manifest["n_classes"], hidden=e["hidden"],
        head_hidden=e["head_hidden"], recurrent=head == "lstm",
        feature_mask=feature_mask(feature_set, manifest["n_classes"]))
    spec = TrainSpec(learning_rate=e["learning_rate"], epochs=e["epochs"],
                     batch_episodes=e["batch_episodes"], clip_norm=e["clip_norm"],
                     val_fraction=e["val_fraction"])
    net, report = train_estimator(sequences, spec, cfg["run"]["master_seed"], arch)
    save_estimator(os.path.join(run_dir, out_name), net,
                   corpus_fingerprint(episodes))
    summary = {
        "n_train": report.n_train, "n_val": report.n_val,
        "best_epoch": report.best_epoch, "best_val_loss": report.best_val_loss,
        "train_losses": report.train_losses, "val_losses": report.val_losses,
        "feature_set": feature_set, "head": head,
    }
    with open(os.path.join(run_dir, out_name + ".report.json"), "w") as f:
        json.dump(summary, f, sort_keys=True)
        f.write("\n")
    return summary


def stage_estimate(run_dir, episode_index: int,
                   estimator_name: str = ESTIMATOR_FILE) -> list[str]:
    """Estimate accuracy change for one stored episode; returns printable lines."""
    est_path = os.path.join(run_dir, estimator_name)
    log_path = os.path.join(run_dir, EPISODES_FILE)
    for path in (est_path, log_path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing upstream artifact: {path}")
    net, _ = load_estimator(est_path)
    episodes, _ = parse_log(log_path)
    if episode_index not in episodes:
        raise ValueError(f"episode {episode_index} not present in {log_path}")
    seqs = log_to_sequences({episode_index: episodes[episode_index]})
    feats, _ = seqs[0]
    from .estimator import estimate_sequence  # local to avoid cycle at import
    from .features import FeatureRecord
    records = []
    for e, row in enumerate(feats):
        k = net.arch.n_classes
        records.append(FeatureRecord(
            epoch=e, gd=row[0], iu=row[1], pd=row[2:2 + k],
            dgd=row[2 + k], diu=row[3 + k], dpd=row[4 + k:]))
    deltas = estimate_sequence(net, records)
    acc0 = episodes[episode_index]["epochs"][0].get("acc")
    lines = ["epoch delta_acc_estimate" + (" acc_estimate" if acc0 is not None else "")]
    for e, d in enumerate(deltas):
        row = f"{e} {d:+.6f}"
        if acc0 is not None:
            row += f" {min(max(acc0 + d, 0.0), 1.0):.6f}"
        lines.append(row)
    final = deltas[-1]
    if acc0 is not None:
        lines.append(f"final_estimated_accuracy {min(max(acc0 + final, 0.0), 1.0):.6f}")
    lines.append(f"final_delta_estimate {final:+.6f}")
    return lines


def stage_evaluate(cfg: RunConfig, run_dir, workers: int = 1,
                   imbalance_rate: float | None = None,
                   ablations: dict[str, str] | None = None,
                   out_subdir: str = "report") -> dict:
    """The evaluation matrix; writes report.csv, summary.json and curve files."""
    sources, targets, _ = load_domains(run_dir)
    model, meta = load_classifier(cfg, run_dir)
    est_path = os.path.join(run_dir, ESTIMATOR_FILE)
    if not os.path.exists(est_path):
        raise FileNotFoundError(f"missing upstream artifact: {est_path}")
    net, _ = load_estimator(est_path)

    stats = (np.array(meta["channel_mean"]), np.array(meta["channel_std"]))
    train_parts, holdout = source_train_holdout(cfg, sources)
    train_std = standardize(train_parts, stats)
    holdout_std = standardize([holdout], stats)[0]
    targets_std = standardize(targets, stats)
    source_pool = DomainDataset(
        "src_pool",
        np.concatenate([d.windows for d in train_std], axis=0),
        np.concatenate([d.labels for d in train_std], axis=0),
        sources[0].n_classes)

    settings = eval_settings(cfg)
    cells = evaluate_matrix(model, net, targets_std, settings, source_pool,
                            holdout_std, workers=workers)

    out_dir = os.path.join(run_dir, out_subdir)
    os.makedirs(os.path.join(out_dir, "curves"), exist_ok=True)
    _write_report_csv(os.path.join(out_dir, "report.csv"), cells)
    _write_curves(os.path.join(out_dir, "curves"), cells)

    summary = {
        "methods": {m: mean_similarity(cells, m)
                    for m in ("TgtLabel", "SrcLabel", "SoftmaxScore", "AdaptGauge")},
        "per_algorithm": {
            a: {m: mean_similarity(cells, m, a)
                for m in ("TgtLabel", "SrcLabel", "SoftmaxScore", "AdaptGauge")}
            for a in settings.algorithms},
        "failed_cells": sum(c.failed for c in cells),
        "n_cells": len(cells),
    }
    if imbalance_rate is not None:
        summary["imbalance"] = {
            "rate": imbalance_rate,
            "scores": imbalance_scores(cells, net, imbalance_rate),
        }
    if ablations:
        summary["ablations"] = {}
        for name, path in sorted(ablations.items()):
            variant, _ = load_estimator(os.path.join(run_dir, path)
                                        if not os.path.isabs(path) else path)
            summary["ablations"][name] = rescore_with_estimator(cells, variant)
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    return summary


def _write_report_csv(path, cells: list[CellResult]):
    rows = report_rows(cells)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["algorithm", "method", "domain",
                                               "similarity"])
        writer.writeheader()
        writer.writerows(rows)


def _write_curves(curve_dir, cells: list[CellResult]):
    from .baselines import softmax_scores
    for cell in cells:
        if cell.failed:
            continue
        acc = np.asarray(cell.accuracies)
        hold = np.asarray(cell.holdout_accuracies)
        soft = softmax_scores(cell.matrices)
        name = f"{cell.target}_{cell.algorithm}_s{cell.seed}.csv"
        with open(os.path.join(curve_dir, name), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "truth_delta", "adaptgauge_delta",
                             "softmaxscore_delta", "srclabel_delta"])
            for e in range(len(acc)):
                writer.writerow([e, repr(float(acc[e] - acc[0])),
                                 repr(float(cell.estimates[e])),
                                 repr(float(soft[e] - soft[0])),
                                 repr(float(hold[e] - hold[0]))])
