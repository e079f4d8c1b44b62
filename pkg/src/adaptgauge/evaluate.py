"""Head-to-head evaluation of the estimator against the baselines.

Runs real adaptations on held-out target domains and scores every method's
delta-accuracy trace against the labeled-validation oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adapt import AdaptationConfig, run_adaptation
from .baselines import (EstimationTrace, estimator_trace, similarity,
                        softmax_score_trace, srclabel_trace, tgtlabel_trace)
from .data import DomainDataset, sample_target_sets
from .episodes import _clone
from .estimator import EstimatorNet, estimate_sequence
from .features import build_feature_sequence
from .models import ClassifierNet, accuracy_from_matrix

METHODS = ("TgtLabel", "FixedEpoch", "SrcLabel", "SoftmaxScore", "AdaptGauge")


@dataclass(frozen=True)
class EvalSettings:
    algorithms: tuple[str, ...] = ("finetune", "dann", "cdan", "shot")
    seeds: tuple[int, ...] = tuple(range(10))
    epochs: int = 100
    n_val: int = 500
    n_labeled: int = 25
    n_unlabeled: int = 300
    learning_rate: float = 0.001
    lam: float = 1.0
    optimizer: str = "adam"
    batch_size: int = 32


@dataclass
class CellResult:
    """One adaptation run: (target domain, algorithm, seed)."""

    target: str
    algorithm: str
    seed: int
    accuracies: list[float]
    holdout_accuracies: list[float]
    matrices: list[np.ndarray]
    val_labels: np.ndarray
    estimates: np.ndarray
    similarities: dict[str, float] = field(default_factory=dict)
    failed: bool = False


def run_cell(base_model: ClassifierNet, net: EstimatorNet, target: DomainDataset,
             algorithm: str, seed: int, settings: EvalSettings,
             source_pool: DomainDataset | None,
             holdout: DomainDataset) -> CellResult:
    labeled = algorithm == "finetune"
    n_train = settings.n_labeled if labeled else settings.n_unlabeled
    train, val = sample_target_sets(target, n_train, settings.n_val, seed)
    config = AdaptationConfig(
        algorithm=algorithm, n_target_samples=n_train, labeled=labeled,
        epochs=settings.epochs, learning_rate=settings.learning_rate,
        lam=settings.lam, optimizer=settings.optimizer,
        batch_size=settings.batch_size, seed=seed)
    model = _clone(base_model)
    run = run_adaptation(model, train, val, config,
                         source_pool=source_pool if algorithm in ("dann", "cdan") else None,
                         holdout=holdout)
    cell = CellResult(target=target.domain_id, algorithm=algorithm, seed=seed,
                      accuracies=run.accuracies,
                      holdout_accuracies=run.holdout_accuracies or [],
                      matrices=run.matrices, val_labels=val.labels,
                      estimates=np.zeros(0), failed=run.diverged)
    if run.diverged:
        return cell
    records = build_feature_sequence(run.matrices, run.accuracies)
    cell.estimates = estimate_sequence(net, records)
    truth = tgtlabel_trace(run.accuracies)
    traces = {
        "TgtLabel": truth,
        "SrcLabel": srclabel_trace(run.holdout_accuracies),
        "SoftmaxScore": softmax_score_trace(run.matrices),
        "AdaptGauge": estimator_trace(cell.estimates),
    }
    cell.similarities = {name: similarity(truth, tr).value
                         for name, tr in traces.items()}
    return cell


def evaluate_matrix(base_model: ClassifierNet, net: EstimatorNet,
                    targets: list[DomainDataset], settings: EvalSettings,
                    source_pool: DomainDataset, holdout: DomainDataset,
                    workers: int = 1) -> list[CellResult]:
    """All (target x algorithm x seed) cells.

    Cell content is a pure function of its key, so the worker count changes
    only wall time; results always come back in (target, algorithm, seed) order.
    """
    specs = [(t.domain_id, algorithm, seed)
             for t in targets for algorithm in settings.algorithms
             for seed in settings.seeds]
    if workers <= 1:
        by_id = {t.domain_id: t for t in targets}
        return [run_cell(base_model, net, by_id[tid], algorithm, seed,
                         settings, source_pool, holdout)
                for tid, algorithm, seed in specs]
    import multiprocessing as mp
    ctx = mp.get_context("spawn")
    with ctx.Pool(workers, initializer=_eval_worker_init,
                  initargs=(base_model, net, targets, settings, source_pool,
                            holdout)) as pool:
        done = {(c.target, c.algorithm, c.seed): c
                for c in pool.imap_unordered(_eval_worker_run, specs)}
    return [done[spec] for spec in specs]


_EVAL_STATE: dict = {}


def _eval_worker_init(base_model, net, targets, settings, source_pool, holdout):
    _EVAL_STATE.update(base_model=base_model, net=net,
                       targets={t.domain_id: t for t in targets},
                       settings=settings, source_pool=source_pool,
                       holdout=holdout)


def _eval_worker_run(spec):
    tid, algorithm, seed = spec
    return run_cell(_EVAL_STATE["base_model"], _EVAL_STATE["net"],
                    _EVAL_STATE["targets"][tid], algorithm, seed,
                    _EVAL_STATE["settings"], _EVAL_STATE["source_pool"],
                    _EVAL_STATE["holdout"])


# ---------------------------------------------------------------------------
# aggregation


def mean_similarity(cells: list[CellResult], method: str,
                    algorithm: str | None = None,
                    target: str | None = None) -> float:
    vals = [c.similarities[method] for c in cells
            if not c.failed
            and (algorithm is None or c.algorithm == algorithm)
            and (target is None or c.target == target)]
    return float(np.mean(vals)) if vals else math.nan


def report_rows(cells: list[CellResult]) -> list[dict]:
    """Long-form rows: one per (algorithm, method, domain) plus Avg columns.

    FixedEpoch carries no similarity (it never validates), reported as NA.
    """
    algorithms = sorted({c.algorithm for c in cells})
    domains = sorted({c.target for c in cells})
    rows = []
    for algorithm in algorithms:
        for method in METHODS:
            for domain in domains + ["Avg"]:
                if method == "FixedEpoch":
                    value = "NA"
                elif domain == "Avg":
                    value = repr(mean_similarity(cells, method, algorithm))
                else:
                    value = repr(mean_similarity(cells, method, algorithm, domain))
                rows.append({"algorithm": algorithm, "method": method,
                             "domain": domain, "similarity": value})
    return rows


def rescore_with_estimator(cells: list[CellResult], net: EstimatorNet) -> float:
    """Mean similarity of a (variant) estimator on already-run cells."""
    vals = []
    for cell in cells:
        if cell.failed:
            continue
        records = build_feature_sequence(cell.matrices, cell.accuracies)
        est = estimate_sequence(net, records)
        truth = tgtlabel_trace(cell.accuracies)
        vals.append(similarity(truth, estimator_trace(est)).value)
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# imbalanced-validation analysis


def imbalance_keep_mask(labels: np.ndarray, classes, rate: float, seed: int
                        ) -> np.ndarray:
    """Keep-mask dropping `rate` of each listed class (keeps ceil((1-rate)n))."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(5,)))
    keep = np.ones(len(labels), dtype=bool)
    for cls in sorted(classes):
        idx = np.where(labels == cls)[0]
        n_keep = math.ceil((1.0 - rate) * idx.size)
        drop = rng.permutation(idx.size)[n_keep:]
        keep[idx[drop]] = False
    return keep


def imbalance_scores(cells: list[CellResult], net: EstimatorNet, rate: float
                     ) -> dict[str, float]:
    """Mean similarity vs the balanced oracle when validation data is skewed.

    Half the classes lose `rate` of their validation samples; both the
    estimator's features and the labeled-validation accuracy are recomputed
    on the skewed subset and scored against the balanced-truth trace.
    """
    tgt_vals, est_vals = [], []
    for cell in cells:
        if cell.failed:
            continue
        k = cell.matrices[0].shape[1]
        keep = imbalance_keep_mask(cell.val_labels, range(k // 2), rate, cell.seed)
        sub_matrices = [m[keep] for m in cell.matrices]
        sub_labels = cell.val_labels[keep]
        sub_acc = [accuracy_from_matrix(m, sub_labels) for m in sub_matrices]
        balanced_truth = tgtlabel_trace(cell.accuracies)
        tgt_vals.append(similarity(balanced_truth, tgtlabel_trace(sub_acc)).value)
        records = build_feature_sequence(sub_matrices, sub_acc)
        est = estimate_sequence(net, records)
        est_vals.append(similarity(balanced_truth, estimator_trace(est)).value)
    return {"TgtLabel": float(np.mean(tgt_vals)), "AdaptGauge": float(np.mean(est_vals))}
