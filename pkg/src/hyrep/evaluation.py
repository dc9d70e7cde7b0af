"""Evaluation: accuracy / top-N / confusion metrics with leave-one-out or
holdout protocols, the distortion-vs-random-trees comparison, and mining
of common tree substructures across repeated runs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import cluster, model as model_mod
from . import tape as tp
from .data import Dataset

__all__ = [
    "ConfusionMatrix",
    "Metrics",
    "SubstructureCounts",
    "evaluate",
    "top_n_accuracy",
    "distortion_vs_random",
    "mine_substructures",
    "metrics_to_json",
    "confusion_to_csv",
]

LOO_MAX_TRIALS = 2000


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    classes: tuple
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=int)
        k = len(self.classes)
        if m.shape != (k, k) or np.any(m < 0):
            raise ValueError("confusion matrix must be a nonnegative KxK matrix")
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "matrix", m)

    @property
    def total(self):
        return int(self.matrix.sum())

    @property
    def accuracy(self):
        return float(np.trace(self.matrix)) / self.total

    @classmethod
    def from_predictions(cls, classes, true_labels, predicted):
        k = len(classes)
        m = np.zeros((k, k), dtype=int)
        np.add.at(m, (np.asarray(true_labels), np.asarray(predicted)), 1)
        return cls(classes, m)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    per_class: dict
    confusion: ConfusionMatrix
    protocol: str


def _predict_labels(model, x):
    labels, _ = model_mod.predict_batch(model, x)
    return labels


def _without_trial(dataset, i):
    keep = np.arange(dataset.n_trials) != i
    return Dataset(
        dataset.classes,
        dataset.features[keep],
        dataset.labels[keep],
        dataset.n_units,
        dataset.n_bins,
        dataset.dtype,
    )


def evaluate(dataset, protocol="leave_one_out", model=None, trainer=None):
    """Accuracy, per-class accuracy, and the confusion matrix.

    ``leave_one_out`` retrains via ``trainer`` (a dataset -> model callable)
    once per held-out trial; refused above 2000 trials.  ``holdout``
    evaluates the supplied pre-trained ``model`` on the whole dataset.
    """
    if dataset.n_trials < 1:
        raise ValueError("dataset is empty")
    if protocol == "leave_one_out":
        if trainer is None:
            raise ValueError("leave_one_out needs a trainer callable")
        if dataset.n_trials > LOO_MAX_TRIALS:
            raise ValueError(
                f"leave_one_out refused for > {LOO_MAX_TRIALS} trials"
            )
        predicted = np.empty(dataset.n_trials, dtype=int)
        for i in range(dataset.n_trials):
            fold_model = trainer(_without_trial(dataset, i))
            predicted[i] = _predict_labels(fold_model, dataset.features[i : i + 1])[0]
    elif protocol == "holdout":
        if model is None:
            raise ValueError("holdout needs a pre-trained model")
        predicted = _predict_labels(model, dataset.features)
    else:
        raise ValueError(f"unknown protocol: {protocol!r}")

    confusion = ConfusionMatrix.from_predictions(
        dataset.classes, dataset.labels, predicted
    )
    per_class = {}
    for k, name in enumerate(dataset.classes):
        row = confusion.matrix[k]
        per_class[name] = float(row[k]) / row.sum() if row.sum() else float("nan")
    return Metrics(confusion.accuracy, per_class, confusion, protocol)


def top_n_accuracy(model, dataset, n_values):
    """Fraction of trials whose true class ranks in the top n probabilities."""
    k = len(dataset.classes)
    for n in n_values:
        if not 1 <= n <= k:
            raise ValueError(f"top-n value {n} outside 1..{k}")
    _, probs = model_mod.predict_batch(model, dataset.features)
    # stable ranking: higher probability -> better rank
    order = np.argsort(-probs, axis=1, kind="stable")
    ranks = np.argmax(order == dataset.labels[:, None], axis=1)
    return {int(n): float((ranks < n).mean()) for n in n_values}


def distortion_vs_random(tree, classes, runs=100, seed=0):
    """Distortion of ``tree`` against ``runs`` uniformly random binary trees
    over the same leaves.

    Returns (value, percentile): the percentage of random trees with
    strictly lower distortion.  Deterministic per seed.
    """
    if runs < 10:
        raise ValueError("need at least 10 random trees")
    value = cluster.distortion(tree, classes)
    rng = np.random.default_rng(seed)
    leaves = tree.leaves()
    below = sum(
        cluster.distortion(cluster.random_binary_tree(leaves, rng), classes) < value
        for _ in range(runs)
    )
    return value, 100.0 * below / runs


@dataclass(frozen=True)
class SubstructureCounts:
    """Occurrence counts of sibling class pairs (cherries) across runs."""

    counts: dict  # frozenset pair -> count over all runs
    runs: int
    consensus: tuple  # merged high-frequency groups, each a frozenset

    def __post_init__(self):
        if any(v > self.runs for v in self.counts.values()):
            raise ValueError("pair count cannot exceed the number of runs")


def _merge_pairs(pairs):
    """Union overlapping pairs into consensus groups."""
    groups = []
    for pair in pairs:
        merged = set(pair)
        rest = []
        for g in groups:
            if g & merged:
                merged |= g
            else:
                rest.append(g)
        groups = rest + [merged]
    return tuple(frozenset(g) for g in sorted(groups, key=lambda g: sorted(map(str, g))))


def mine_substructures(datasets, runs_per_dataset, tree_fn, threshold=0.5, seed=0):
    """Count sibling class pairs over repeated train+decode runs.

    ``tree_fn(dataset, run_seed) -> ClusterTree`` produces one decoded tree;
    it is called runs_per_dataset times per dataset with distinct seeds.
    Pairs whose frequency exceeds ``threshold`` in every dataset are merged
    (union of overlapping pairs) into consensus groups.
    """
    if runs_per_dataset < 1 or not datasets:
        raise ValueError("need >= 1 dataset and >= 1 run per dataset")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be a fraction")
    per_dataset = []
    total = {}
    for d, dataset in enumerate(datasets):
        counts = {}
        for r in range(runs_per_dataset):
            tree = tree_fn(dataset, seed + d * runs_per_dataset + r)
            for pair in set(tree.cherries()):
                counts[pair] = counts.get(pair, 0) + 1
                total[pair] = total.get(pair, 0) + 1
        per_dataset.append(counts)
    kept = [
        pair
        for pair in total
        if all(c.get(pair, 0) > threshold * runs_per_dataset for c in per_dataset)
    ]
    return SubstructureCounts(
        counts=total,
        runs=runs_per_dataset * len(datasets),
        consensus=_merge_pairs(sorted(kept, key=lambda p: sorted(map(str, p)))),
    )


# -- emission -----------------------------------------------------------


def metrics_to_json(metrics, path, extra=None):
    doc = {
        "accuracy": metrics.accuracy,
        "per_class": {str(k): v for k, v in sorted(metrics.per_class.items())},
        "protocol": metrics.protocol,
        "confusion": metrics.confusion.matrix.tolist(),
        "classes": list(metrics.confusion.classes),
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


def confusion_to_csv(confusion, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["true\\pred"] + list(confusion.classes))
        for name, row in zip(confusion.classes, confusion.matrix):
            writer.writerow([name] + row.tolist())
