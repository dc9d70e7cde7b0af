"""Spike-train segmentation and binning, the built-in Mandarin phoneme
taxonomies, a synthetic generator that plants a taxonomy-shaped hierarchy
in feature space, and dataset/spike-file IO.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .cluster import ClusterTree

__all__ = [
    "SpikeTrain",
    "Trial",
    "Taxonomy",
    "SyntheticSpec",
    "Dataset",
    "segment_trial",
    "bin_spikes",
    "builtin_taxonomy",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
    "load_spike_csv",
    "load_marker_csv",
    "ingest_spike_recording",
]

WINDOW = 0.100  # binning window, seconds
STRIDE = 0.025  # binning stride, seconds
SEGMENT_PRE = 0.5  # seconds kept before articulation onset
SEGMENT_POST = 1.5  # seconds kept after articulation onset

MARKER_NAMES = ("prompt", "go", "ao_start", "ao_end", "end")


@dataclass(frozen=True)
class SpikeTrain:
    """Per-unit spike timestamps (seconds, ascending) with event markers.

    ``duration`` is the recording span covered by the timestamps; markers
    may be absent for already-segmented trains.
    """

    units: tuple
    duration: float
    markers: dict | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "units", tuple(np.asarray(u, dtype=float) for u in self.units)
        )
        for i, u in enumerate(self.units):
            if u.ndim != 1:
                raise ValueError(f"unit {i}: timestamps must be a 1-d sequence")
            if np.any(np.diff(u) < 0):
                raise ValueError(f"unit {i}: timestamps must be ascending")
        if not (self.duration > 0):
            raise ValueError("duration must be positive")
        if self.markers is not None:
            m = self.markers
            if "ao_start" in m and "go" in m and "end" in m:
                if not (m["go"] <= m["ao_start"] <= m["end"]):
                    raise ValueError("ao_start must lie between go and end markers")

    @property
    def n_units(self):
        return len(self.units)


@dataclass(frozen=True)
class Trial:
    """Binned spike counts for one trial with its class label."""

    counts: np.ndarray  # (n_units, n_bins)
    label: str

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError("counts must be a 2-d (units x bins) matrix")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @property
    def flattened(self):
        """Row-major flattening of counts (the per-trial feature vector)."""
        return self.counts.reshape(-1).astype(float)


def segment_trial(spikes):
    """Cut the window around articulation onset and re-zero timestamps.

    Keeps spikes in [ao_start - 0.5 s, ao_start + 1.5 s) — half-open, so a
    spike exactly at the right edge is dropped — and shifts them so the
    segment starts at 0.  The result spans exactly 2.0 s.
    """
    if spikes.markers is None or "ao_start" not in spikes.markers:
        raise ValueError("segment_trial requires an ao_start marker")
    start = spikes.markers["ao_start"] - SEGMENT_PRE
    stop = spikes.markers["ao_start"] + SEGMENT_POST
    units = tuple(u[(u >= start) & (u < stop)] - start for u in spikes.units)
    return SpikeTrain(units, duration=SEGMENT_PRE + SEGMENT_POST)


def bin_spikes(spikes, window=WINDOW, stride=STRIDE):
    """Sliding-window spike counts: bin t covers [t*stride, t*stride + window).

    Returns an integer (n_units, T) matrix with
    T = floor((duration - window)/stride) + 1; a 2.0 s segment gives T = 77.
    Segments shorter than one window are rejected.
    """
    length = spikes.duration
    if length < window:
        raise ValueError(f"segment length {length} shorter than window {window}")
    n_bins = int(np.floor((length - window) / stride + 1e-9)) + 1
    starts = np.arange(n_bins) * stride
    counts = np.zeros((spikes.n_units, n_bins), dtype=int)
    for i, u in enumerate(spikes.units):
        counts[i] = np.searchsorted(u, starts + window, side="left") - np.searchsorted(
            u, starts, side="left"
        )
    return counts


# -- taxonomy -----------------------------------------------------------


@dataclass(frozen=True)
class Taxonomy:
    """A named one-level grouping of class labels with optional tags.

    ``groups`` lists (group code, member labels) in a fixed order; each
    class belongs to exactly one group.  ``tags`` is a second, independent
    partition (e.g. manner of articulation), possibly empty.
    """

    name: str
    groups: tuple
    tags: tuple = ()

    def __post_init__(self):
        object.__setattr__(
            self, "groups", tuple((g, tuple(cs)) for g, cs in self.groups)
        )
        object.__setattr__(self, "tags", tuple((t, tuple(cs)) for t, cs in self.tags))
        seen = [c for _, cs in self.groups for c in cs]
        if len(set(seen)) != len(seen):
            raise ValueError("a class may appear in only one group")
        if self.tags:
            tagged = [c for _, cs in self.tags for c in cs]
            if sorted(tagged) != sorted(seen):
                raise ValueError("tags must cover each class exactly once")

    @property
    def classes(self):
        return tuple(c for _, cs in self.groups for c in cs)

    @property
    def group_of(self):
        return {c: g for g, cs in self.groups for c in cs}

    @property
    def tag_of(self):
        return {c: t for t, cs in self.tags for c in cs}

    def planted_tree(self):
        """The grouping as a binary merge tree (left-fold within and across
        groups); this is the generator's ground-truth hierarchy."""

        def fold(nodes):
            tree = nodes[0]
            for node in nodes[1:]:
                tree = ClusterTree.merge(tree, node)
            return tree

        subtrees = [fold([ClusterTree.leaf(c) for c in cs]) for _, cs in self.groups]
        return fold(subtrees)


_CONSONANT_GROUPS = (
    ("LL", ("b", "p", "m")),
    ("LT", ("f",)),
    ("TTT", ("z", "c", "s")),
    ("TTG", ("d", "t", "n", "l")),
    ("TTH", ("zh", "ch", "sh", "r")),
    ("TBH", ("j", "q", "x")),
    ("TDS", ("g", "k", "h")),
)

_CONSONANT_MANNERS = (
    ("PL", ("b", "p", "d", "t", "g", "k")),
    ("AFF", ("z", "c", "zh", "ch", "j", "q")),
    ("FR", ("f", "s", "sh", "r", "x", "h")),
    ("NA", ("m", "n")),
    ("LA", ("l",)),
)

_VOWEL_GROUPS = ("OM", "ET", "RM", "CM")


def builtin_taxonomy(kind, classes_per_group=6):
    """The built-in phoneme taxonomies.

    ``consonant21``: the 21 Mandarin pinyin initials grouped by articulator
    movement, with manner-of-articulation tags.  ``vowel_mouth4``: the four
    mouth-movement groups with a configurable number of classes each.
    """
    if kind == "consonant21":
        return Taxonomy("consonant21", _CONSONANT_GROUPS, _CONSONANT_MANNERS)
    if kind == "vowel_mouth4":
        groups = tuple(
            (g, tuple(f"{g}{i}" for i in range(1, classes_per_group + 1)))
            for g in _VOWEL_GROUPS
        )
        return Taxonomy("vowel_mouth4", groups)
    raise ValueError(f"unknown taxonomy kind: {kind!r}")


# -- synthetic generator ------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a dataset with a planted taxonomy-shaped hierarchy."""

    taxonomy: Taxonomy
    trials_per_class: int = 20
    feature_dim: int = 50
    # diffusion step per tree level (root down); defaults keep encoded
    # features well inside the ball's numerically safe radius for the
    # curvatures and feature dims used in the shipped experiments
    level_scales: tuple = (0.5, 0.25)
    noise_sigma: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.trials_per_class < 1:
            raise ValueError("trials_per_class must be >= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        scales = tuple(float(s) for s in self.level_scales)
        if len(scales) != 2 or any(s <= 0 for s in scales):
            raise ValueError("level_scales must be 2 positive reals (group, class)")
        if scales[1] > scales[0]:
            raise ValueError("level_scales must be non-increasing with depth")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        object.__setattr__(self, "level_scales", scales)


def generate_synthetic(spec):
    """Top-down Gaussian diffusion on the taxonomy tree.

    The root mean is 0; each group mean is a Gaussian step of scale
    level_scales[0] from the root, each class mean a step of scale
    level_scales[1] from its group; trials add noise_sigma Gaussian noise.
    Deterministic per seed.
    """
    rng = np.random.default_rng(spec.seed)
    d = spec.feature_dim
    features, labels = [], []
    for _, class_labels in spec.taxonomy.groups:
        group_mean = spec.level_scales[0] * rng.standard_normal(d)
        for label in class_labels:
            class_mean = group_mean + spec.level_scales[1] * rng.standard_normal(d)
            for _ in range(spec.trials_per_class):
                features.append(class_mean + spec.noise_sigma * rng.standard_normal(d))
                labels.append(label)
    classes = spec.taxonomy.classes
    index = {c: i for i, c in enumerate(classes)}
    return Dataset(
        classes=classes,
        features=np.array(features),
        labels=np.array([index[l] for l in labels]),
        n_units=d,
        n_bins=1,
        dtype="float",
    )


# -- dataset ------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """An immutable trial collection: features (n, n_units*n_bins) with
    integer labels indexing ``classes``."""

    classes: tuple
    features: np.ndarray
    labels: np.ndarray
    n_units: int
    n_bins: int
    dtype: str = "int"  # "int" (spike counts) | "float" (synthetic)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if features.ndim != 2 or features.shape[0] != labels.shape[0]:
            raise ValueError("features and labels must have matching first axis")
        if features.shape[1] != self.n_units * self.n_bins:
            raise ValueError("feature length must equal n_units * n_bins")
        if self.dtype not in ("int", "float"):
            raise ValueError(f"unknown dtype tag: {self.dtype!r}")
        if self.dtype == "int" and np.any(features < 0):
            raise ValueError("spike counts must be nonnegative")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.classes)):
            raise ValueError("label index out of range")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_trials(self):
        return self.features.shape[0]

    @classmethod
    def from_trials(cls, trials, classes=None):
        """Build a dataset from binned Trials (labels become class indices)."""
        if not trials:
            raise ValueError("need at least one trial")
        shapes = {t.counts.shape for t in trials}
        if len(shapes) != 1:
            raise ValueError("all trials must share the same counts shape")
        n_units, n_bins = shapes.pop()
        if classes is None:
            classes = tuple(sorted({t.label for t in trials}))
        index = {c: i for i, c in enumerate(classes)}
        for t in trials:
            if t.label not in index:
                raise ValueError(f"trial label {t.label!r} not in class list")
        return cls(
            classes=classes,
            features=np.stack([t.flattened for t in trials]),
            labels=np.array([index[t.label] for t in trials]),
            n_units=n_units,
            n_bins=n_bins,
        )


def _dataset_dict(dataset):
    cast = int if dataset.dtype == "int" else float
    return {
        "meta": {
            "n_units": int(dataset.n_units),
            "n_bins": int(dataset.n_bins),
            "classes": list(dataset.classes),
            "dtype": dataset.dtype,
        },
        "trials": [
            {
                "label": dataset.classes[lab],
                "counts": [cast(v) for v in row],
            }
            for lab, row in zip(dataset.labels.tolist(), dataset.features)
        ],
    }


def dataset_bytes(dataset):
    return (
        json.dumps(_dataset_dict(dataset), sort_keys=True, separators=(",", ":")) + "\n"
    ).encode()


def save_dataset(dataset, path):
    with open(path, "wb") as f:
        f.write(dataset_bytes(dataset))


def _require(doc, key, where, types):
    if key not in doc:
        raise ValueError(f"{where}: missing field {key!r}")
    if not isinstance(doc[key], types):
        raise ValueError(f"{where}.{key}: wrong type")
    return doc[key]


def load_dataset(path):
    with open(path, "rb") as f:
        try:
            doc = json.loads(f.read())
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: not valid JSON at line {e.lineno}: {e.msg}")
    meta = _require(doc, "meta", "dataset", dict)
    n_units = _require(meta, "n_units", "meta", int)
    n_bins = _require(meta, "n_bins", "meta", int)
    classes = _require(meta, "classes", "meta", list)
    dtype = meta.get("dtype", "int")
    trials = _require(doc, "trials", "dataset", list)
    index = {c: i for i, c in enumerate(classes)}
    features, labels = [], []
    for t, trial in enumerate(trials):
        where = f"trials[{t}]"
        if not isinstance(trial, dict):
            raise ValueError(f"{where}: wrong type")
        label = _require(trial, "label", where, str)
        if label not in index:
            raise ValueError(f"{where}.label: unknown class {label!r}")
        counts = _require(trial, "counts", where, list)
        row = np.asarray(counts, dtype=float)
        if row.ndim != 1 or row.shape[0] != n_units * n_bins:
            raise ValueError(f"{where}.counts: expected {n_units * n_bins} values")
        if dtype == "int":
            bad = np.nonzero(row < 0)[0]
            if bad.size:
                raise ValueError(f"{where}.counts[{bad[0]}]: negative count")
        features.append(row)
        labels.append(index[label])
    if not features:
        raise ValueError("dataset: no trials")
    return Dataset(
        classes=tuple(classes),
        features=np.stack(features),
        labels=np.array(labels),
        n_units=n_units,
        n_bins=n_bins,
        dtype=dtype,
    )


# -- spike/marker csv ingestion -----------------------------------------


def _read_csv(path, expected_header):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file")
        if [h.strip() for h in header] != list(expected_header):
            raise ValueError(
                f"{path}: expected header {','.join(expected_header)!r}"
            )
        return [row for row in reader if row]


def load_spike_csv(path):
    """Read a `unit,timestamp` CSV into per-unit ascending timestamp arrays.

    Unit ids are mapped to indices in sorted order; returns (unit ids,
    list of timestamp arrays).
    """
    rows = _read_csv(path, ("unit", "timestamp"))
    by_unit = {}
    for n, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise ValueError(f"{path}:{n}: expected 2 fields")
        try:
            unit, ts = row[0].strip(), float(row[1])
        except ValueError:
            raise ValueError(f"{path}:{n}: bad timestamp {row[1]!r}")
        by_unit.setdefault(unit, []).append(ts)
    units = sorted(by_unit)
    return units, [np.sort(np.asarray(by_unit[u])) for u in units]


def load_marker_csv(path):
    """Read a `trial,prompt,go,ao_start,ao_end,end` CSV into marker dicts."""
    rows = _read_csv(path, ("trial",) + MARKER_NAMES)
    out = []
    for n, row in enumerate(rows, start=2):
        if len(row) != 6:
            raise ValueError(f"{path}:{n}: expected 6 fields")
        try:
            markers = dict(zip(MARKER_NAMES, (float(v) for v in row[1:])))
        except ValueError:
            raise ValueError(f"{path}:{n}: bad marker value")
        out.append((row[0].strip(), markers))
    return out


def ingest_spike_recording(spike_path, marker_path, labels=None):
    """Segment and bin a whole recording into a Dataset.

    ``labels`` maps trial id -> class label; without it each trial's own id
    is used as its label (single-trial-per-class ingestion).
    """
    _, unit_spikes = load_spike_csv(spike_path)
    markers = load_marker_csv(marker_path)
    if not markers:
        raise ValueError(f"{marker_path}: no trials")
    duration = max(m["end"] for _, m in markers)
    trials = []
    for trial_id, m in markers:
        train = SpikeTrain(unit_spikes, duration=max(duration, m["end"]), markers=m)
        counts = bin_spikes(segment_trial(train))
        label = labels[trial_id] if labels is not None else trial_id
        trials.append(Trial(counts, label))
    return Dataset.from_trials(trials)
