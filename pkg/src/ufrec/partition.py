"""Uniformity labels for sequences and frequency labels for items."""

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

UNIFORM, NONUNIFORM = "uniform", "non-uniform"
FREQUENT, LESS_FREQUENT = "frequent", "less-frequent"


def interval_variance(timestamps):
    """Population variance of consecutive gaps (seconds squared)."""
    ts = np.asarray(timestamps, dtype=np.float64)
    if len(ts) < 2:
        log.warning("sequence with %d timestamp(s) has no interval; variance set to 0", len(ts))
        return 0.0
    return float(np.var(np.diff(ts)))


def _top_count(ratio, n):
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    # round first so 0.6 * 10 does not turn into 7 through float noise
    return math.ceil(round(ratio * n, 9))


def _balanced_prefix(weights):
    """Prefix length in [1, n-1] whose cumulative weight is closest to half."""
    cum = np.cumsum(weights)[:-1]
    total = float(np.sum(weights))
    return int(np.argmin(np.abs(2.0 * cum - total))) + 1


@dataclass
class UniformityIndex:
    users: np.ndarray        # dense ids, ascending
    variance: np.ndarray     # aligned with users
    rank: np.ndarray         # 1-based ascending-variance rank
    uniform: np.ndarray      # bool, aligned with users
    v_max: float
    v_min: float

    def __post_init__(self):
        self._pos = {int(u): i for i, u in enumerate(self.users)}

    def is_uniform(self, user):
        return bool(self.uniform[self._pos[int(user)]])

    def has(self, user):
        return int(user) in self._pos

    def variance_of(self, user):
        return float(self.variance[self._pos[int(user)]])

    def label(self, user):
        return UNIFORM if self.is_uniform(user) else NONUNIFORM

    @property
    def num_uniform(self):
        return int(self.uniform.sum())


@dataclass
class FrequencyIndex:
    counts: np.ndarray       # index = dense item id, slot 0 is padding
    frequent: np.ndarray     # bool, same indexing; slot 0 False
    f_max: float
    f_min: float

    @property
    def num_items(self):
        return len(self.counts) - 1

    def is_frequent(self, item):
        return bool(self.frequent[int(item)])

    def label(self, item):
        return FREQUENT if self.is_frequent(item) else LESS_FREQUENT


def partition_sequences(sequences, ratio=0.5, mode="ratio"):
    """Rank sequences by interval variance and label the low-variance end uniform.

    ``sequences`` maps user -> UserSequence (or is an iterable of them).
    """
    seqs = sorted(sequences.values() if isinstance(sequences, dict) else sequences,
                  key=lambda s: s.user)
    if len(seqs) < 2:
        raise ValueError("need at least two sequences to partition")
    users = np.array([s.user for s in seqs], dtype=np.int64)
    var = np.array([interval_variance(s.timestamps) for s in seqs])
    order = np.lexsort((users, var))
    rank = np.empty(len(seqs), dtype=np.int64)
    rank[order] = np.arange(1, len(seqs) + 1)
    if mode == "ratio":
        cut = _top_count(ratio, len(seqs))
    elif mode == "balanced":
        lengths = np.array([len(s) for s in seqs], dtype=np.float64)
        cut = _balanced_prefix(lengths[order])
    else:
        raise ValueError(f"unknown partition mode {mode!r}")
    uniform = rank <= cut
    return UniformityIndex(users, var, rank, uniform, float(var.max()), float(var.min()))


def item_counts(sequences, num_items):
    counts = np.zeros(num_items + 1, dtype=np.int64)
    for s in (sequences.values() if isinstance(sequences, dict) else sequences):
        np.add.at(counts, s.items, 1)
    counts[0] = 0
    return counts


def partition_items(counts, ratio=0.5, mode="ratio"):
    """Label the top items by count as frequent (ties: lower id first)."""
    counts = np.asarray(counts, dtype=np.int64)
    n = len(counts) - 1
    if n < 2:
        raise ValueError("need at least two items to partition")
    ids = np.arange(1, n + 1)
    order = ids[np.lexsort((ids, -counts[1:]))]
    if mode == "ratio":
        cut = _top_count(ratio, n)
    elif mode == "balanced":
        cut = _balanced_prefix(counts[order].astype(np.float64))
    else:
        raise ValueError(f"unknown partition mode {mode!r}")
    frequent = np.zeros(n + 1, dtype=bool)
    frequent[order[:cut]] = True
    fc = counts[frequent]
    return FrequencyIndex(counts, frequent, float(fc.max()), float(fc.min()))


@dataclass
class Partition:
    sequences: UniformityIndex
    items: FrequencyIndex
    uniform_ratio: float = 0.5
    frequent_ratio: float = 0.5
    mode: str = "ratio"


def compute_partition(split, uniform_ratio=0.5, frequent_ratio=0.5, mode="ratio"):
    """Labels from TRAIN interactions only."""
    seq_index = partition_sequences(split.train, uniform_ratio, mode)
    item_index = partition_items(item_counts(split.train, split.num_items), frequent_ratio, mode)
    return Partition(seq_index, item_index, uniform_ratio, frequent_ratio, mode)


def partition_to_json(p):
    s, it = p.sequences, p.items
    return {
        "users": {str(int(u)): {"variance": float(v), "rank": int(r),
                                "label": UNIFORM if f else NONUNIFORM}
                  for u, v, r, f in zip(s.users, s.variance, s.rank, s.uniform)},
        "items": {str(i): {"count": int(it.counts[i]), "label": it.label(i)}
                  for i in range(1, it.num_items + 1)},
        "extremes": {"V_max": s.v_max, "V_min": s.v_min, "F_max": it.f_max, "F_min": it.f_min},
        "settings": {"uniform_ratio": p.uniform_ratio, "frequent_ratio": p.frequent_ratio,
                     "mode": p.mode},
    }


def partition_from_json(doc):
    urows = sorted(((int(k), v) for k, v in doc["users"].items()), key=lambda kv: kv[0])
    users = np.array([u for u, _ in urows], dtype=np.int64)
    var = np.array([v["variance"] for _, v in urows], dtype=np.float64)
    rank = np.array([v["rank"] for _, v in urows], dtype=np.int64)
    uni = np.array([v["label"] == UNIFORM for _, v in urows], dtype=bool)
    n = max(int(k) for k in doc["items"])
    counts = np.zeros(n + 1, dtype=np.int64)
    freq = np.zeros(n + 1, dtype=bool)
    for k, v in doc["items"].items():
        counts[int(k)] = v["count"]
        freq[int(k)] = v["label"] == FREQUENT
    ex = doc["extremes"]
    st = doc.get("settings", {})
    return Partition(UniformityIndex(users, var, rank, uni, ex["V_max"], ex["V_min"]),
                     FrequencyIndex(counts, freq, ex["F_max"], ex["F_min"]),
                     st.get("uniform_ratio", 0.5), st.get("frequent_ratio", 0.5),
                     st.get("mode", "ratio"))


def save_partition(path, p):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(partition_to_json(p), fh)


def load_partition(path):
    with open(path, encoding="utf-8") as fh:
        return partition_from_json(json.load(fh))
