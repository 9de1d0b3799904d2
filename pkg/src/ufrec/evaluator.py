"""Top-k ranking metrics, subset breakdowns and the experiment harnesses."""

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import sample_negatives
from .engine import save_arrays
from .partition import compute_partition

log = logging.getLogger(__name__)

SCOPES = ("all", "S_u", "S_n", "I_f", "I_l")
METRICS = ("NDCG", "HR", "MRR")
_TARGET_CODE = {"test": 0, "valid": 1}


def rank_metrics(rank, k):
    """(ndcg, hr, mrr) at ``k`` for a single relevant item at 1-based ``rank``."""
    if rank is None or rank > k:
        return 0.0, 0.0, 0.0
    return 1.0 / math.log2(rank + 1), 1.0, 1.0 / rank


def _metric_arrays(ranks, k):
    ranks = np.asarray(ranks, dtype=np.float64)
    hit = ranks <= k
    ndcg = np.where(hit, 1.0 / np.log2(ranks + 1), 0.0)
    mrr = np.where(hit, 1.0 / ranks, 0.0)
    return {"NDCG": ndcg, "HR": hit.astype(np.float64), "MRR": mrr}


@dataclass
class MetricReport:
    mode: str
    ks: tuple
    values: dict = field(default_factory=dict)    # scope -> {"NDCG@10": x, ...}
    counts: dict = field(default_factory=dict)    # scope -> users in scope
    ranks: dict = field(default_factory=dict)     # user -> rank
    target: str = "test"

    def get(self, scope, metric, k):
        return self.values[scope][f"{metric}@{k}"]

    def to_json(self):
        return {"mode": self.mode, "target": self.target, "ks": list(self.ks),
                "values": self.values, "counts": self.counts}

    def rows(self):
        out = []
        for scope in SCOPES:
            if scope not in self.values:
                continue
            row = {"scope": scope, "count": self.counts.get(scope, 0), "mode": self.mode}
            row.update(self.values[scope])
            out.append(row)
        return out

    def write(self, directory, stem="metrics"):
        os.makedirs(directory, exist_ok=True)
        jpath = os.path.join(directory, f"{stem}.json")
        cpath = os.path.join(directory, f"{stem}.csv")
        with open(jpath, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
        write_csv(cpath, self.rows())
        return jpath, cpath


def write_csv(path, rows):
    if not rows:
        open(path, "w").close()
        return
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [c for c in r if c not in cols]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)


def scope_members(users, split, partition, target="test"):
    """scope -> boolean array over ``users``."""
    users = list(users)
    out = {"all": np.ones(len(users), dtype=bool)}
    if partition is not None:
        uni = np.array([partition.sequences.has(u) and partition.sequences.is_uniform(u) for u in users])
        freq = np.array([partition.items.is_frequent(split.holdout(u, target).item)
                         if split.holdout(u, target).item < len(partition.items.frequent) else False
                         for u in users])
        out.update({"S_u": uni, "S_n": ~uni, "I_f": freq, "I_l": ~freq})
    return out


def summarize(ranks_by_user, users, split, partition, ks, mode, target="test"):
    users = list(users)
    ranks = np.array([ranks_by_user[u] for u in users], dtype=np.float64)
    report = MetricReport(mode=mode, ks=tuple(ks), ranks=dict(ranks_by_user), target=target)
    for scope, members in scope_members(users, split, partition, target).items():
        report.counts[scope] = int(members.sum())
        vals = {}
        for k in ks:
            arrs = _metric_arrays(ranks[members], k)
            for name in METRICS:
                vals[f"{name}@{k}"] = float(arrs[name].mean()) if members.any() else 0.0
        report.values[scope] = vals
    return report


def evaluation_negatives(split, user, target, n, seed):
    """Seeded negatives for one user; capped at the size of the unseen pool."""
    rng = np.random.default_rng([seed, int(user), _TARGET_CODE[target]])
    history = split.full_history(user)
    pool = split.num_items - len(np.unique(history[(history > 0) & (history <= split.num_items)]))
    if pool < n:
        log.debug("user %s: only %d unseen items, sampling %d negatives instead of %d", user, pool, pool, n)
        n = pool
    return sample_negatives(history, split.num_items, n, rng)


def rank_users(model, split, users, mode="sampled", target="test", seed=2024,
               num_negatives=100, chunk=256):
    """1-based pessimistic rank of each user's held-out item."""
    ranks = {}
    users = list(users)
    for lo in range(0, len(users), chunk):
        part = users[lo:lo + chunk]
        pos = np.array([split.holdout(u, target).item for u in part], dtype=np.int64)
        if mode == "sampled":
            lists = [evaluation_negatives(split, u, target, num_negatives, seed) for u in part]
            width = max(len(x) for x in lists)
            short = sum(len(x) < num_negatives for x in lists)
            if short:
                log.warning("%d of %d users have fewer than %d unseen items; their negatives are capped",
                            short, len(part), num_negatives)
            negs = np.zeros((len(part), width), dtype=np.int64)
            valid = np.zeros((len(part), width), dtype=bool)
            for row, x in enumerate(lists):
                negs[row, :len(x)] = x
                valid[row, :len(x)] = True
            cand = np.column_stack([pos, negs])
            scores = np.asarray(model.score_candidates(part, split, target, cand), dtype=np.float64)
            r = kernels.rank_of_positive(scores[:, 0], scores[:, 1:], valid)
        elif mode == "full":
            scores = np.asarray(model.score_all(part, split, target), dtype=np.float64)
            valid = np.ones(scores.shape, dtype=bool)
            valid[:, 0] = False
            for row, u in enumerate(part):
                hist, _ = split.history(u, target)
                valid[row, hist] = False
            valid[np.arange(len(part)), pos] = False
            r = kernels.rank_of_positive(scores[np.arange(len(part)), pos], scores, valid)
        else:
            raise ValueError(f"unknown evaluation mode {mode!r}")
        ranks.update({u: int(x) for u, x in zip(part, r)})
    return ranks


def evaluate(model, split, partition=None, mode="sampled", ks=(10, 20), target="test",
             seed=2024, num_negatives=100, users=None):
    users = split.users if users is None else list(users)
    ranks = rank_users(model, split, users, mode, target, seed, num_negatives)
    return summarize(ranks, users, split, partition, ks, mode, target)


def regroup(report, split, partition):
    """Same ranks, different subset labels."""
    users = sorted(report.ranks)
    return summarize(report.ranks, users, split, partition, report.ks, report.mode, report.target)


# ---------------------------------------------------------------------------
# harnesses
# ---------------------------------------------------------------------------

SEQUENCE_GRID = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
ITEM_GRID = (0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def _flatten(report, scopes):
    row = {}
    for scope in scopes:
        row[f"{scope}:count"] = report.counts.get(scope, 0)
        for key, val in report.values.get(scope, {}).items():
            row[f"{scope}:{key}"] = val
    return row


def study_sweep(report_or_trainer, split, base_partition, sequence_grid=SEQUENCE_GRID,
                item_grid=ITEM_GRID, retrain_per_cell=False, mode="sampled"):
    """One row per (axis, ratio) with per-subset metrics.

    Without retraining the ranks of ``report_or_trainer`` (a MetricReport)
    are regrouped under each ratio. With ``retrain_per_cell`` it must be a
    callable ``f(uniform_ratio, frequent_ratio) -> MetricReport``.
    """
    rows = []
    cells = [("sequence", r) for r in sequence_grid] + [("item", r) for r in item_grid]
    for axis, ratio in cells:
        u_ratio = ratio if axis == "sequence" else base_partition.uniform_ratio
        f_ratio = ratio if axis == "item" else base_partition.frequent_ratio
        part = compute_partition(split, u_ratio, f_ratio, base_partition.mode)
        if retrain_per_cell:
            report = report_or_trainer(u_ratio, f_ratio)
            report = regroup(report, split, part)
        else:
            report = regroup(report_or_trainer, split, part)
        scopes = ("all", "S_u", "S_n") if axis == "sequence" else ("all", "I_f", "I_l")
        row = {"axis": axis, "ratio": ratio, "mode": mode}
        row.update(_flatten(report, scopes))
        rows.append(row)
    return rows


def time_sensitivity(report_interval, report_context, scopes=("all", "S_u", "S_n")):
    """(interval-only - context-only) per (scope, metric); positive favours intervals."""
    rows = []
    for scope in scopes:
        for key in sorted(report_interval.values[scope]):
            a = report_interval.values[scope][key]
            b = report_context.values[scope][key]
            rows.append({"scope": scope, "metric": key, "interval_only": a,
                         "context_only": b, "difference": a - b})
    return rows


def case_dump(model, split, user, target_item, out_dir, variant="full", target="test"):
    """Write the (N, 2d) encoding and the target score; returns (bin path, score)."""
    if user not in split.train:
        raise KeyError(f"unknown user {user}")
    enc, chans = model.encode_users([user], split, target)
    score = float(model.score_candidates([user], split, target, np.array([[target_item]]))[0, 0])
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, f"case_u{user}_{variant}")
    save_arrays(stem + ".bin", {"encoding": enc[0]}, step=0, seed=None,
                meta={"user": int(user), "variant": variant})
    with open(stem + ".json", "w", encoding="utf-8") as fh:
        json.dump({"user": int(user), "variant": variant, "shape": list(enc[0].shape),
                   "target_item": int(target_item), "score": score, "channel": chans[0]},
                  fh, indent=2, sort_keys=True)
    return stem + ".bin", score
