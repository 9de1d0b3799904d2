"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""

import logging
import math
import time

import numpy as np
import pytest

from ufrec import kernels
from ufrec.config import TrainConfig
from ufrec.data import RawInteraction, UserSequence, build_sequences, k_core_filter, split_leave_one_out
from ufrec.engine import finite_diff_check
from ufrec.evaluator import evaluate, rank_metrics
from ufrec.item_enhancer import (
    build_candidate_sets,
    build_cooccurrence_stats,
    default_theta_gamma,
    g_time,
    neighbor_score,
    phi,
    weight_frequent,
    weight_lowfreq,
)
from ufrec.model import UFRecModel
from ufrec.partition import compute_partition, interval_variance, partition_sequences
from ufrec.sequence_enhancer import generate_subsequence, weight_sequence
from ufrec.synth import generate
from ufrec.trainer import batch_loss, make_plan, prepare_training_data, train

log = logging.getLogger(__name__)
SEEDS = (0, 1, 2)


def split_of(**kw):
    rows, _ = generate(**kw)
    return split_leave_one_out(build_sequences(rows)[0])


# 1 -------------------------------------------------------------------------

def test_gradient_check_full_loss(criterion, tiny_split, tiny_cfg):
    start = time.perf_counter()
    data = prepare_training_data(tiny_split, tiny_cfg)
    model = UFRecModel(tiny_cfg, tiny_split.num_items, partition=data.partition)
    model.snapshot_transfer()
    plan = make_plan(model, data, tiny_split.users, 3, np.random.default_rng(0))
    _, parts = batch_loss(model.store, model.frozen, plan, tiny_cfg)
    err = finite_diff_check(lambda s: batch_loss(s, model.frozen, plan, tiny_cfg)[0], model.store)
    took = time.perf_counter() - start
    ok = set(parts) == {"r", "s", "f", "l"} and err <= 1e-4 and took < 60
    criterion(1, ok, f"terms {sorted(parts)}, max rel err {err:.2e}, {took:.1f}s")


# 2 -------------------------------------------------------------------------

def reference_metrics(pos_score, neg_scores, k):
    """Sort-based: descending score, the positive placed after anything it ties."""
    entries = [(-pos_score, 1, "pos")] + [(-s, 0, "neg") for s in neg_scores]
    entries.sort(key=lambda e: (e[0], e[1]))
    idx = [e[2] for e in entries].index("pos")
    if idx >= k:
        return 0.0, 0.0, 0.0
    return 1.0 / math.log2(idx + 2), 1.0, 1.0 / (idx + 1)


class RandomScorer:
    def __init__(self, seed):
        self.seed = seed

    def score_candidates(self, users, split, target, cand):
        return np.random.default_rng([self.seed, int(users[0])]).normal(size=cand.shape)


def test_metric_oracle(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    cases, width = 10_000, 30
    pos = rng.integers(0, 8, size=cases).astype(float)
    cand = rng.integers(0, 8, size=(cases, width)).astype(float)
    lengths = rng.integers(1, width + 1, size=cases)
    valid = np.arange(width)[None, :] < lengths[:, None]
    ks = rng.integers(1, 25, size=cases)
    ranks = kernels.rank_of_positive(pos, cand, valid)
    mismatches = sum(
        rank_metrics(int(ranks[i]), int(ks[i])) != reference_metrics(pos[i], cand[i, :lengths[i]], int(ks[i]))
        for i in range(cases))

    split = split_of(num_users=2000, num_items=300, min_len=5, max_len=8, seed=11)
    rep = evaluate(RandomScorer(3), split, mode="sampled", ks=(10,))
    hr = rep.get("all", "HR", 10)
    took = time.perf_counter() - start
    ok = mismatches == 0 and abs(hr - 10 / 101) <= 0.02 and len(split.users) >= 2000 and took < 30
    criterion(2, ok, f"{mismatches} mismatches in {cases} cases, random HR@10 {hr:.4f} over "
                     f"{len(split.users)} users (target {10 / 101:.4f}), {took:.1f}s")


# 3 -------------------------------------------------------------------------

def test_schedules(criterion):
    e_b, e_t, e_all = 5, 20, 200
    r2 = math.sqrt(2) / 2
    endpoint = [
        (weight_sequence(e_b, e_b, e_all, 9.0, 1.0, 9.0), 0.0),
        (weight_sequence(e_b, e_b, e_all, 1.0, 1.0, 9.0), 1.0),
        (weight_sequence(e_b + e_all / 2, e_b, e_all, 9.0, 1.0, 9.0), r2),
        (weight_frequent(e_b, e_b, e_all, 2.0, 2.0, 50.0), 0.0),
        (weight_frequent(e_b, e_b, e_all, 50.0, 2.0, 50.0), 1.0),
        (weight_frequent(e_b + e_all / 2, e_b, e_all, 50.0, 2.0, 50.0), r2),
        (weight_lowfreq(e_t, e_t, e_all), 0.0),
        (weight_lowfreq(e_t + e_all / 2, e_t, e_all), r2),
    ]
    worst = max(abs(got - want) for got, want in endpoint)
    grid = np.linspace(0.0, 1.0, 101)
    values = []
    for frac in grid:
        for x in grid:
            values.append(weight_sequence(e_b + frac * e_all, e_b, e_all, x, 0.0, 1.0))
            values.append(weight_frequent(e_b + frac * e_all, e_b, e_all, x, 0.0, 1.0))
        values.append(weight_lowfreq(e_t + frac * e_all, e_t, e_all))
    values = np.array(values)
    # sin(pi) evaluates to ~1.2e-16 rather than 0, so the range check allows one rounding step
    in_range = bool(((values >= -1e-15) & (values <= 1.0)).all())
    criterion(3, worst <= 1e-12 and in_range,
              f"worst endpoint error {worst:.1e}, {len(values)} grid values in [0,1]: {in_range}")


# 4 -------------------------------------------------------------------------

def brute_kcore(rows, ku, ki):
    rows = list(rows)
    while True:
        uc, ic = {}, {}
        for r in rows:
            uc[r.user_id] = uc.get(r.user_id, 0) + 1
            ic[r.item_id] = ic.get(r.item_id, 0) + 1
        keep = [r for r in rows if uc[r.user_id] >= ku and ic[r.item_id] >= ki]
        if len(keep) == len(rows):
            return keep
        rows = keep


def exhaustive_balanced(variances, lengths, users):
    order = np.lexsort((users, variances))
    w = lengths[order]
    total = w.sum()
    best = min(range(1, len(w)), key=lambda p: (abs(2 * w[:p].sum() - total), p))
    return set(users[order[:best]].tolist())


def random_sequences(rng, n_users):
    seqs = {}
    for u in range(n_users):
        n = int(rng.integers(3, 15))
        gaps = rng.integers(1, 10_000, size=n - 1)
        ts = np.concatenate([[0], np.cumsum(gaps)]) + int(rng.integers(0, 10**6))
        seqs[u] = UserSequence(u, rng.integers(1, 50, size=n), ts.astype(np.int64))
    return seqs


def test_partition_suite(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    kcore_bad = 0
    for _ in range(100):
        n = int(rng.integers(1, 80))
        rows = [RawInteraction(f"u{rng.integers(0, 12)}", f"i{rng.integers(0, 15)}", t) for t in range(n)]
        ku, ki = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        kcore_bad += k_core_filter(rows, ku, ki) != brute_kcore(rows, ku, ki)

    rescale_bad = 0
    for _ in range(20):
        seqs = random_sequences(rng, 60)
        # timestamps are integers, so scale by an integer factor and shift
        c, shift = int(rng.integers(2, 1000)), int(rng.integers(0, 10**6))
        scaled = {u: UserSequence(u, s.items, s.timestamps * c + shift) for u, s in seqs.items()}
        a = partition_sequences(seqs, 0.4)
        b = partition_sequences(scaled, 0.4)
        rescale_bad += not np.array_equal(a.uniform, b.uniform)

    balanced_bad = 0
    for n_users in (2, 3, 10, 100, 1000):
        seqs = random_sequences(rng, n_users)
        got = partition_sequences(seqs, mode="balanced")
        users = np.array(sorted(seqs))
        var = np.array([interval_variance(seqs[u].timestamps) for u in users])
        lengths = np.array([len(seqs[u]) for u in users], dtype=float)
        want = exhaustive_balanced(var, lengths, users)
        balanced_bad += set(got.users[got.uniform].tolist()) != want
    took = time.perf_counter() - start
    ok = kcore_bad == 0 and rescale_bad == 0 and balanced_bad == 0 and took < 60
    criterion(4, ok, f"k-core mismatches {kcore_bad}/100, rescaling changes {rescale_bad}/20, "
                     f"balanced mismatches {balanced_bad}/5 (up to 1000 users), {took:.1f}s")


# 5 -------------------------------------------------------------------------

def test_subsequence_generator(criterion):
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        items = rng.integers(1, 40, size=n)
        ts = np.sort(rng.integers(0, 10**6, size=n))
        less = rng.random(41) < 0.4
        m = int(rng.integers(1, 6))
        pair = generate_subsequence(items, ts, less, m, rng)
        idx = pair.index
        ok = (np.all(np.diff(idx) > 0)
              and np.array_equal(pair.derived_items, items[idx])
              and np.array_equal(pair.derived_timestamps, ts[idx])
              and set(np.nonzero(less[items])[0]) <= set(idx.tolist())
              and len(idx) >= min(m, n))
        bad += not ok

    # soft: derived interval variance above the original on uniform-labeled users
    split = split_of(num_users=300, num_items=200, seed=0)
    part = compute_partition(split, 0.5, 0.5)
    less = ~part.items.frequent
    higher = total = 0
    for u in split.users:
        if not part.sequences.is_uniform(u):
            continue
        seq = split.train[u]
        items, ts = seq.items[-50:], seq.timestamps[-50:]
        pair = generate_subsequence(items, ts, less, 3, rng)
        if len(pair.derived_items) < 2:
            continue
        total += 1
        higher += interval_variance(pair.derived_timestamps) > interval_variance(ts)
    share = higher / max(total, 1)
    if share < 0.8:
        log.warning("derived variance exceeded the original in only %.1f%% of uniform users", 100 * share)
    criterion(5, bad == 0, f"{bad}/1000 invariant violations; derived variance higher in "
                           f"{100 * share:.1f}% of {total} uniform users (soft, target 80%)")


# 6 -------------------------------------------------------------------------

def test_neighbor_suite(criterion):
    closed = [
        (float(g_time(0.0)), 1.0),
        (float(g_time(math.e - 1)), 0.5),
        (float(phi(1.0, 1.0, 1.0, 2.0)), 2 * math.exp(-1)),
    ]
    worst = max(abs(a - b) for a, b in closed)

    step = 1e-3
    peak_bad = 0
    for theta, gamma, x in ((1.0, 2.0, 1.0), (0.5, 3.0, 2.0), (2.0, 4.0, 1.5), (0.1, 0.2, 5.0)):
        t = np.arange(0.0, 4 * gamma * x, step)
        got = t[np.argmax(phi(t, x, theta, gamma))]
        peak_bad += abs(got - (gamma * x - theta)) > step

    split = split_of(num_users=120, num_items=100, seed=6)
    stats = build_cooccurrence_stats(split.train, split.num_items)
    theta, gamma = default_theta_gamma(stats)
    table = build_candidate_sets(stats, theta, gamma, top_l=20)
    rank_bad = 0
    for c in range(1, split.num_items + 1):
        scored = []
        for j in range(1, split.num_items + 1):
            p = stats.pair(c, j)
            if j != c and p is not None:
                scored.append((-float(neighbor_score(p[0], p[1], p[2], theta, gamma)), j))
        want = [j for _, j in sorted(scored)[:20]]
        rank_bad += [j for j, _ in table.get(c)] != want
    ok = worst <= 1e-12 and peak_bad == 0 and rank_bad == 0
    criterion(6, ok, f"closed-form error {worst:.1e}, peak misses {peak_bad}/4, "
                     f"top-20 mismatches {rank_bad}/{split.num_items}")


# 7 -------------------------------------------------------------------------

@pytest.mark.slow
def test_overfit(criterion):
    start = time.perf_counter()
    split = split_of(num_users=50, num_items=100, min_len=25, max_len=40, head_fraction=1.0,
                     tail_prob_uniform=0, tail_prob_nonuniform=0, drift_prob_uniform=0,
                     drift_prob_nonuniform=0, seed=0)
    cfg = TrainConfig(d=32, max_len=30, e_all=200, patience=20)
    best, rows, data = train(split, cfg)
    hr = evaluate(best, split, data.partition, mode="sampled", ks=(10,)).get("all", "HR", 10)
    took = time.perf_counter() - start
    criterion(7, hr >= 0.9 and took < 600, f"test HR@10 {hr:.3f} after {len(rows)} epochs, {took:.1f}s")


# 8, 9 ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_runs():
    """Per seed: full model and sequence-enhancement ablation on the synthetic corpus."""
    out = {}
    start = time.perf_counter()
    for seed in SEEDS:
        split = split_of(num_users=300, num_items=200, seed=seed)
        for name, extra in (("full", {}), ("no_seq_enh", {"seq_enh": False})):
            cfg = TrainConfig(d=32, max_len=30, e_all=40, patience=8, e_b=3, e_t=10, seed=seed,
                              uniform_ratio=0.5, frequent_ratio=0.5, **extra)
            best, _, data = train(split, cfg)
            out[seed, name] = {
                "full": evaluate(best, split, data.partition, mode="full", ks=(20,)),
                "sampled": evaluate(best, split, data.partition, mode="sampled", ks=(10,)),
            }
    out["elapsed"] = time.perf_counter() - start
    return out


@pytest.mark.slow
def test_subset_direction(criterion, desk_runs):
    parts = []
    ok = True
    for seed in SEEDS:
        rep = desk_runs[seed, "full"]["full"]
        su, sn, i_f, i_l = (rep.get(s, "NDCG", 20) for s in ("S_u", "S_n", "I_f", "I_l"))
        ok &= su > sn and i_f > i_l
        parts.append(f"seed {seed}: S_u {su:.3f}>S_n {sn:.3f}, I_f {i_f:.3f}>I_l {i_l:.3f}")
    ok &= desk_runs["elapsed"] < 1800
    criterion(8, ok, "; ".join(parts) + f" (NDCG@20, full ranking, {desk_runs['elapsed']:.0f}s)")


@pytest.mark.slow
def test_sequence_enhancement_ablation(criterion, desk_runs):
    wins = 0
    parts = []
    for seed in SEEDS:
        a = desk_runs[seed, "full"]["sampled"].get("S_n", "HR", 10)
        b = desk_runs[seed, "no_seq_enh"]["sampled"].get("S_n", "HR", 10)
        wins += a >= b
        parts.append(f"seed {seed}: {a:.3f} vs {b:.3f}")
    criterion(9, wins >= 2, f"full vs w/o-B non-uniform HR@10, {wins}/3 seeds favour full; " + "; ".join(parts))


# 10 ------------------------------------------------------------------------

def test_determinism(criterion, tmp_path, tiny_split, tiny_cfg):
    cfg = tiny_cfg.replace(e_all=5, e_t=2, patience=5)
    blobs, logs, snaps = [], [], []
    for k in range(2):
        seen = []

        def keep(row, model):
            if row["epoch"] >= cfg.e_t:
                seen.append((model.frozen["w"].tobytes(), model.frozen["b"].tobytes()))

        best, rows, _ = train(tiny_split, cfg, on_epoch=keep)
        path = tmp_path / f"run{k}.ckpt"
        best.save(path)
        blobs.append(path.read_bytes())
        logs.append([{c: v for c, v in r.items() if c != "elapsed_s"} for r in rows])
        snaps.append(seen)
    same_ckpt = blobs[0] == blobs[1]
    same_log = logs[0] == logs[1]
    frozen_ok = len(snaps[0]) == cfg.e_all - cfg.e_t and len(set(snaps[0])) == 1 and snaps[0] == snaps[1]
    criterion(10, same_ckpt and same_log and frozen_ok,
              f"checkpoints identical {same_ckpt}, logs identical {same_log}, "
              f"snapshot constant over {len(snaps[0])} epochs {frozen_ok}")
