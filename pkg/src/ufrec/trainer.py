"""Multi-task training: recommendation loss plus the curriculum-weighted
sequence and item enhancement terms.

Randomness for an epoch comes from ``default_rng([seed, epoch])`` and a
batch's random draws are frozen into a :class:`BatchPlan` before the loss is
built, so the loss is a deterministic function of the parameters.
"""

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import pad_truncate
from .engine import Tensor, adam_step, backward, concat, embedding, log_softmax, matmul, mul, square, transpose
from .evaluator import evaluate
from .item_enhancer import (
    build_candidate_sets,
    build_cooccurrence_stats,
    default_theta_gamma,
    enhanced_items,
    loss_frequent,
    loss_lowfreq,
    sample_neighbors,
    weight_frequent,
    weight_lowfreq,
)
from .model import UFRecModel
from .partition import compute_partition
from .sequence_enhancer import generate_subsequence, loss_sequence, weight_sequence
from .time_encoder import CONTEXT, INTERVAL, encode, next_time_embedding

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainData:
    split: object
    partition: object
    candidates: object
    theta: float
    gamma: float


def prepare_training_data(split, cfg, partition=None):
    if partition is None:
        partition = compute_partition(split, cfg.uniform_ratio, cfg.frequent_ratio, cfg.partition_mode)
    stats = build_cooccurrence_stats(split.train, split.num_items)
    theta, gamma = default_theta_gamma(stats, cfg.theta_or_none, cfg.gamma_or_none)
    cands = build_candidate_sets(stats, theta, gamma, cfg.top_l, cfg.pop_sim)
    return TrainData(split, partition, cands, theta, gamma)


def recommendation_loss(logits, valid=None):
    """Softmax cross-entropy with the positive in slot 0 of the last axis.

    ``logits`` is (B, C) or (B, P, C) with a (B, P) ``valid`` mask; the loss
    is averaged per sequence over valid positions, then over sequences that
    have at least one valid position.
    """
    nll = -log_softmax(logits, axis=-1)[..., 0]
    if nll.ndim == 1:
        return nll.mean()
    valid = np.ones(nll.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    cnt = valid.sum(axis=1)
    has = cnt > 0
    w = valid / np.maximum(cnt, 1)[:, None] / max(int(has.sum()), 1)
    return mul(nll, w).sum()


@dataclass
class BatchPlan:
    epoch: int
    users: np.ndarray
    win_items: np.ndarray
    win_times: np.ndarray
    win_mask: np.ndarray
    rec_mask: np.ndarray
    negatives: np.ndarray
    channels: tuple
    uniform: np.ndarray
    seq_rows: np.ndarray = None
    seq_items: np.ndarray = None
    seq_times: np.ndarray = None
    seq_mask: np.ndarray = None
    seq_weights: np.ndarray = None
    freq_centers: np.ndarray = None
    freq_neighbors: np.ndarray = None
    freq_weights: np.ndarray = None
    low_centers: np.ndarray = None
    low_neighbors: np.ndarray = None
    eta: float = 0.0
    active: dict = field(default_factory=dict)


def _train_negatives(seen, num_items, n, rng):
    """``n`` ids uniform over items absent from ``seen`` (with replacement)."""
    seen = np.unique(seen[seen > 0])
    if num_items - len(seen) <= 0:
        raise TrainingError("no items available for negative sampling")
    out = rng.integers(1, num_items + 1, size=n)
    bad = np.isin(out, seen)
    while bad.any():
        out[bad] = rng.integers(1, num_items + 1, size=int(bad.sum()))
        bad = np.isin(out, seen)
    return out


def make_plan(model, data, users, epoch, rng):
    cfg = model.cfg
    split, part = data.split, data.partition
    n = cfg.max_len
    b = len(users)
    win_items = np.zeros((b, n + 1), dtype=np.int64)
    win_times = np.zeros((b, n + 1), dtype=np.int64)
    win_mask = np.zeros((b, n + 1), dtype=bool)
    for r, u in enumerate(users):
        seq = split.train[u]
        win_items[r], win_times[r], win_mask[r] = pad_truncate(seq.items, seq.timestamps, n + 1)
    rec_mask = win_mask[:, :-1] & win_mask[:, 1:]
    if cfg.rec_positions == "last":
        rec_mask[:, :-1] = False
    negatives = np.stack([_train_negatives(win_items[r], split.num_items, cfg.num_train_negatives, rng)
                          for r in range(b)])
    uniform = np.array([bool(model.is_uniform(u, part)) for u in users])
    plan = BatchPlan(epoch, np.asarray(users), win_items, win_times, win_mask, rec_mask, negatives,
                     model.channels, uniform)

    # sequence enhancement
    less = ~part.items.frequent
    if cfg.seq_enh and epoch >= cfg.e_b:
        rows, its, tss, msk, ws = [], [], [], [], []
        seqs = part.sequences
        for r in np.nonzero(uniform)[0]:
            in_mask = win_mask[r, :-1]
            if not in_mask.any():
                continue
            pair = generate_subsequence(win_items[r, :-1][in_mask], win_times[r, :-1][in_mask],
                                        less, cfg.M, rng)
            it, ts, mk = pad_truncate(pair.derived_items, pair.derived_timestamps, n)
            rows.append(r)
            its.append(it)
            tss.append(ts)
            msk.append(mk)
            ws.append(weight_sequence(epoch, cfg.e_b, cfg.e_all, seqs.variance_of(users[r]),
                                      seqs.v_min, seqs.v_max))
        if rows:
            plan.seq_rows = np.array(rows)
            plan.seq_items = np.stack(its)
            plan.seq_times = np.stack(tss)
            plan.seq_mask = np.stack(msk)
            plan.seq_weights = np.array(ws)
    plan.active["s"] = plan.seq_rows is not None

    # item enhancement
    if cfg.item_enh and epoch >= cfg.e_b:
        batch_items = np.unique(win_items[win_mask])
        batch_items = batch_items[batch_items > 0]
        fc, fn, fw, lc, ln = [], [], [], [], []
        items = part.items
        for i in batch_items:
            if data.candidates.size(i) == 0:
                continue
            if items.is_frequent(i):
                nb = sample_neighbors(data.candidates.get(i), cfg.K, rng)
                fc.append(i)
                fn.append(nb)
                fw.append(weight_frequent(epoch, cfg.e_b, cfg.e_all, float(items.counts[i]),
                                          items.f_min, items.f_max))
            elif epoch >= cfg.e_t and model.frozen is not None:
                nb = sample_neighbors(data.candidates.get(i), cfg.K, rng)
                lc.append(i)
                ln.append(nb)
        if fc:
            plan.freq_centers, plan.freq_neighbors, plan.freq_weights = np.array(fc), np.stack(fn), np.array(fw)
        if lc:
            plan.low_centers, plan.low_neighbors = np.array(lc), np.stack(ln)
            plan.eta = weight_lowfreq(epoch, cfg.e_t, cfg.e_all)
    plan.active["f"] = plan.freq_centers is not None
    plan.active["l"] = plan.low_centers is not None
    return plan


def _channel_rec_loss(store, cfg, channel, plan):
    n = cfg.max_len
    d = cfg.d
    in_items, in_times, in_mask = plan.win_items[:, :n], plan.win_times[:, :n], plan.win_mask[:, :n]
    tgt_items, tgt_times = plan.win_items[:, 1:], plan.win_times[:, 1:]
    q = encode(store, channel, in_items, in_times, in_mask, cfg)
    q_item, q_time = q[..., :d], q[..., d:]
    b = in_items.shape[0]
    pos = embedding(store["item_emb"], tgt_items, plan.rec_mask)
    pos_logit = (q_item * pos).sum(axis=-1).reshape(b, n, 1)
    neg = embedding(store["item_emb"], plan.negatives)
    neg_logit = matmul(q_item, transpose(neg, (0, 2, 1)))
    t_next = next_time_embedding(store, channel, in_times, tgt_times, plan.rec_mask, cfg)
    time_logit = (q_time * t_next).sum(axis=-1, keepdims=True)
    logits = concat([pos_logit, neg_logit], axis=-1) + time_logit
    return recommendation_loss(logits, plan.rec_mask), q


def batch_loss(store, frozen, plan, cfg):
    """Total loss and its parts for one frozen batch plan."""
    n = cfg.max_len
    parts = {}
    encodings = {}
    rec_terms = []
    for ch in plan.channels:
        loss_ch, q = _channel_rec_loss(store, cfg, ch, plan)
        rec_terms.append(loss_ch)
        encodings[ch] = q
    lam_r = rec_terms[0] if len(rec_terms) == 1 else (rec_terms[0] + rec_terms[1]) * 0.5
    total = lam_r
    parts["r"] = lam_r

    if cfg.channel_consistency > 0 and len(plan.channels) == 2:
        has = plan.win_mask[:, n - 1]
        diff = encodings[INTERVAL][:, -1] - encodings[CONTEXT][:, -1]
        cons = mul(square(diff).sum(axis=-1), has / max(int(has.sum()), 1)).sum()
        total = total + cons * cfg.channel_consistency
        parts["c"] = cons

    if plan.active.get("s"):
        orig_ch = INTERVAL if INTERVAL in plan.channels else plan.channels[0]
        der_ch = CONTEXT if CONTEXT in plan.channels else plan.channels[0]
        q_orig = encodings[orig_ch][plan.seq_rows]
        q_hat = encode(store, der_ch, plan.seq_items, plan.seq_times, plan.seq_mask, cfg)
        if cfg.se_reduction == "last":
            lam_s = loss_sequence(q_orig[:, -1], q_hat[:, -1], store["gen_theta.w"], store["gen_theta.b"],
                                  plan.seq_weights)
        else:
            both = plan.win_mask[plan.seq_rows, :n] & plan.seq_mask
            lam_s = loss_sequence(q_orig, q_hat, store["gen_theta.w"], store["gen_theta.b"],
                                  plan.seq_weights, both)
        total = total + lam_s * cfg.alpha_s
        parts["s"] = lam_s

    if plan.active.get("f"):
        m_c, m_prime = enhanced_items(store["item_emb"], plan.freq_centers, plan.freq_neighbors)
        lam_f = loss_frequent(m_c, m_prime, store["gen_phi.w"], store["gen_phi.b"], plan.freq_weights)
        total = total + lam_f * cfg.alpha_f
        parts["f"] = lam_f

    if plan.active.get("l"):
        m_c, m_prime = enhanced_items(store["item_emb"], plan.low_centers, plan.low_neighbors)
        lam_l = loss_lowfreq(m_c, m_prime, frozen, plan.eta)
        total = total + lam_l * cfg.alpha_l
        parts["l"] = lam_l
    return total, parts


def _batches(users, size, rng):
    order = rng.permutation(np.asarray(users))
    return [order[i:i + size] for i in range(0, len(order), size)]


def train_epoch(model, data, epoch):
    """One pass over the training users; returns mean loss terms."""
    cfg = model.cfg
    if cfg.item_enh and epoch >= cfg.e_t:
        if model.frozen is None:
            model.snapshot_transfer()
        elif cfg.frozen_target == "ema" and epoch > cfg.e_t:
            model.ema_transfer(cfg.ema_decay)
    rng = np.random.default_rng([cfg.seed, epoch])
    sums = {"r": 0.0, "s": 0.0, "f": 0.0, "l": 0.0}
    nb = 0
    for bi, users in enumerate(_batches(data.split.users, cfg.batch, rng)):
        plan = make_plan(model, data, users, epoch, rng)
        total, parts = batch_loss(model.store, model.frozen, plan, cfg)
        for term, t in (("total", total), *parts.items()):
            if not np.isfinite(t.data).all():
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}, term {term}")
        model.store.zero_grad()
        backward(total)
        adam_step(model.store, cfg.lr)
        for k in sums:
            if k in parts:
                sums[k] += float(parts[k].data)
        nb += 1
    model.epoch = epoch
    return {k: v / max(nb, 1) for k, v in sums.items()}


LOG_COLUMNS = ("epoch", "lambda_r", "lambda_s", "lambda_f", "lambda_l", "val_ndcg10", "elapsed_s")


def validation_score(model, data):
    cfg = model.cfg
    rep = evaluate(model, data.split, data.partition, mode="sampled", ks=(cfg.val_k,), target="valid",
                   seed=cfg.eval_seed, num_negatives=cfg.eval_negatives)
    return rep.get("all", "NDCG", cfg.val_k)


def fit(model, data, on_epoch=None):
    """Train up to e_all epochs with early stopping on validation NDCG.

    Returns ``(best_model, log_rows)``.
    """
    cfg = model.cfg
    model.partition = data.partition
    best, best_score, best_epoch = model.copy(), -np.inf, -1
    rows = []
    start = time.perf_counter()
    for epoch in range(cfg.e_all):
        losses = train_epoch(model, data, epoch)
        score = validation_score(model, data)
        row = {"epoch": epoch, "lambda_r": losses["r"], "lambda_s": losses["s"], "lambda_f": losses["f"],
               "lambda_l": losses["l"], "val_ndcg10": score,
               "elapsed_s": round(time.perf_counter() - start, 3)}
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row, model)
        log.info("epoch %d  r=%.4f s=%.4f f=%.4f l=%.4f  val=%.4f", epoch, losses["r"], losses["s"],
                 losses["f"], losses["l"], score)
        if score > best_score:
            best, best_score, best_epoch = model.copy(), score, epoch
        elif epoch - best_epoch >= cfg.patience:
            break
    best.partition = data.partition
    return best, rows


def write_log(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in LOG_COLUMNS})


def train(split, cfg, partition=None, on_epoch=None):
    """Convenience: build data, initialize, fit."""
    data = prepare_training_data(split, cfg, partition)
    model = UFRecModel(cfg, split.num_items, partition=data.partition)
    best, rows = fit(model, data, on_epoch)
    return best, rows, data
