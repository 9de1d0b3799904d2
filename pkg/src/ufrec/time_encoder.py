"""Interval / calendar time embeddings and the mixture-attention encoder.

Two channels feed each attention head: the item half of the input and the
time half. Per head, the attention matrix is a learnable convex blend of
the two channels' masked scaled-dot-product attention matrices.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .engine import (
    Tensor,
    concat,
    embedding,
    layer_norm,
    masked_softmax,
    matmul,
    mul,
    relu,
    transpose,
)

log = logging.getLogger(__name__)

INTERVAL, CONTEXT = "interval", "context"
CAL_FIELDS = ("year", "month", "day", "weekday")
CAL_SIZES = {"month": 12, "day": 31, "weekday": 7}


def bucketize(gaps, num_buckets=64):
    """min(B-1, floor(log2(1 + gap/60))) on gaps in seconds."""
    gaps = np.maximum(np.asarray(gaps, dtype=np.float64), 0.0)
    b = np.floor(np.log2(1.0 + gaps / 60.0)).astype(np.int64)
    return np.minimum(b, num_buckets - 1)


def calendar(timestamps):
    """UTC year, month (1-12), day (1-31), weekday (Monday=0)."""
    dt = np.asarray(timestamps, dtype=np.int64).astype("datetime64[s]")
    days = dt.astype("datetime64[D]")
    months = dt.astype("datetime64[M]")
    year = dt.astype("datetime64[Y]").astype(np.int64) + 1970
    month = months.astype(np.int64) % 12 + 1
    day = (days - months.astype("datetime64[D]")).astype(np.int64) + 1
    weekday = (days.astype(np.int64) + 3) % 7
    return year, month, day, weekday


@dataclass
class TimeFeatures:
    intervals: np.ndarray
    buckets: np.ndarray
    year: np.ndarray
    month: np.ndarray
    day: np.ndarray
    weekday: np.ndarray


def compute_time_features(timestamps, num_buckets=64):
    ts = np.asarray(timestamps, dtype=np.int64)
    gaps = np.diff(ts)
    if (gaps < 0).any():
        k = int(np.argmax(gaps < 0))
        raise ValueError(f"timestamps decrease at position {k + 1}: {ts[k]} -> {ts[k + 1]}")
    year, month, day, weekday = calendar(ts)
    return TimeFeatures(gaps, bucketize(gaps, num_buckets), year, month, day, weekday)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _uniform(rng, shape, d):
    bound = 1.0 / np.sqrt(d)
    return rng.uniform(-bound, bound, size=shape)


def calendar_fields(cfg):
    return tuple(f.strip() for f in cfg.calendar_fields.split(",") if f.strip())


def _cal_size(cfg, name):
    return cfg.year_buckets if name == "year" else CAL_SIZES[name]


def init_time_params(store, cfg, rng):
    d = cfg.d
    store.add("time.interval", _uniform(rng, (cfg.num_buckets, d), d))
    fields = calendar_fields(cfg)
    for f in fields:
        store.add(f"time.cal_{f}", _uniform(rng, (_cal_size(cfg, f), d), d))
    store.add("time.cal_proj_w", _uniform(rng, (len(fields) * d, d), d))
    store.add("time.cal_proj_b", np.zeros(d))


def init_encoder_params(store, prefix, cfg, rng):
    d, h = cfg.d, cfg.heads
    dv = max(1, d // h)
    w = 2 * d
    if w % h:
        raise ValueError(f"2*d={w} must be divisible by heads={h}")
    store.add(f"{prefix}.pos", _uniform(rng, (cfg.max_len, w), d))
    for b in range(cfg.num_blocks):
        p = f"{prefix}.b{b}"
        for ch in ("m", "c"):
            store.add(f"{p}.wq_{ch}", _uniform(rng, (d, h * dv), d))
            store.add(f"{p}.wk_{ch}", _uniform(rng, (d, h * dv), d))
        store.add(f"{p}.wv", _uniform(rng, (w, w), d))
        store.add(f"{p}.wo", _uniform(rng, (w, w), d))
        store.add(f"{p}.mix", np.zeros((h, 2)))
        store.add(f"{p}.wf", _uniform(rng, (w, w), d))
        store.add(f"{p}.bf", np.zeros(w))
        store.add(f"{p}.wf2", _uniform(rng, (w, w), d))
        store.add(f"{p}.bf2", np.zeros(w))
        if cfg.layer_norm:
            for k in ("ln1", "ln2"):
                store.add(f"{p}.{k}_g", np.ones(w))
                store.add(f"{p}.{k}_b", np.zeros(w))


# ---------------------------------------------------------------------------
# time embeddings
# ---------------------------------------------------------------------------


def interval_embedding(store, gaps, valid, cfg):
    return embedding(store["time.interval"], bucketize(np.where(valid, gaps, 0), cfg.num_buckets), valid)


def calendar_embedding(store, timestamps, mask, cfg):
    year, month, day, weekday = calendar(np.where(mask, timestamps, 0))
    idx = {
        "year": np.clip(year - cfg.year_base, 0, cfg.year_buckets - 1),
        "month": month - 1,
        "day": day - 1,
        "weekday": weekday,
    }
    parts = [embedding(store[f"time.cal_{f}"], idx[f], mask) for f in calendar_fields(cfg)]
    x = concat(parts, axis=-1) if len(parts) > 1 else parts[0]
    out = matmul(x, store["time.cal_proj_w"]) + store["time.cal_proj_b"]
    return mul(out, np.asarray(mask, dtype=np.float64)[..., None])


def embed_time(store, timestamps, mask, cfg):
    """(V_t, C_t) for padded (B, N) timestamps.

    V_t row k embeds the gap between positions k-1 and k; row 0 and any row
    without a valid predecessor are zero. C_t is zero on padded slots.
    """
    ts = np.asarray(timestamps, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    squeeze = ts.ndim == 1
    if squeeze:
        ts, mask = ts[None], mask[None]
    gaps = np.diff(ts, axis=1)
    valid = mask[:, 1:] & mask[:, :-1]
    rows = interval_embedding(store, gaps, valid, cfg)
    zero = Tensor(np.zeros((ts.shape[0], 1, cfg.d)))
    v_t = concat([zero, rows], axis=1)
    c_t = calendar_embedding(store, ts, mask, cfg)
    if squeeze:
        v_t, c_t = v_t[0], c_t[0]
    return v_t, c_t


def channel_embedding(store, channel, timestamps, mask, cfg):
    v_t, c_t = embed_time(store, timestamps, mask, cfg)
    return v_t if channel == INTERVAL else c_t


def next_time_embedding(store, channel, prev_ts, next_ts, valid, cfg):
    """Time part of the target vector: v_next (gap bucket) or c_next (calendar)."""
    prev_ts = np.asarray(prev_ts, dtype=np.int64)
    next_ts = np.asarray(next_ts, dtype=np.int64)
    valid = np.asarray(valid, dtype=bool)
    if channel == INTERVAL:
        return interval_embedding(store, next_ts - prev_ts, valid, cfg)
    return calendar_embedding(store, next_ts, valid, cfg)


# ---------------------------------------------------------------------------
# mixture attention
# ---------------------------------------------------------------------------


def attention_mask(mask):
    """(B, 1, N, N): query i may attend key j iff j <= i and both are real."""
    mask = np.asarray(mask, dtype=bool)
    n = mask.shape[-1]
    causal = np.tril(np.ones((n, n), dtype=bool))
    return (causal[None] & mask[:, None, :] & mask[:, :, None])[:, None]


def mixture_weights(store, prefix, block=0):
    """(H, 2) simplex weights over (item channel, time channel)."""
    return masked_softmax(store[f"{prefix}.b{block}.mix"], axis=-1)


def _heads(x, b, n, h, w):
    return transpose(x.reshape(b, n, h, w), (0, 2, 1, 3))


def mixture_attention(store, prefix, h_u, channel_emb, mask, cfg, return_attention=False):
    """q_u (B, N, 2d) from item embeddings and one time channel.

    X = (h_u || channel_emb) + P; per head the attention is
    p_m * softmax(Q_m K_m^T / sqrt(dv)) + p_c * softmax(Q_c K_c^T / sqrt(dv))
    under the causal/padding mask, followed by the output projection with a
    residual and a ReLU feed-forward with a residual.
    """
    mask = np.asarray(mask, dtype=bool)
    squeeze = mask.ndim == 1
    if squeeze:
        mask = mask[None]
        h_u = h_u.reshape(1, *h_u.shape)
        channel_emb = channel_emb.reshape(1, *channel_emb.shape)
    b, n = mask.shape
    d, nh = cfg.d, cfg.heads
    dv = max(1, d // nh)
    w = 2 * d
    fmask = mask.astype(np.float64)[..., None]
    amask = attention_mask(mask)
    x = concat([h_u, channel_emb], axis=-1)
    if x.shape[-1] != w:
        raise ValueError(f"expected input width {w}, got {x.shape[-1]}")
    x = mul(x + store[f"{prefix}.pos"][-n:], fmask)
    attn_out = []
    for blk in range(cfg.num_blocks):
        p = f"{prefix}.b{blk}"
        halves = {"m": x[..., :d], "c": x[..., d:]}
        mix = mixture_weights(store, prefix, blk)
        a = None
        for k, ch in enumerate(("m", "c")):
            q = _heads(matmul(halves[ch], store[f"{p}.wq_{ch}"]), b, n, nh, dv)
            kk = _heads(matmul(halves[ch], store[f"{p}.wk_{ch}"]), b, n, nh, dv)
            scores = matmul(q, transpose(kk, (0, 1, 3, 2))) / np.sqrt(dv)
            att = masked_softmax(scores, amask, axis=-1)
            term = mul(att, mix[:, k].reshape(1, nh, 1, 1))
            a = term if a is None else a + term
        v = _heads(matmul(x, store[f"{p}.wv"]), b, n, nh, w // nh)
        heads = transpose(matmul(a, v), (0, 2, 1, 3)).reshape(b, n, w)
        s = x + matmul(heads, store[f"{p}.wo"])
        if cfg.layer_norm:
            s = layer_norm(s, store[f"{p}.ln1_g"], store[f"{p}.ln1_b"])
        f = matmul(relu(matmul(s, store[f"{p}.wf"]) + store[f"{p}.bf"]), store[f"{p}.wf2"]) + store[f"{p}.bf2"]
        out = s + f
        if cfg.layer_norm:
            out = layer_norm(out, store[f"{p}.ln2_g"], store[f"{p}.ln2_b"])
        x = mul(out, fmask)
        attn_out.append(a)
    if squeeze:
        x = x[0]
    if return_attention:
        return x, attn_out
    return x


def encoder_prefix(channel):
    return "enc_intv" if channel == INTERVAL else "enc_ctx"


def encode(store, channel, items, timestamps, mask, cfg):
    """Run one channel's encoder over padded (B, N) item/timestamp arrays."""
    items = np.asarray(items, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    h_u = embedding(store["item_emb"], items, mask & (items != 0))
    ch = channel_embedding(store, channel, timestamps, mask, cfg)
    return mixture_attention(store, encoder_prefix(channel), h_u, ch, mask, cfg)


def route(is_uniform, available=(INTERVAL, CONTEXT)):
    """Channel for a sequence: interval when uniform, context otherwise."""
    if len(available) == 1:
        return available[0]
    if is_uniform is None:
        log.warning("no uniformity label; routing to the context channel")
        return CONTEXT
    return INTERVAL if is_uniform else CONTEXT


def encode_sequence(store, items, timestamps, mask, is_uniform, cfg, available=(INTERVAL, CONTEXT)):
    channel = route(is_uniform, available)
    return channel, encode(store, channel, items, timestamps, mask, cfg)


def score_candidates(q_last, candidates, t_next, item_table):
    """scores[b, c] = q_last[b] . [m_{cand[b, c]} || t_next[b]].

    Evaluated as the item half dot m plus the time half dot t_next; the
    second term is shared by every candidate of a row.
    """
    cand = np.asarray(candidates, dtype=np.int64)
    d = item_table.shape[-1]
    m = embedding(item_table, cand, cand != 0)
    q_item = q_last[..., :d]
    q_time = q_last[..., d:]
    item_part = matmul(m, q_item.reshape(*q_item.shape, 1)).reshape(*cand.shape)
    time_part = (q_time * t_next).sum(axis=-1, keepdims=True)
    return item_part + time_part
