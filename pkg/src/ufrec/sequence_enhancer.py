"""Non-uniform subsequences of uniform sequences and the alignment loss."""

import math
from dataclasses import dataclass

import numpy as np

from .engine import matmul, mul, relu, square


@dataclass
class AugmentedPair:
    items: np.ndarray          # original (unpadded)
    timestamps: np.ndarray
    derived_items: np.ndarray
    derived_timestamps: np.ndarray
    index: np.ndarray          # strictly increasing positions into the original


def generate_subsequence(items, timestamps, less_frequent, m, rng):
    """Keep every less-frequent item; top up with sampled frequent ones to reach ``m``.

    ``less_frequent`` is a boolean array indexed by item id. Padding (id 0)
    is ignored. Order and timestamps of the kept interactions are preserved.
    """
    items = np.asarray(items, dtype=np.int64)
    timestamps = np.asarray(timestamps, dtype=np.int64)
    real = np.nonzero(items != 0)[0]
    if len(real) == 0:
        raise ValueError("cannot derive a subsequence from an all-padding sequence")
    if m < 1:
        raise ValueError("m must be >= 1")
    items, timestamps = items[real], timestamps[real]
    low = np.asarray(less_frequent, dtype=bool)[items]
    keep = np.nonzero(low)[0]
    short = m - len(keep)
    if short > 0:
        pool = np.nonzero(~low)[0]
        take = rng.choice(pool, size=min(short, len(pool)), replace=False) if len(pool) else pool
        keep = np.sort(np.concatenate([keep, take]))
    keep = keep.astype(np.int64)
    return AugmentedPair(items, timestamps, items[keep], timestamps[keep], keep)


def weight_sequence(e, e_b, e_all, v_u, v_min, v_max):
    """w_s = sin(pi/2 (e - e_b)/e_all + pi/2 (V_max - V_u)/(V_max - V_min))."""
    term = 1.0 if v_max == v_min else (v_max - v_u) / (v_max - v_min)
    return math.sin(math.pi / 2 * (e - e_b) / e_all + math.pi / 2 * term)


def generator(w, b, x):
    """G_theta: one ReLU feed-forward layer 2d -> 2d."""
    return relu(matmul(x, w) + b)


def loss_sequence(q_u, q_hat, w_theta, b_theta, weights, mask=None):
    """mean over pairs of w_s * ||q_u - G_theta(q_hat)||^2.

    ``q_u``/``q_hat`` are (n, 2d) encodings at the prediction site, or
    (n, N, 2d) for the per-position variant, averaged over ``mask``.
    """
    residual = q_u - generator(w_theta, b_theta, q_hat)
    sq = square(residual).sum(axis=-1)
    if sq.ndim == 2:
        mask = np.ones(sq.shape) if mask is None else np.asarray(mask, dtype=np.float64)
        sq = mul(sq, mask / np.maximum(mask.sum(axis=-1, keepdims=True), 1.0)).sum(axis=-1)
    return mul(sq, np.asarray(weights, dtype=np.float64)).mean()
