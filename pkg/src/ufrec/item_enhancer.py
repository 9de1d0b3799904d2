"""Neighbor-based enhancement of item embeddings.

Candidate neighbors of a center item are the items it co-occurs with in a
user's training sequence, ranked by

    s = g(T) + phi(T, H) + phi(T, S)
    g(T) = 1 / (1 + ln(1 + T))
    phi(T, x) = (T + theta) * exp(-(T + theta) / (gamma * x))

with T the mean first-occurrence gap in days, H the min-max normalized
popularity of the neighbor and S the Jaccard similarity of user sets.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .engine import Tensor, concat, embedding, masked_softmax, matmul, mul, square

DAY = 86400.0


@dataclass
class CooccurrenceStats:
    left: np.ndarray          # center ids of ordered pairs
    right: np.ndarray         # neighbor ids
    gap_days: np.ndarray      # T per pair
    similarity: np.ndarray    # S per pair (Jaccard)
    popularity: np.ndarray    # H per item id (slot 0 unused)
    num_items: int

    def pair(self, i, j):
        hit = np.nonzero((self.left == i) & (self.right == j))[0]
        if not len(hit):
            return None
        k = hit[0]
        return float(self.gap_days[k]), float(self.popularity[j]), float(self.similarity[k])


def build_cooccurrence_stats(train, num_items):
    """Pairwise T and S plus per-item H from the train prefixes."""
    counts = np.zeros(num_items + 1, dtype=np.float64)
    user_counts = np.zeros(num_items + 1, dtype=np.float64)
    indptr = [0]
    flat_items, flat_times = [], []
    for u in sorted(train):
        seq = train[u]
        if len(seq) == 0:
            indptr.append(indptr[-1])
            continue
        np.add.at(counts, seq.items, 1.0)
        uniq, first = np.unique(seq.items, return_index=True)
        keep = uniq != 0
        uniq, first = uniq[keep], first[keep]
        user_counts[uniq] += 1.0
        flat_items.append(uniq)
        flat_times.append(seq.timestamps[first].astype(np.float64))
        indptr.append(indptr[-1] + len(uniq))
    items = np.concatenate(flat_items) if flat_items else np.zeros(0, np.int64)
    times = np.concatenate(flat_times) if flat_times else np.zeros(0)
    left, right, gaps = kernels.cooccurrence_pairs(np.asarray(indptr, np.int64), items, times)

    key = left * (num_items + 1) + right
    uniq_key, inv, shared = np.unique(key, return_inverse=True, return_counts=True)
    gap_sum = np.bincount(inv, weights=gaps, minlength=len(uniq_key))
    pl = uniq_key // (num_items + 1)
    pr = uniq_key % (num_items + 1)
    t_days = gap_sum / shared / DAY
    union = user_counts[pl] + user_counts[pr] - shared
    sim = shared / union

    seen = counts[1:][counts[1:] > 0]
    pop = np.zeros(num_items + 1)
    if len(seen):
        lo, hi = seen.min(), seen.max()
        pop[1:] = (counts[1:] - lo) / (hi - lo) if hi > lo else 1.0
        pop[1:][counts[1:] == 0] = 0.0
    return CooccurrenceStats(pl.astype(np.int64), pr.astype(np.int64), t_days, sim, pop, num_items)


def g_time(t):
    return 1.0 / (1.0 + np.log1p(np.asarray(t, dtype=np.float64)))


def phi(t, x, theta, gamma):
    """(T + theta) * exp(-(T + theta) / (gamma * x)); 0 where x == 0."""
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    u = t + theta
    safe = np.where(x > 0, x, 1.0)
    val = u * np.exp(-u / (gamma * safe))
    return np.where(x > 0, val, 0.0)


def neighbor_score(t, h, s, theta, gamma, pop_sim=True):
    score = g_time(t)
    if pop_sim:
        score = score + phi(t, h, theta, gamma) + phi(t, s, theta, gamma)
    return score


def default_theta_gamma(stats, theta=None, gamma=None):
    """theta = median pair gap (days), gamma = 2 * theta unless given."""
    if theta is None:
        theta = float(np.median(stats.gap_days)) if len(stats.gap_days) else 1.0
        if theta <= 0:
            theta = 1.0
    if gamma is None:
        gamma = 2.0 * theta
    return float(theta), float(gamma)


@dataclass
class CandidateTable:
    """Top-L neighbors per center item in CSR form."""
    indptr: np.ndarray
    neighbors: np.ndarray
    scores: np.ndarray

    def get(self, item):
        lo, hi = self.indptr[item], self.indptr[item + 1]
        return list(zip(self.neighbors[lo:hi].tolist(), self.scores[lo:hi].tolist()))

    def size(self, item):
        return int(self.indptr[item + 1] - self.indptr[item])

    def as_dict(self):
        return {i: self.get(i) for i in range(len(self.indptr) - 1) if self.size(i)}


def build_candidate_sets(stats, theta, gamma, top_l=20, pop_sim=True):
    """Score every co-occurring neighbor and keep the top ``top_l`` per center."""
    h = stats.popularity[stats.right]
    sc = neighbor_score(stats.gap_days, h, stats.similarity, theta, gamma, pop_sim)
    order = np.lexsort((stats.right, -sc, stats.left))
    left, right, sc = stats.left[order], stats.right[order], sc[order]
    n = stats.num_items + 1
    starts = np.searchsorted(left, np.arange(n))
    rank = np.arange(len(left)) - starts[left] if len(left) else np.zeros(0, np.int64)
    keep = rank < top_l
    left, right, sc = left[keep], right[keep], sc[keep]
    indptr = np.concatenate([[0], np.cumsum(np.bincount(left, minlength=n))]).astype(np.int64)
    return CandidateTable(indptr, right.astype(np.int64), sc)


def save_neighbors(path, table):
    doc = {str(i): [[int(j), float(s)] for j, s in pairs] for i, pairs in table.as_dict().items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def sample_neighbors(candidates, k, rng):
    """``k`` neighbor ids: distinct when possible, with replacement otherwise.

    Returns None for an empty candidate list (enhancement skipped).
    """
    ids = np.asarray([c[0] if isinstance(c, (tuple, list)) else c for c in candidates], dtype=np.int64)
    if len(ids) == 0:
        return None
    if len(ids) >= k:
        return ids[rng.choice(len(ids), size=k, replace=False)]
    return ids[rng.integers(len(ids), size=k)]


def aggregate_neighbors(m_c, m_nb):
    """Attention pooling: returns (m_n, [m_c || m_n]).

    ``m_c`` is (..., d) and ``m_nb`` is (..., K, d).
    """
    logits = matmul(m_nb, m_c.reshape(*m_c.shape, 1)).reshape(*m_nb.shape[:-1])
    alpha = masked_softmax(logits, axis=-1)
    m_n = matmul(alpha.reshape(*alpha.shape[:-1], 1, alpha.shape[-1]), m_nb).reshape(*m_c.shape)
    return m_n, concat([m_c, m_n], axis=-1)


def _sin_schedule(arg):
    return math.sin(arg)


def weight_frequent(e, e_b, e_all, f, f_min, f_max):
    """w_i = sin(pi/2 (e - e_b)/e_all + pi/2 (F - F_min)/(F_max - F_min))."""
    term = 1.0 if f_max == f_min else (f - f_min) / (f_max - f_min)
    return _sin_schedule(math.pi / 2 * (e - e_b) / e_all + math.pi / 2 * term)


def weight_lowfreq(e, e_t, e_all):
    """eta = sin(pi/2 (e - e_t)/e_all)."""
    return _sin_schedule(math.pi / 2 * (e - e_t) / e_all)


def transfer(w, b, x):
    """Affine transfer network 2d -> d."""
    return matmul(x, w) + b


def loss_frequent(m_i, m_prime, w_phi, b_phi, weights):
    """mean_i w_i * ||m_i - G_phi(m'_i)||^2 over a (n, d) batch of frequent items."""
    diff = m_i - transfer(w_phi, b_phi, m_prime)
    per_item = square(diff).sum(axis=-1)
    return mul(per_item, np.asarray(weights, dtype=np.float64)).mean()


def loss_lowfreq(m_i, m_prime, frozen, eta):
    """mean_i eta * ||m_i - G_phi+(m'_i)||^2; ``frozen`` holds constant arrays."""
    if frozen is None:
        raise RuntimeError("transfer network snapshot has not been captured yet")
    w = Tensor(frozen["w"])
    b = Tensor(frozen["b"])
    diff = m_i - transfer(w, b, m_prime)
    return mul(square(diff).sum(axis=-1), float(eta)).mean()


def enhanced_items(item_table, centers, neighbor_ids):
    """Center embeddings (n, d) and their aggregated [m_c || m_n] (n, 2d)."""
    centers = np.asarray(centers, dtype=np.int64)
    m_c = embedding(item_table, centers)
    m_nb = embedding(item_table, np.asarray(neighbor_ids, dtype=np.int64))
    _, m_prime = aggregate_neighbors(m_c, m_nb)
    return m_c, m_prime
