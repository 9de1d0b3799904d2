"""Hot loops with a numba path and a pure-numpy path.

Each kernel ``foo`` is dispatched to ``foo_numba`` or ``foo_numpy`` according
to ``ufrec._accel.USE_NUMBA``. Both variants are public so the benchmark and
the tests can exercise them side by side.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# scatter-add of rows (embedding backward)
# ---------------------------------------------------------------------------


def scatter_add_rows_numpy(dst, idx, src):
    np.add.at(dst, idx, src)
    return dst


@njit
def _scatter_add_rows_jit(dst, idx, src):
    n, d = src.shape
    for r in range(n):
        row = idx[r]
        for c in range(d):
            dst[row, c] += src[r, c]
    return dst


def scatter_add_rows_numba(dst, idx, src):
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    src = np.ascontiguousarray(src, dtype=np.float64)
    return _scatter_add_rows_jit(dst, idx, src)


# ---------------------------------------------------------------------------
# k-core fixpoint over a bipartite multigraph
# ---------------------------------------------------------------------------


def kcore_keep_numpy(users, items, n_users, n_items, k_user, k_item):
    keep = np.ones(len(users), dtype=bool)
    while True:
        ucount = np.bincount(users[keep], minlength=n_users)
        keep_next = keep & (ucount[users] >= k_user)
        icount = np.bincount(items[keep_next], minlength=n_items)
        keep_next &= icount[items] >= k_item
        if keep_next.sum() == keep.sum():
            return keep_next
        keep = keep_next


@njit
def _kcore_keep_jit(users, items, n_users, n_items, k_user, k_item):
    n = users.shape[0]
    keep = np.ones(n, dtype=np.bool_)
    ucount = np.zeros(n_users, dtype=np.int64)
    icount = np.zeros(n_items, dtype=np.int64)
    for r in range(n):
        ucount[users[r]] += 1
        icount[items[r]] += 1
    changed = True
    while changed:
        changed = False
        for r in range(n):
            if keep[r] and (ucount[users[r]] < k_user or icount[items[r]] < k_item):
                keep[r] = False
                ucount[users[r]] -= 1
                icount[items[r]] -= 1
                changed = True
    return keep


def kcore_keep_numba(users, items, n_users, n_items, k_user, k_item):
    return _kcore_keep_jit(np.ascontiguousarray(users, dtype=np.int64),
                           np.ascontiguousarray(items, dtype=np.int64),
                           int(n_users), int(n_items), int(k_user), int(k_item))


# ---------------------------------------------------------------------------
# ordered co-occurring pairs with absolute time gaps
# ---------------------------------------------------------------------------


def cooccurrence_pairs_numpy(indptr, items, times):
    """All ordered pairs (i, j), i != j, that share a user, with |t_i - t_j|.

    ``items``/``times`` hold each user's distinct items (first occurrence) in
    CSR layout given by ``indptr``.
    """
    left, right, gaps = [], [], []
    for u in range(len(indptr) - 1):
        it = items[indptr[u]:indptr[u + 1]]
        ts = times[indptr[u]:indptr[u + 1]]
        n = len(it)
        if n < 2:
            continue
        a, b = np.nonzero(~np.eye(n, dtype=bool))
        left.append(it[a])
        right.append(it[b])
        gaps.append(np.abs(ts[a] - ts[b]))
    if not left:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), np.zeros(0, dtype=np.float64)
    return (np.concatenate(left).astype(np.int64), np.concatenate(right).astype(np.int64),
            np.concatenate(gaps).astype(np.float64))


@njit
def _cooccurrence_pairs_jit(indptr, items, times):
    total = 0
    for u in range(indptr.shape[0] - 1):
        n = indptr[u + 1] - indptr[u]
        total += n * (n - 1)
    left = np.empty(total, dtype=np.int64)
    right = np.empty(total, dtype=np.int64)
    gaps = np.empty(total, dtype=np.float64)
    pos = 0
    for u in range(indptr.shape[0] - 1):
        lo = indptr[u]
        hi = indptr[u + 1]
        for a in range(lo, hi):
            for b in range(lo, hi):
                if a == b:
                    continue
                left[pos] = items[a]
                right[pos] = items[b]
                gaps[pos] = abs(times[a] - times[b])
                pos += 1
    return left, right, gaps


def cooccurrence_pairs_numba(indptr, items, times):
    return _cooccurrence_pairs_jit(np.ascontiguousarray(indptr, dtype=np.int64),
                                   np.ascontiguousarray(items, dtype=np.int64),
                                   np.ascontiguousarray(times, dtype=np.float64))


# ---------------------------------------------------------------------------
# pessimistic rank of the positive among candidates
# ---------------------------------------------------------------------------


def rank_of_positive_numpy(pos_scores, cand_scores, valid):
    """1 + number of valid candidates scoring >= the positive (ties rank below)."""
    beats = (cand_scores >= pos_scores[:, None]) & valid
    return 1 + beats.sum(axis=1).astype(np.int64)


@njit
def _rank_of_positive_jit(pos_scores, cand_scores, valid):
    n, c = cand_scores.shape
    out = np.empty(n, dtype=np.int64)
    for r in range(n):
        cnt = 1
        p = pos_scores[r]
        for j in range(c):
            if valid[r, j] and cand_scores[r, j] >= p:
                cnt += 1
        out[r] = cnt
    return out


def rank_of_positive_numba(pos_scores, cand_scores, valid):
    return _rank_of_positive_jit(np.ascontiguousarray(pos_scores, dtype=np.float64),
                                 np.ascontiguousarray(cand_scores, dtype=np.float64),
                                 np.ascontiguousarray(valid, dtype=np.bool_))


if USE_NUMBA:
    scatter_add_rows = scatter_add_rows_numba
    kcore_keep = kcore_keep_numba
    cooccurrence_pairs = cooccurrence_pairs_numba
    rank_of_positive = rank_of_positive_numba
else:
    scatter_add_rows = scatter_add_rows_numpy
    kcore_keep = kcore_keep_numpy
    cooccurrence_pairs = cooccurrence_pairs_numpy
    rank_of_positive = rank_of_positive_numpy
