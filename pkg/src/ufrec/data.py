"""Interaction logs -> filtered chronological sequences -> leave-one-out splits."""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

PAD = 0


class ParseError(ValueError):
    def __init__(self, path, lineno, line, reason):
        super().__init__(f"{path}:{lineno}: {reason}: {line!r}")
        self.path = path
        self.lineno = lineno


@dataclass(frozen=True)
class RawInteraction:
    user_id: str
    item_id: str
    timestamp: int

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise ValueError("user_id and item_id must be non-empty")
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")


@dataclass
class UserSequence:
    user: int
    items: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if len(self.items) != len(self.timestamps):
            raise ValueError("items and timestamps differ in length")

    def __len__(self):
        return len(self.items)


@dataclass
class IdMaps:
    users: list          # dense -> raw, index = dense id
    items: list          # dense -> raw, items[0] is the padding placeholder
    user_index: dict = field(default_factory=dict)
    item_index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.user_index:
            self.user_index = {raw: i for i, raw in enumerate(self.users)}
        if not self.item_index:
            self.item_index = {raw: i for i, raw in enumerate(self.items) if i != PAD}

    @property
    def num_items(self):
        return len(self.items) - 1


@dataclass
class Holdout:
    item: int
    timestamp: int


@dataclass
class SplitDataset:
    train: dict          # user -> UserSequence (prefix)
    validation: dict     # user -> Holdout
    test: dict           # user -> Holdout
    num_items: int
    order: str = "valid_last"

    @property
    def users(self):
        return sorted(self.train)

    def history(self, user, target="test"):
        """Items/timestamps observed before ``target`` for ``user``.

        With the "valid_last" order the validation item comes last, so its history
        includes the test interaction; the "test_last" order is mirrored.
        """
        seq = self.train[user]
        later = {"valid_last": "valid", "test_last": "test"}[self.order]
        if target == later:
            earlier = self.test[user] if target == "valid" else self.validation[user]
            items = np.append(seq.items, earlier.item)
            times = np.append(seq.timestamps, earlier.timestamp)
            return items, times
        return seq.items, seq.timestamps

    def holdout(self, user, target="test"):
        return self.test[user] if target == "test" else self.validation[user]

    def full_history(self, user):
        return np.concatenate([self.train[user].items,
                               [self.validation[user].item, self.test[user].item]])


def load_interactions(path):
    """Parse ``user<TAB>item<TAB>timestamp`` lines in file order."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.rstrip("\r\n")
            if not text.strip():
                continue
            parts = text.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, text, "expected 3 tab-separated fields")
            user, item, ts = parts
            try:
                stamp = int(ts)
            except ValueError:
                raise ParseError(path, lineno, text, "timestamp is not an integer") from None
            try:
                out.append(RawInteraction(user, item, stamp))
            except ValueError as exc:
                raise ParseError(path, lineno, text, str(exc)) from None
    return out


def write_interactions(path, interactions):
    with open(path, "w", encoding="utf-8") as fh:
        for r in interactions:
            fh.write(f"{r.user_id}\t{r.item_id}\t{r.timestamp}\n")


def k_core_filter(interactions, k_user, k_item):
    """Drop users/items below the thresholds until nothing changes."""
    if k_user < 1 or k_item < 1:
        raise ValueError("k_user and k_item must be >= 1")
    if not interactions:
        return []
    _, users = np.unique([r.user_id for r in interactions], return_inverse=True)
    _, items = np.unique([r.item_id for r in interactions], return_inverse=True)
    keep = kernels.kcore_keep(users.astype(np.int64), items.astype(np.int64),
                              users.max() + 1, items.max() + 1, k_user, k_item)
    return [r for r, k in zip(interactions, keep) if k]


def build_sequences(interactions):
    """One chronological sequence per user; dense ids by first appearance.

    Sorting is stable, so equal timestamps keep their input order.
    """
    if not interactions:
        raise ValueError("no interactions")
    users, items = [], [PAD]
    uidx, iidx = {}, {}
    per_user = {}
    for r in interactions:
        if r.user_id not in uidx:
            uidx[r.user_id] = len(users)
            users.append(r.user_id)
        if r.item_id not in iidx:
            iidx[r.item_id] = len(items)
            items.append(r.item_id)
        per_user.setdefault(uidx[r.user_id], []).append((iidx[r.item_id], r.timestamp))
    seqs = []
    for u in range(len(users)):
        rows = per_user[u]
        it = np.array([a for a, _ in rows], dtype=np.int64)
        ts = np.array([b for _, b in rows], dtype=np.int64)
        order = np.argsort(ts, kind="stable")
        seqs.append(UserSequence(u, it[order], ts[order]))
    maps = IdMaps(users=users, items=items, user_index=uidx, item_index=iidx)
    return seqs, maps


def split_leave_one_out(sequences, num_items=None, order="valid_last"):
    """Per user: last two interactions held out, the rest is the train prefix.

    ``order="valid_last"`` sends the last interaction to validation and the
    penultimate to test; ``"test_last"`` swaps them. Users with fewer than
    three interactions are skipped.
    """
    if order not in ("valid_last", "test_last"):
        raise ValueError(f"unknown split order {order!r}")
    train, valid, test = {}, {}, {}
    for s in sequences:
        if len(s) < 3:
            log.warning("user %d has %d interactions (< 3); excluded from split", s.user, len(s))
            continue
        last = Holdout(int(s.items[-1]), int(s.timestamps[-1]))
        penult = Holdout(int(s.items[-2]), int(s.timestamps[-2]))
        train[s.user] = UserSequence(s.user, s.items[:-2], s.timestamps[:-2])
        if order == "valid_last":
            valid[s.user], test[s.user] = last, penult
        else:
            valid[s.user], test[s.user] = penult, last
    if num_items is None:
        num_items = max((int(s.items.max()) for s in sequences), default=0)
    return SplitDataset(train, valid, test, int(num_items), order)


def pad_truncate(items, timestamps, n):
    """Left-pad with id 0 (or keep the last ``n``); returns items, times, mask."""
    if n < 1:
        raise ValueError("n must be >= 1")
    items = np.asarray(items, dtype=np.int64)[-n:]
    timestamps = np.asarray(timestamps, dtype=np.int64)[-n:]
    k = len(items)
    out_i = np.zeros(n, dtype=np.int64)
    out_t = np.zeros(n, dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    if k:
        out_i[n - k:] = items
        out_t[n - k:] = timestamps
        mask[n - k:] = True
    return out_i, out_t, mask


def sample_negatives(history, num_items, n, rng):
    """``n`` distinct items from 1..num_items that are absent from ``history``."""
    pool = np.setdiff1d(np.arange(1, num_items + 1, dtype=np.int64),
                        np.asarray(history, dtype=np.int64), assume_unique=False)
    if len(pool) < n:
        raise ValueError(f"only {len(pool)} candidate negatives for a request of {n}")
    return rng.choice(pool, size=n, replace=False).astype(np.int64)


def split_to_json(split, maps=None):
    """Split manifest: ``{user: {train, train_ts, test, test_ts, valid, valid_ts}}``."""
    users = {}
    for u in split.users:
        seq = split.train[u]
        users[str(u)] = {
            "train": seq.items.tolist(),
            "train_ts": seq.timestamps.tolist(),
            "test": split.test[u].item,
            "test_ts": split.test[u].timestamp,
            "valid": split.validation[u].item,
            "valid_ts": split.validation[u].timestamp,
        }
    return {"num_items": split.num_items, "order": split.order, "users": users}


def split_from_json(doc):
    train, valid, test = {}, {}, {}
    for key, rec in doc["users"].items():
        u = int(key)
        train[u] = UserSequence(u, rec["train"], rec["train_ts"])
        test[u] = Holdout(int(rec["test"]), int(rec["test_ts"]))
        valid[u] = Holdout(int(rec["valid"]), int(rec["valid_ts"]))
    return SplitDataset(train, valid, test, int(doc["num_items"]), doc.get("order", "valid_last"))


def save_split(path, split):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split_to_json(split), fh)


def load_split(path):
    with open(path, encoding="utf-8") as fh:
        return split_from_json(json.load(fh))


def save_id_maps(user_path, item_path, maps):
    with open(user_path, "w", encoding="utf-8") as fh:
        for i, raw in enumerate(maps.users):
            fh.write(f"{i}\t{raw}\n")
    with open(item_path, "w", encoding="utf-8") as fh:
        for i, raw in enumerate(maps.items):
            if i != PAD:
                fh.write(f"{i}\t{raw}\n")


def load_id_maps(user_path, item_path):
    def read(path):
        rows = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                k, v = line.rstrip("\n").split("\t")
                rows[int(k)] = v
        return rows

    u = read(user_path)
    i = read(item_path)
    users = [u[k] for k in range(len(u))]
    items = [PAD] + [i[k] for k in range(1, len(i) + 1)]
    return IdMaps(users=users, items=items)
