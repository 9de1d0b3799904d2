"""Model state: parameters, transfer-net snapshot, routing and scoring."""

import numpy as np

from .config import TrainConfig
from .data import pad_truncate
from .engine import ParameterStore, Tensor, load_arrays, matmul, no_grad, save_arrays
from .time_encoder import (
    CONTEXT,
    INTERVAL,
    encode,
    init_encoder_params,
    init_time_params,
    next_time_embedding,
    route,
    score_candidates,
)


def init_store(cfg, num_items, seed):
    """Fresh parameters: U(-1/sqrt(d), 1/sqrt(d)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    d = cfg.d
    bound = 1.0 / np.sqrt(d)
    store = ParameterStore()
    emb = rng.uniform(-bound, bound, size=(num_items + 1, d))
    emb[0] = 0.0
    store.add("item_emb", emb)
    init_time_params(store, cfg, rng)
    init_encoder_params(store, "enc_intv", cfg, rng)
    init_encoder_params(store, "enc_ctx", cfg, rng)
    store.add("gen_theta.w", rng.uniform(-bound, bound, size=(2 * d, 2 * d)))
    store.add("gen_theta.b", np.zeros(2 * d))
    store.add("gen_phi.w", rng.uniform(-bound, bound, size=(2 * d, d)))
    store.add("gen_phi.b", np.zeros(d))
    return store


def active_channels(cfg):
    if cfg.force_channel:
        return (cfg.force_channel,)
    if not cfg.time_multi:
        return (INTERVAL,)
    return (INTERVAL, CONTEXT)


class UFRecModel:
    def __init__(self, cfg, num_items, store=None, frozen=None, partition=None):
        self.cfg = cfg
        self.num_items = int(num_items)
        self.store = store if store is not None else init_store(cfg, num_items, cfg.seed)
        self.frozen = frozen        # {"w": array, "b": array} once captured
        self.partition = partition
        self.epoch = 0

    @property
    def channels(self):
        return active_channels(self.cfg)

    def snapshot_transfer(self):
        self.frozen = {"w": self.store["gen_phi.w"].data.copy(),
                       "b": self.store["gen_phi.b"].data.copy()}

    def ema_transfer(self, decay):
        for k, name in (("w", "gen_phi.w"), ("b", "gen_phi.b")):
            self.frozen[k] = decay * self.frozen[k] + (1.0 - decay) * self.store[name].data

    def is_uniform(self, user, partition=None):
        part = partition or self.partition
        if part is None or not part.sequences.has(user):
            return None
        return part.sequences.is_uniform(user)

    def channel_for(self, user, partition=None):
        return route(self.is_uniform(user, partition), self.channels)

    # -- inference ---------------------------------------------------------

    def _windows(self, users, split, target):
        n = self.cfg.max_len
        items = np.zeros((len(users), n), dtype=np.int64)
        times = np.zeros((len(users), n), dtype=np.int64)
        mask = np.zeros((len(users), n), dtype=bool)
        tgt_t = np.zeros(len(users), dtype=np.int64)
        for r, u in enumerate(users):
            it, ts = split.history(u, target)
            items[r], times[r], mask[r] = pad_truncate(it, ts, n)
            tgt_t[r] = split.holdout(u, target).timestamp
        return items, times, mask, tgt_t

    def encode_users(self, users, split, target="test", channel=None):
        """Full encodings (B, N, 2d) and the routed channel per user."""
        users = list(users)
        items, times, mask, _ = self._windows(users, split, target)
        chans = [channel or self.channel_for(u) for u in users]
        out = np.zeros((len(users), self.cfg.max_len, 2 * self.cfg.d))
        with no_grad():
            for ch in set(chans):
                rows = np.array([i for i, c in enumerate(chans) if c == ch])
                out[rows] = encode(self.store, ch, items[rows], times[rows], mask[rows], self.cfg).data
        return out, chans

    def _last_and_time(self, users, split, target):
        items, times, mask, tgt_t = self._windows(users, split, target)
        chans = [self.channel_for(u) for u in users]
        q_last = np.zeros((len(users), 2 * self.cfg.d))
        t_next = np.zeros((len(users), self.cfg.d))
        with no_grad():
            for ch in set(chans):
                rows = np.array([i for i, c in enumerate(chans) if c == ch])
                q = encode(self.store, ch, items[rows], times[rows], mask[rows], self.cfg)
                q_last[rows] = q.data[:, -1]
                t_next[rows] = next_time_embedding(self.store, ch, times[rows, -1], tgt_t[rows],
                                                   mask[rows, -1], self.cfg).data
        return q_last, t_next

    def score_candidates(self, users, split, target, candidates):
        """(B, C) scores for explicit candidate ids."""
        q_last, t_next = self._last_and_time(list(users), split, target)
        with no_grad():
            return score_candidates(Tensor(q_last), candidates, Tensor(t_next), self.store["item_emb"]).data

    def score_all(self, users, split, target):
        """(B, num_items + 1) scores over the whole catalogue (column 0 is padding)."""
        q_last, t_next = self._last_and_time(list(users), split, target)
        d = self.cfg.d
        with no_grad():
            item_part = matmul(Tensor(q_last[:, :d]), Tensor(self.store["item_emb"].data.T)).data
        time_part = (q_last[:, d:] * t_next).sum(axis=1, keepdims=True)
        return item_part + time_part

    # -- persistence -------------------------------------------------------

    def state_arrays(self):
        arrays = dict(self.store.state_arrays())
        if self.frozen is not None:
            arrays["frozen/w"] = self.frozen["w"]
            arrays["frozen/b"] = self.frozen["b"]
        return arrays

    def save(self, path, extra=None):
        meta = {"kind": "ufrec-model", "config": self.cfg.to_dict(), "num_items": self.num_items,
                "epoch": self.epoch}
        if extra:
            meta.update(extra)
        save_arrays(path, self.state_arrays(), step=self.store.step, seed=self.cfg.seed, meta=meta)

    @classmethod
    def load(cls, path, partition=None):
        arrays, header = load_arrays(path)
        meta = header["meta"]
        cfg = TrainConfig(**meta["config"]).validate()
        store = ParameterStore()
        store.load_state_arrays({k: v for k, v in arrays.items() if not k.startswith("frozen/")},
                                header["step"])
        frozen = None
        if "frozen/w" in arrays:
            frozen = {"w": arrays["frozen/w"], "b": arrays["frozen/b"]}
        model = cls(cfg, meta["num_items"], store=store, frozen=frozen, partition=partition)
        model.epoch = meta.get("epoch", 0)
        return model

    def copy(self):
        frozen = None if self.frozen is None else {k: v.copy() for k, v in self.frozen.items()}
        m = UFRecModel(self.cfg, self.num_items, store=self.store.copy(), frozen=frozen,
                       partition=self.partition)
        m.epoch = self.epoch
        return m
