"""Synthetic interaction logs with planted uniformity and frequency structure.

Items are split into a *head* that forms one deterministic successor cycle
and a *tail* that is only reached by random excursions. Regular users keep
near-constant gaps and rarely leave the cycle; irregular users draw
heavy-tailed gaps, jump around the cycle and wander into the tail more
often. Head items end up frequent and predictable, tail items rare and
unpredictable, and regular users easier than irregular ones.
"""

from dataclasses import dataclass

import numpy as np

from .data import RawInteraction


@dataclass
class SynthConfig:
    num_users: int = 300
    num_items: int = 200
    min_len: int = 20
    max_len: int = 40
    uniform_fraction: float = 0.5
    head_fraction: float = 0.5
    tail_prob_uniform: float = 0.05
    tail_prob_nonuniform: float = 0.3
    drift_prob_uniform: float = 0.02
    drift_prob_nonuniform: float = 0.3
    base_interval: int = 86400
    jitter: float = 0.1
    sigma_nonuniform: float = 1.5
    start_time: int = 1_420_070_400
    seed: int = 0


def generate(cfg=None, **overrides):
    """Return ``(interactions, regular_users)``; users are ``u<k>``, items ``i<k>``."""
    cfg = cfg or SynthConfig()
    if overrides:
        cfg = SynthConfig(**{**cfg.__dict__, **overrides})
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(cfg.num_items)
    n_head = max(2, int(round(cfg.head_fraction * cfg.num_items)))
    head = perm[:n_head]
    tail = perm[n_head:]
    regular = set(rng.permutation(cfg.num_users)[: int(round(cfg.uniform_fraction * cfg.num_users))].tolist())

    rows = []
    for u in range(cfg.num_users):
        is_regular = u in regular
        p_tail = cfg.tail_prob_uniform if is_regular else cfg.tail_prob_nonuniform
        p_drift = cfg.drift_prob_uniform if is_regular else cfg.drift_prob_nonuniform
        if len(tail) == 0:
            p_tail = 0.0
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        if is_regular:
            gaps = cfg.base_interval * (1.0 + cfg.jitter * rng.uniform(-1, 1, size=length))
        else:
            gaps = cfg.base_interval * rng.lognormal(0.0, cfg.sigma_nonuniform, size=length)
        t = cfg.start_time + int(rng.integers(0, 30 * 86400))
        cursor = int(rng.integers(n_head))
        for step in range(length):
            r = rng.random()
            if step > 0 and r < p_tail:
                item = int(tail[rng.integers(len(tail))])
            elif step > 0 and r < p_tail + p_drift:
                cursor = int(rng.integers(n_head))
                item = int(head[cursor])
            else:
                if step > 0:
                    cursor = (cursor + 1) % n_head
                item = int(head[cursor])
            rows.append(RawInteraction(f"u{u}", f"i{item}", int(t)))
            t += max(1, int(gaps[step]))
    return rows, {f"u{u}" for u in regular}
