import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from ufrec import trainer
from ufrec.engine import Tensor, adam_step, backward
from ufrec.item_enhancer import build_cooccurrence_stats, g_time
from ufrec.model import UFRecModel
from ufrec.trainer import (
    TrainingError,
    batch_loss,
    fit,
    make_plan,
    prepare_training_data,
    recommendation_loss,
    train_epoch,
)


def setup(split, cfg):
    data = prepare_training_data(split, cfg)
    return UFRecModel(cfg, split.num_items, partition=data.partition), data


def test_ce_uniform_logits():
    loss = recommendation_loss(Tensor(np.zeros((4, 101))))
    assert abs(float(loss.data) - math.log(101)) <= 1e-12


def test_ce_limit_and_permutation(rng):
    x = rng.normal(size=(3, 11))
    x[:, 0] = 500.0
    assert float(recommendation_loss(Tensor(x)).data) < 1e-100
    y = rng.normal(size=(3, 11))
    perm = np.r_[0, 1 + rng.permutation(10)]
    assert abs(float(recommendation_loss(Tensor(y)).data) - float(recommendation_loss(Tensor(y[:, perm])).data)) < 1e-12


def test_ce_per_position_averaging():
    logits = np.zeros((2, 3, 5))
    logits[0, 2, 0] = 100.0
    valid = np.array([[False, True, True], [False, False, False]])
    # sequence 0: positions 1 (ln 5) and 2 (~0) -> mean ln5/2; sequence 1 has none
    got = float(recommendation_loss(Tensor(logits), valid).data)
    assert abs(got - math.log(5) / 2) < 1e-12


def test_gates_before_enhancement(tiny_split, tiny_cfg):
    cfg = tiny_cfg.replace(e_b=3, e_t=6)
    model, data = setup(tiny_split, cfg)
    plan = make_plan(model, data, tiny_split.users, 1, np.random.default_rng(0))
    assert not any(plan.active.values())
    total, parts = batch_loss(model.store, model.frozen, plan, cfg)
    assert set(parts) == {"r"}
    backward(total)
    for name in ("gen_theta.w", "gen_theta.b", "gen_phi.w", "gen_phi.b"):
        g = model.store[name].grad
        assert g is None or not g.any()
    train_epoch(model, data, 4)
    assert model.frozen is None


def test_all_terms_active_after_thresholds(tiny_split, tiny_cfg):
    model, data = setup(tiny_split, tiny_cfg)
    train_epoch(model, data, 0)
    train_epoch(model, data, 1)
    assert model.frozen is not None
    plan = make_plan(model, data, tiny_split.users, 3, np.random.default_rng(0))
    assert plan.active == {"s": True, "f": True, "l": True}
    _, parts = batch_loss(model.store, model.frozen, plan, tiny_cfg)
    assert set(parts) == {"r", "s", "f", "l"}


def test_ablation_switches(tiny_split, tiny_cfg):
    cfg = tiny_cfg.replace(seq_enh=False, item_enh=False)
    model, data = setup(tiny_split, cfg)
    for e in range(3):
        assert train_epoch(model, data, e)["s"] == 0.0
    assert model.frozen is None
    plan = make_plan(model, data, tiny_split.users, 2, np.random.default_rng(0))
    assert not any(plan.active.values())


def test_time_only_interval_channel(tiny_split, tiny_cfg):
    model, _ = setup(tiny_split, tiny_cfg.replace(time_multi=False))
    assert model.channels == ("interval",)
    assert {model.channel_for(u) for u in tiny_split.users} == {"interval"}


def test_pop_sim_off_scores_by_time_only(tiny_split, tiny_cfg):
    data = prepare_training_data(tiny_split, tiny_cfg.replace(pop_sim=False))
    stats = build_cooccurrence_stats(tiny_split.train, tiny_split.num_items)
    for c, pairs in data.candidates.as_dict().items():
        for j, s in pairs:
            assert s == pytest.approx(float(g_time(stats.pair(c, j)[0])), abs=1e-12)


def test_repeated_batch_loss_decreases(tiny_split, tiny_cfg):
    model, data = setup(tiny_split, tiny_cfg)
    model.snapshot_transfer()
    plan = make_plan(model, data, tiny_split.users, 3, np.random.default_rng(0))
    losses = []
    for _ in range(50):
        model.store.zero_grad()
        total, _ = batch_loss(model.store, model.frozen, plan, tiny_cfg)
        losses.append(float(total.data))
        backward(total)
        adam_step(model.store, 0.01)
    assert losses[-1] < 0.5 * losses[0]


def test_non_finite_aborts_with_diagnostics(tiny_split, tiny_cfg):
    model, data = setup(tiny_split, tiny_cfg)
    model.store["item_emb"].data[1:] = np.nan
    with pytest.raises(TrainingError, match="epoch 0, batch 0"):
        train_epoch(model, data, 0)


def test_snapshot_frozen_and_padding_row_untouched(tiny_split, tiny_cfg):
    model, data = setup(tiny_split, tiny_cfg.replace(e_all=6))
    snaps = []
    for e in range(6):
        train_epoch(model, data, e)
        if model.frozen is not None:
            snaps.append({k: v.copy() for k, v in model.frozen.items()})
    assert len(snaps) == 5
    for s in snaps[1:]:
        assert_array_equal(s["w"], snaps[0]["w"])
        assert_array_equal(s["b"], snaps[0]["b"])
    assert not model.store["item_emb"].data[0].any()
    # the live transfer net keeps learning
    assert not np.array_equal(model.store["gen_phi.w"].data, snaps[0]["w"])


def test_ema_target_moves(tiny_split, tiny_cfg):
    model, data = setup(tiny_split, tiny_cfg.replace(frozen_target="ema"))
    for e in range(4):
        train_epoch(model, data, e)
        if e == 1:
            first = model.frozen["w"].copy()
    assert not np.array_equal(first, model.frozen["w"])


def test_early_stopping_rule(tiny_split, tiny_cfg, monkeypatch):
    cfg = tiny_cfg.replace(e_all=200, patience=20, e_t=5)
    model, data = setup(tiny_split, cfg)
    monkeypatch.setattr(trainer, "train_epoch", lambda m, d, e: {"r": 1.0, "s": 0.0, "f": 0.0, "l": 0.0})
    scores = iter([0.01 * e for e in range(31)] + [0.0] * 200)
    monkeypatch.setattr(trainer, "validation_score", lambda m, d: next(scores))
    _, rows = fit(model, data)
    assert rows[-1]["epoch"] == 50


def test_fit_determinism_and_checkpoint_round_trip(tmp_path, tiny_split, tiny_cfg):
    cfg = tiny_cfg.replace(e_all=4)
    runs = []
    for k in range(2):
        model, data = setup(tiny_split, cfg)
        best, rows = fit(model, data)
        best.save(tmp_path / f"m{k}.ckpt")
        runs.append([{c: r[c] for c in r if c != "elapsed_s"} for r in rows])
    assert runs[0] == runs[1]
    assert (tmp_path / "m0.ckpt").read_bytes() == (tmp_path / "m1.ckpt").read_bytes()
    back = UFRecModel.load(tmp_path / "m0.ckpt", partition=best.partition)
    users = tiny_split.users
    cand = np.tile(np.arange(1, 6), (len(users), 1))
    assert_array_equal(back.score_candidates(users, tiny_split, "test", cand),
                       best.score_candidates(users, tiny_split, "test", cand))


def test_best_so_far_validation_improves(tmp_path):
    from ufrec.config import TrainConfig
    from ufrec.data import build_sequences, split_leave_one_out
    from ufrec.synth import generate

    rows, _ = generate(num_users=50, num_items=100, min_len=10, max_len=20, seed=3)
    split = split_leave_one_out(build_sequences(rows)[0])
    cfg = TrainConfig(d=16, max_len=15, e_all=10, patience=10)
    model, data = setup(split, cfg)
    _, log = fit(model, data)
    best = np.maximum.accumulate([r["val_ndcg10"] for r in log])
    assert best[-1] > best[0]
