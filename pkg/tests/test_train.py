import json

import numpy as np
import pytest

from c3rec.config import LossConfig
from c3rec.data import GROUP_TASK, USER_TASK, make_batches
from c3rec.model import C3Model
from c3rec.numcore import AdamState, adam_step
from c3rec.train import batch_loss, hyper_grid, train
from tests.conftest import small_config


def strip_wall_time(log):
    return [{k: v for k, v in e.items() if k != "wall_time_s"} for e in log.epochs]


def test_one_epoch_reduces_batch_loss():
    from c3rec.data import generate_synthetic, leave_one_out_split
    from c3rec.train import _interleave
    ds = generate_synthetic(100, 150, 40, seed=3)
    leave_one_out_split(ds, seed=3)
    cfg = small_config(layers=2, lr=5e-3, batch_size=8)
    model = C3Model(ds.num_users, ds.num_items, cfg)
    states = {n: AdamState.for_param(t, lr=cfg.lr) for n, t in model.params.items()}
    schedule = _interleave(list(make_batches(ds, cfg, USER_TASK, epoch=1)),
                           list(make_batches(ds, cfg, GROUP_TASK, epoch=1)),
                           cfg.task_mix)
    totals = []
    for batch in schedule:
        total, report = batch_loss(model, batch, cfg, train_mode=True)
        model.zero_grad()
        total.backward()
        for n, t in model.params.items():
            if t.grad is not None:
                adam_step(t, states[n])
        totals.append(report.l_total)
    k = len(totals) // 4
    assert np.mean(totals[-k:]) < np.mean(totals[:k])


def test_training_is_deterministic(tiny_ds):
    cfg = small_config(epochs=2)
    m1, log1 = train(tiny_ds, cfg)
    m2, log2 = train(tiny_ds, cfg)
    assert strip_wall_time(log1) == strip_wall_time(log2)
    for name in m1.params:
        assert np.array_equal(m1.params[name].data, m2.params[name].data)


def test_no_contrastive_zeroes_l_cont(tiny_ds):
    cfg = small_config(epochs=2, no_contrastive=True,
                       loss=LossConfig(aug_threshold=2))
    _, log = train(tiny_ds, cfg)
    assert all(e["loss"]["l_cont"] == 0.0 for e in log.epochs)


def test_contrastive_fires_when_enabled(tiny_ds):
    cfg = small_config(epochs=1, batch_size=32, loss=LossConfig(aug_threshold=2))
    _, log = train(tiny_ds, cfg)
    assert any(e["loss"]["l_cont"] != 0.0 for e in log.epochs)


def test_no_margin_removes_margin_influence(tiny_ds):
    """With no_margin set, delta cannot affect the trained parameters."""
    runs = []
    for delta in (0.5, 2.0):
        cfg = small_config(epochs=1, no_margin=True, loss=LossConfig(delta=delta))
        m, _ = train(tiny_ds, cfg)
        runs.append({n: t.data for n, t in m.params.items()})
    for name in runs[0]:
        assert np.array_equal(runs[0][name], runs[1][name])


def test_no_contrastive_removes_contrastive_influence(tiny_ds):
    runs = []
    for r in (0.3, 0.7):
        cfg = small_config(epochs=1, no_contrastive=True,
                           loss=LossConfig(mask_ratio=r, aug_threshold=2))
        m, _ = train(tiny_ds, cfg)
        runs.append({n: t.data for n, t in m.params.items()})
    for name in runs[0]:
        assert np.array_equal(runs[0][name], runs[1][name])


def test_padding_row_never_accumulates_gradient(tiny_ds):
    cfg = small_config()
    model = C3Model(tiny_ds.num_users, tiny_ds.num_items, cfg)
    for task in (USER_TASK, GROUP_TASK):
        for batch in make_batches(tiny_ds, cfg, task, epoch=1):
            total, _ = batch_loss(model, batch, cfg, train_mode=True)
            model.zero_grad()
            total.backward()
            grad = model.params["E_u"].grad
            np.testing.assert_array_equal(grad[model.pad_id], 0.0)


def test_report_total_is_main_plus_beta_cont(tiny_ds):
    cfg = small_config(batch_size=32, loss=LossConfig(aug_threshold=2, beta=0.1))
    for batch in make_batches(tiny_ds, cfg, GROUP_TASK, epoch=1):
        model = C3Model(tiny_ds.num_users, tiny_ds.num_items, cfg)
        _, rep = batch_loss(model, batch, cfg, train_mode=False)
        assert rep.l_total == pytest.approx(rep.l_main + 0.1 * rep.l_cont, abs=1e-12)
        assert min(rep.l_pos, rep.l_neg, rep.l_margin, rep.l_cont) >= 0.0
        break


def test_train_writes_checkpoints_and_log(tiny_ds, tmp_path):
    cfg = small_config(epochs=2)
    out = str(tmp_path)
    train(tiny_ds, cfg, out_dir=out)
    assert (tmp_path / "best.ckpt").is_file()
    assert (tmp_path / "last.ckpt").is_file()
    entries = [json.loads(line) for line in
               (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [e["epoch"] for e in entries] == [1, 2]
    assert all("l_total" in e["loss"] for e in entries)


def test_early_stopping_respects_patience(tiny_ds):
    cfg = small_config(epochs=50, early_stop_patience=2, lr=0.0)
    _, log = train(tiny_ds, cfg)
    # lr=0 never improves past epoch 1, so training stops after the patience
    assert len(log.epochs) <= 4


def test_hyper_grid_singleton(tiny_ds):
    cfg = small_config(epochs=1)
    best, table = hyper_grid(tiny_ds, cfg, thresholds=(3,), mask_ratios=(0.4,),
                             betas=(0.05,))
    assert len(table) == 1
    assert best.loss.aug_threshold == 3
    assert best.loss.mask_ratio == 0.4
    assert best.loss.beta == 0.05


def test_hyper_grid_table_matches_grid_cardinality(tiny_ds):
    cfg = small_config(epochs=1)
    _, table = hyper_grid(tiny_ds, cfg, thresholds=(3, 5), mask_ratios=(0.2, 0.4),
                          betas=(0.05,))
    assert len(table) == 4


def test_hyper_grid_rejects_sabotaged_config(tiny_ds):
    cfg = small_config(epochs=5, lr=5e-3)
    best, table = hyper_grid(
        tiny_ds, cfg,
        points=[{"lr": 0.0, "seed": 1}, {"lr": 5e-3, "seed": 1}])
    assert len(table) == 2
    assert best.lr == 5e-3
