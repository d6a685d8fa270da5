"""Training loop: alternating user/group batches, the combined loss,
Adam updates, validation-based early stopping, checkpointing, and the
hyperparameter grid search."""

from __future__ import annotations

import itertools
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .config import TrainConfig, substream
from .data import GROUP_TASK, USER_TASK, InteractionDataset, TrainBatch, make_batches
from .errors import NumericalError
from .evaluate import evaluate
from .model import C3Model
from .numcore import AdamState, adam_step


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)   # one dict per epoch, 1-indexed
    best_epoch: int = 0
    best_metric: float = -1.0

    def append(self, entry: dict):
        self.epochs.append(entry)

    def write_jsonl(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.epochs:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _interleave(user_batches: list, group_batches: list, task_mix: float) -> list:
    """Alternate tasks at roughly `task_mix` user batches per group batch."""
    if not group_batches:
        return list(user_batches)
    if not user_batches:
        return list(group_batches)
    out = []
    credit = 0.0
    ui, gi = 0, 0
    while ui < len(user_batches) or gi < len(group_batches):
        credit += task_mix
        while credit >= 1.0 and ui < len(user_batches):
            out.append(user_batches[ui])
            ui += 1
            credit -= 1.0
        if gi < len(group_batches):
            out.append(group_batches[gi])
            gi += 1
        elif ui < len(user_batches):
            out.append(user_batches[ui])
            ui += 1
    return out


def batch_loss(model: C3Model, batch: TrainBatch, cfg: TrainConfig,
               train_mode: bool = True, dropout_rng=None):
    """Forward one batch through the scorer and all loss terms.

    Returns (total_loss Tensor, LossReport).
    """
    scores = model.score(batch.member_ids, batch.member_mask, batch.item_ids,
                         train_mode=train_mode, dropout_rng=dropout_rng)
    p = batch.n_pos
    k = batch.n_neg_per_pos
    s_pos = scores.slice0(0, p)
    s_neg = scores.slice0(p, p + p * k).reshape(p, k)

    l_pos = losses.positive_loss(s_pos, cfg.loss.epsilon)
    l_neg = losses.negative_loss(s_neg.reshape(p * k))
    l_margin = losses.margin_loss(s_pos, s_neg, cfg.loss.delta)
    alpha = cfg.effective_alpha()
    l_main = losses.main_loss(l_pos, l_neg, l_margin, alpha)

    beta = cfg.effective_beta()
    l_cont = None
    if (beta > 0.0 and batch.task == GROUP_TASK
            and batch.aug_rows is not None and batch.aug_rows.size >= 2):
        rows = np.repeat(batch.aug_rows, 2)
        h = model.group_representation(
            batch.member_ids[rows], batch.aug_member_mask,
            batch.item_ids[rows], train_mode=train_mode, dropout_rng=dropout_rng)
        l_cont = losses.info_nce(h, cfg.loss.tau)
        total = losses.total_loss(l_main, l_cont, beta)
    else:
        total = l_main

    report = losses.LossReport(
        l_pos=float(l_pos.data), l_neg=float(l_neg.data),
        l_margin=float(l_margin.data), l_main=float(l_main.data),
        l_cont=float(l_cont.data) if l_cont is not None else 0.0,
        l_total=float(total.data),
        n_pos=p, n_neg=p * k,
        n_pairs=0 if batch.aug_rows is None else int(batch.aug_rows.size),
    )
    return total, report


def _dump_batch(batch: TrainBatch, out_dir):
    if not out_dir:
        return None
    path = os.path.join(out_dir, "nan_batch.npz")
    np.savez(path, member_ids=batch.member_ids, member_mask=batch.member_mask,
             item_ids=batch.item_ids, labels=batch.labels, group_ids=batch.group_ids,
             task=np.array(batch.task))
    return path


def _snapshot(model: C3Model) -> dict:
    return {name: t.data.copy() for name, t in model.params.items()}


def _restore(model: C3Model, snap: dict):
    for name, data in snap.items():
        model.params[name].data = data.copy()


def train(ds: InteractionDataset, cfg: TrainConfig, out_dir: str = None,
          quiet: bool = True):
    """Train a model from scratch; returns (model_at_best_epoch, TrainLog)."""
    cfg.validate()
    if ds.user_splits is None and ds.group_splits is None:
        raise ValueError("dataset has no splits; run leave_one_out_split first")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    model = C3Model(ds.num_users, ds.num_items, cfg)
    states = {name: AdamState.for_param(t, lr=cfg.lr)
              for name, t in model.params.items()}
    dropout_rng = substream(cfg.seed, "dropout")
    log = TrainLog()
    best_snap = _snapshot(model)
    stale = 0

    has_groups = any(not sp.train_only for sp in (ds.group_splits or []))
    monitor_task = GROUP_TASK if has_groups else USER_TASK

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        user_batches = list(make_batches(ds, cfg, USER_TASK, epoch))
        group_batches = list(make_batches(ds, cfg, GROUP_TASK, epoch))
        schedule = _interleave(user_batches, group_batches, cfg.task_mix)

        reports = []
        for batch in schedule:
            total, report = batch_loss(model, batch, cfg, True, dropout_rng)
            if not np.isfinite(report.l_total):
                dump = _dump_batch(batch, out_dir)
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} ({batch.task} batch)"
                    + (f"; batch dumped to {dump}" if dump else ""))
            model.zero_grad()
            total.backward()
            for name, t in model.params.items():
                if t.grad is not None:
                    adam_step(t, states[name])
            reports.append(report)

        val = evaluate(model, ds, cfg.eval_negatives, cfg.seed, which="val")
        metric = (val.group if monitor_task == GROUP_TASK else val.user).get("HR@10", 0.0)
        is_best = metric > log.best_metric
        if is_best:
            log.best_metric = metric
            log.best_epoch = epoch
            best_snap = _snapshot(model)
            stale = 0
        else:
            stale += 1

        entry = {
            "epoch": epoch,
            "loss": {k: float(np.mean([getattr(r, k) for r in reports]))
                     for k in ("l_pos", "l_neg", "l_margin", "l_main",
                               "l_cont", "l_total")},
            "val_user_hr10": val.user.get("HR@10"),
            "val_user_ndcg10": val.user.get("NDCG@10"),
            "val_group_hr10": val.group.get("HR@10"),
            "val_group_ndcg10": val.group.get("NDCG@10"),
            "wall_time_s": time.perf_counter() - t0,
            "is_best": is_best,
        }
        log.append(entry)
        if not quiet:
            print(f"epoch {epoch:3d}  loss {entry['loss']['l_total']:.4f}  "
                  f"val {monitor_task} HR@10 {metric:.4f}"
                  + ("  *" if is_best else ""))
        if out_dir:
            model.save(os.path.join(out_dir, "last.ckpt"))
            log.write_jsonl(os.path.join(out_dir, "log.jsonl"))
        if stale >= cfg.early_stop_patience:
            break

    _restore(model, best_snap)
    if out_dir:
        model.save(os.path.join(out_dir, "best.ckpt"))
        log.write_jsonl(os.path.join(out_dir, "log.jsonl"))
    return model, log


def hyper_grid(ds: InteractionDataset, base_cfg: TrainConfig,
               thresholds=(3, 5, 7, 9), mask_ratios=(0.2, 0.4, 0.6, 0.8),
               betas=(0.025, 0.05, 0.075, 0.1), out_dir: str = None,
               quiet: bool = True, points=None):
    """Train per (threshold, mask_ratio, beta) grid point; pick the best
    validation group HR@10. Returns (best_cfg, table).

    `points` replaces the product grid with an explicit list of config
    override dicts (any TrainConfig/LossConfig field), one per grid point.
    """
    if points is None:
        points = [{"aug_threshold": int(th), "mask_ratio": float(r), "beta": float(b)}
                  for th, r, b in itertools.product(thresholds, mask_ratios, betas)]
    table = []
    best_cfg = None
    best_metric = -1.0
    for overrides in points:
        merged = base_cfg.to_dict()
        merged.update(overrides)
        cfg = TrainConfig.from_dict(merged)
        _model, log = train(ds, cfg, out_dir=None, quiet=quiet)
        row = dict(overrides)
        row.update({"val_hr10": log.best_metric, "best_epoch": log.best_epoch})
        table.append(row)
        if log.best_metric > best_metric:
            best_metric = log.best_metric
            best_cfg = cfg
        if not quiet:
            print(f"grid point threshold={th} r={r} beta={b} -> "
                  f"HR@10 {log.best_metric:.4f}")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "grid.json"), "w", encoding="utf-8") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return best_cfg, table
