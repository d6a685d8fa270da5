"""Ranking evaluation (HR@K / NDCG@K), group-size breakdowns, a popularity
baseline, and the consensus-robustness harness (masked-representation drift
plus embedding export)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import substream
from .data import GROUP_TASK, USER_TASK, InteractionDataset, sample_negatives
from .model import C3Model
from .numcore import no_grad

SIZE_BUCKETS = (("2-5", 2, 5), ("6-9", 6, 9), (">=10", 10, None))

# A scorer maps (task, entity, item_ids) -> score per item.
ScoreFn = Callable[[str, int, np.ndarray], np.ndarray]


def model_scorer(model: C3Model, ds: InteractionDataset) -> ScoreFn:
    def score(task: str, entity: int, item_ids: np.ndarray) -> np.ndarray:
        members = np.asarray(ds.members_of(task, entity), dtype=np.int64)
        n = item_ids.shape[0]
        member_ids = np.tile(members, (n, 1))
        member_mask = np.ones_like(member_ids, dtype=bool)
        with no_grad():
            return model.score(member_ids, member_mask, item_ids).data

    return score


def popularity_baseline(ds: InteractionDataset) -> ScoreFn:
    """Scores items by train-split interaction count (per task)."""
    counts = {}
    for task in (USER_TASK, GROUP_TASK):
        c = np.zeros(ds.num_items)
        for sp in ds.splits_for(task):
            for it in sp.train:
                c[it] += 1
        counts[task] = c

    def score(task: str, entity: int, item_ids: np.ndarray) -> np.ndarray:
        return counts[task][item_ids]

    return score


def rank_entity(score_fn: ScoreFn, ds: InteractionDataset, task: str, entity: int,
                n_eval_neg: int, seed: int, which: str = "test") -> int:
    """1-based rank of the held-out positive against sampled negatives.

    Ties are broken by ascending item id, and the per-entity RNG stream
    depends only on (seed, task, entity), so results are reproducible
    regardless of evaluation order or thread count.
    """
    sp = ds.splits_for(task)[entity]
    target = sp.test if which == "test" else sp.val
    if target is None:
        raise ValueError(f"{task} entity {entity} has no held-out {which} item")
    rng = substream(seed, f"eval-neg/{task}/{which}", entity)
    available = ds.num_items - len(ds.positives(task, entity))
    negs = sample_negatives(ds, task, entity, min(n_eval_neg, available), rng)
    items = np.concatenate([[target], negs]).astype(np.int64)
    scores = score_fn(task, entity, items)
    order = np.lexsort((items, -scores))
    return int(np.flatnonzero(items[order] == target)[0]) + 1


def hr_at_k(ranks, k: int) -> float:
    if k < 1:
        raise ValueError("K must be >= 1")
    ranks = np.asarray(ranks)
    return float((ranks <= k).mean()) if ranks.size else 0.0


def ndcg_at_k(ranks, k: int) -> float:
    """Single relevant item per list: contribution 1/log2(rank+1) if rank <= K."""
    if k < 1:
        raise ValueError("K must be >= 1")
    ranks = np.asarray(ranks, dtype=np.float64)
    if not ranks.size:
        return 0.0
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(gains.mean())


@dataclass
class EvalReport:
    user: dict = field(default_factory=dict)
    group: dict = field(default_factory=dict)
    group_size_buckets: dict = field(default_factory=dict)
    n_evaluated: dict = field(default_factory=dict)
    n_eval_neg: int = 100
    seed: int = 0

    def to_dict(self) -> dict:
        return {"user": self.user, "group": self.group,
                "group_size_buckets": self.group_size_buckets,
                "n_evaluated": self.n_evaluated,
                "n_eval_neg": self.n_eval_neg, "seed": self.seed}


def _candidates_for(ds: InteractionDataset, task: str, entity: int,
                    n_eval_neg: int, seed: int, which: str) -> np.ndarray:
    """Held-out item followed by sampled negatives; same stream as rank_entity."""
    sp = ds.splits_for(task)[entity]
    target = sp.test if which == "test" else sp.val
    rng = substream(seed, f"eval-neg/{task}/{which}", entity)
    available = ds.num_items - len(ds.positives(task, entity))
    negs = sample_negatives(ds, task, entity, min(n_eval_neg, available), rng)
    return np.concatenate([[target], negs]).astype(np.int64)


def _rank_entities_batched(model: C3Model, ds: InteractionDataset, task: str,
                           entities, n_eval_neg: int, seed: int, which: str,
                           chunk_rows: int = 4096) -> list:
    """Rank many entities in large padded forward passes.

    Produces exactly the same ranks as per-entity rank_entity calls (same
    negative streams; padding cannot influence unmasked outputs).
    """
    rows_members = []
    rows_items = []
    spans = []   # (entity, start, count)
    cursor = 0
    for e in entities:
        cands = _candidates_for(ds, task, e, n_eval_neg, seed, which)
        members = np.asarray(ds.members_of(task, e), dtype=np.int64)
        for it in cands:
            rows_members.append(members)
            rows_items.append(it)
        spans.append((e, cursor, cands.size, cands))
        cursor += cands.size
    if not rows_members:
        return []
    l_max = max(m.size for m in rows_members)
    pad = ds.num_users
    n = len(rows_members)
    member_ids = np.full((n, l_max), pad, dtype=np.int64)
    member_mask = np.zeros((n, l_max), dtype=bool)
    for i, m in enumerate(rows_members):
        member_ids[i, :m.size] = m
        member_mask[i, :m.size] = True
    item_ids = np.asarray(rows_items, dtype=np.int64)
    scores = np.empty(n)
    with no_grad():
        for lo in range(0, n, chunk_rows):
            hi = min(lo + chunk_rows, n)
            scores[lo:hi] = model.score(member_ids[lo:hi], member_mask[lo:hi],
                                        item_ids[lo:hi]).data
    ranks = []
    for _e, start, count, cands in spans:
        s = scores[start:start + count]
        order = np.lexsort((cands, -s))
        ranks.append(int(np.flatnonzero(cands[order] == cands[0])[0]) + 1)
    return ranks


def _eligible(ds: InteractionDataset, task: str, which: str):
    return [e for e, sp in enumerate(ds.splits_for(task))
            if not sp.train_only and (sp.test if which == "test" else sp.val) is not None]


def _metric_block(ranks) -> dict:
    return {
        "HR@1": hr_at_k(ranks, 1),
        "HR@5": hr_at_k(ranks, 5),
        "HR@10": hr_at_k(ranks, 10),
        "NDCG@5": ndcg_at_k(ranks, 5),
        "NDCG@10": ndcg_at_k(ranks, 10),
    }


def evaluate(scorer, ds: InteractionDataset, n_eval_neg: int = 100,
             seed: int = 0, which: str = "test",
             tasks=(USER_TASK, GROUP_TASK)) -> EvalReport:
    """Rank every eligible entity for each task. `scorer` is either a
    C3Model (ranked in batched forward passes) or a ScoreFn."""
    report = EvalReport(n_eval_neg=n_eval_neg, seed=seed)
    for task in tasks:
        entities = _eligible(ds, task, which)
        if isinstance(scorer, C3Model):
            ranks = _rank_entities_batched(ds=ds, model=scorer, task=task,
                                           entities=entities, n_eval_neg=n_eval_neg,
                                           seed=seed, which=which)
        else:
            ranks = [rank_entity(scorer, ds, task, e, n_eval_neg, seed, which)
                     for e in entities]
        block = _metric_block(ranks)
        if task == USER_TASK:
            report.user = block
        else:
            report.group = block
            sizes = np.array([len(ds.group_members[e]) for e in entities])
            ranks_arr = np.asarray(ranks)
            for label, lo, hi in SIZE_BUCKETS:
                sel = (sizes >= lo) if hi is None else ((sizes >= lo) & (sizes <= hi))
                bucket_ranks = ranks_arr[sel]
                report.group_size_buckets[label] = {
                    "n": int(sel.sum()),
                    "NDCG@5": ndcg_at_k(bucket_ranks, 5),
                    "NDCG@10": ndcg_at_k(bucket_ranks, 10),
                }
        report.n_evaluated[task] = len(entities)
    return report


# -- consensus robustness -----------------------------------------------------


@dataclass
class DriftReport:
    per_group: list
    mean_cosine: float
    median_cosine: float
    mean_rank_change: float
    mask_ratio: float
    trials: int
    seed: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def _masked_mask(size: int, mask_ratio: float, rng) -> np.ndarray:
    """Boolean keep-mask for one group; floor(ratio*size) removed, >=1 kept."""
    n_remove = min(int(np.floor(mask_ratio * size)), size - 1)
    keep = np.ones(size, dtype=bool)
    if n_remove > 0:
        keep[rng.choice(size, size=n_remove, replace=False)] = False
    return keep


def consensus_drift(model: C3Model, ds: InteractionDataset, mask_ratio: float = 0.8,
                    trials: int = 1, seed: int = 0) -> DriftReport:
    """Representation drift under random member removal.

    Per group and trial: cosine between the original and masked pooled
    representations, and the held-out test item's rank change under the
    same masking. Groups without a held-out item are skipped.
    """
    per_group = []
    splits = ds.splits_for(GROUP_TASK)
    for g, sp in enumerate(splits):
        members = np.asarray(ds.group_members[g], dtype=np.int64)
        if members.size < 2 or sp.test is None:
            continue
        rng = substream(seed, "drift", g)
        item = np.asarray([sp.test], dtype=np.int64)
        full_mask = np.ones((1, members.size), dtype=bool)
        with no_grad():
            h_orig = model.group_representation(members[None, :], full_mask, item).data[0]
        rank_orig = rank_entity(model_scorer(model, ds), ds, GROUP_TASK, g,
                                model.cfg.eval_negatives, seed)
        cosines = []
        rank_changes = []
        for _ in range(trials):
            keep = _masked_mask(members.size, mask_ratio, rng)
            with no_grad():
                h_masked = model.group_representation(
                    members[None, :], keep[None, :], item).data[0]
            cosines.append(_cosine(h_orig, h_masked))
            masked_scorer = _masked_group_scorer(model, members, keep)
            rank_masked = _rank_with(masked_scorer, ds, g, model.cfg.eval_negatives, seed)
            rank_changes.append(rank_masked - rank_orig)
        per_group.append({
            "group": g,
            "cosine": float(np.mean(cosines)),
            "rank_change": float(np.mean(rank_changes)),
        })
    cosines = np.array([r["cosine"] for r in per_group])
    changes = np.array([r["rank_change"] for r in per_group])
    return DriftReport(
        per_group=per_group,
        mean_cosine=float(cosines.mean()) if cosines.size else 1.0,
        median_cosine=float(np.median(cosines)) if cosines.size else 1.0,
        mean_rank_change=float(changes.mean()) if changes.size else 0.0,
        mask_ratio=mask_ratio,
        trials=trials,
        seed=seed,
    )


def _masked_group_scorer(model: C3Model, members: np.ndarray, keep: np.ndarray):
    def score(task: str, entity: int, item_ids: np.ndarray) -> np.ndarray:
        n = item_ids.shape[0]
        with no_grad():
            return model.score(np.tile(members, (n, 1)),
                               np.tile(keep, (n, 1)), item_ids).data

    return score


def _rank_with(score_fn, ds, group: int, n_eval_neg: int, seed: int) -> int:
    return rank_entity(score_fn, ds, GROUP_TASK, group, n_eval_neg, seed)


def export_embeddings(model: C3Model, ds: InteractionDataset, path: str,
                      mask_ratio: float = 0.8, seed: int = 0) -> int:
    """CSV of original and masked pooled group vectors, one masked variant
    per group; returns the number of data rows written."""
    d = model.cfg.embedding_dim
    header = ["group_id", "variant"] + [f"dim_{i}" for i in range(d)]
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for g in range(ds.num_groups):
            members = np.asarray(ds.group_members[g], dtype=np.int64)
            sp = ds.group_splits[g] if ds.group_splits else None
            if sp is not None and sp.test is not None:
                item = sp.test
            else:
                pool = sorted(sp.train) if sp is not None else sorted(ds.group_items[g])
                if not pool:
                    continue
                item = pool[0]
            item_arr = np.asarray([item], dtype=np.int64)
            rng = substream(seed, "export-mask", g)
            full = np.ones((1, members.size), dtype=bool)
            keep = _masked_mask(members.size, mask_ratio, rng)[None, :]
            for variant, mask in (("original", full), ("masked", keep)):
                with no_grad():
                    vec = model.group_representation(members[None, :], mask, item_arr).data[0]
                writer.writerow([g, variant] + [f"{x:.17g}" for x in vec])
                rows += 1
    return rows
