"""Dataset schema, TSV ingestion, leave-one-out splits, negative sampling,
batch construction with padding masks, and the synthetic generator.

File formats (UTF-8, LF, no header, ids are non-negative integers):
  group_members.tsv   <gid>\t<uid>,<uid>,...
  user_item.tsv       <uid>\t<item_id>
  group_item.tsv      <gid>\t<item_id>
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .config import TrainConfig, substream
from .errors import DataFormatError, SamplingError

USER_TASK = "user"
GROUP_TASK = "group"


@dataclass
class EntitySplit:
    train: frozenset
    val: Optional[int] = None
    test: Optional[int] = None
    train_only: bool = False   # fewer than 3 positives: train on all, never rank


@dataclass
class InteractionDataset:
    num_users: int
    num_items: int
    num_groups: int
    group_members: list            # per group: list of member user ids
    user_items: list               # per user: set of positive item ids
    group_items: list              # per group: set of positive item ids
    user_splits: Optional[list] = None   # list[EntitySplit] once split
    group_splits: Optional[list] = None

    def positives(self, task: str, entity: int) -> set:
        return self.user_items[entity] if task == USER_TASK else self.group_items[entity]

    def splits_for(self, task: str) -> list:
        s = self.user_splits if task == USER_TASK else self.group_splits
        if s is None:
            raise DataFormatError("dataset has no splits; run leave_one_out_split first")
        return s

    def members_of(self, task: str, entity: int) -> list:
        if task == USER_TASK:
            return [entity]
        return self.group_members[entity]

    def validate(self):
        for gid, members in enumerate(self.group_members):
            if not members:
                raise DataFormatError(f"group {gid} has no members")
            for uid in members:
                if not 0 <= uid < self.num_users:
                    raise DataFormatError(f"group {gid}: user id {uid} out of range")
        for items in list(self.user_items) + list(self.group_items):
            for it in items:
                if not 0 <= it < self.num_items:
                    raise DataFormatError(f"item id {it} out of range")
        return self


@dataclass
class DatasetStats:
    num_users: int
    num_items: int
    num_groups: int
    user_item_interactions: int
    group_item_interactions: int
    avg_group_size: float

    @classmethod
    def from_dataset(cls, ds: InteractionDataset) -> "DatasetStats":
        sizes = [len(m) for m in ds.group_members]
        return cls(
            num_users=ds.num_users,
            num_items=ds.num_items,
            num_groups=ds.num_groups,
            user_item_interactions=sum(len(s) for s in ds.user_items),
            group_item_interactions=sum(len(s) for s in ds.group_items),
            avg_group_size=float(np.mean(sizes)) if sizes else 0.0,
        )

    def to_dict(self) -> dict:
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "num_groups": self.num_groups,
            "user_item_interactions": self.user_item_interactions,
            "group_item_interactions": self.group_item_interactions,
            "avg_group_size": self.avg_group_size,
        }


# -- ingestion ---------------------------------------------------------------


def _read_lines(path: str):
    if not os.path.isfile(path):
        raise DataFormatError(f"missing dataset file: {path}")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if line:
                yield lineno, line


def _parse_int(token: str, path: str, lineno: int) -> int:
    try:
        v = int(token)
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: not an integer: {token!r}") from None
    if v < 0:
        raise DataFormatError(f"{path}:{lineno}: negative id: {v}")
    return v


def _finish_map(first_seen: list) -> dict:
    """Raw-id -> compact-id mapping: first-seen order, except that an
    already-dense id space {0..n-1} maps to itself so a saved dataset loads
    back unchanged."""
    if set(first_seen) == set(range(len(first_seen))):
        return {raw: raw for raw in first_seen}
    return {raw: idx for idx, raw in enumerate(first_seen)}


def load_dataset(directory: str) -> InteractionDataset:
    """Load the three TSV files; ids are compacted deterministically
    (first-seen order; identity when ids are already 0..n-1)."""
    gm_path = os.path.join(directory, "group_members.tsv")
    ui_path = os.path.join(directory, "user_item.tsv")
    gi_path = os.path.join(directory, "group_item.tsv")

    seen_users: list = []
    seen_items: list = []
    seen_groups: list = []

    def note(seen: list, known: set, raw: int):
        if raw not in known:
            known.add(raw)
            seen.append(raw)

    known_users: set = set()
    known_items: set = set()
    known_groups: set = set()

    raw_groups: dict = {}   # raw gid -> list of raw member uids
    for lineno, line in _read_lines(gm_path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"{gm_path}:{lineno}: expected <gid>\\t<members>")
        raw_gid = _parse_int(parts[0], gm_path, lineno)
        member_tokens = [t for t in parts[1].split(",") if t]
        if not member_tokens:
            raise DataFormatError(f"{gm_path}:{lineno}: group has no members")
        note(seen_groups, known_groups, raw_gid)
        members = raw_groups.setdefault(raw_gid, [])
        for t in member_tokens:
            raw_uid = _parse_int(t, gm_path, lineno)
            note(seen_users, known_users, raw_uid)
            if raw_uid not in members:
                members.append(raw_uid)

    user_pairs = []
    for lineno, line in _read_lines(ui_path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"{ui_path}:{lineno}: expected <uid>\\t<item>")
        raw_uid = _parse_int(parts[0], ui_path, lineno)
        raw_iid = _parse_int(parts[1], ui_path, lineno)
        note(seen_users, known_users, raw_uid)
        note(seen_items, known_items, raw_iid)
        user_pairs.append((raw_uid, raw_iid))

    group_pairs = []
    for lineno, line in _read_lines(gi_path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"{gi_path}:{lineno}: expected <gid>\\t<item>")
        raw_gid = _parse_int(parts[0], gi_path, lineno)
        if raw_gid not in known_groups:
            raise DataFormatError(
                f"{gi_path}:{lineno}: group {raw_gid} not in group_members.tsv")
        raw_iid = _parse_int(parts[1], gi_path, lineno)
        note(seen_items, known_items, raw_iid)
        group_pairs.append((raw_gid, raw_iid))

    uid_map = _finish_map(seen_users)
    iid_map = _finish_map(seen_items)
    gid_map = _finish_map(seen_groups)

    num_users = len(uid_map)
    num_items = len(iid_map)
    num_groups = len(gid_map)
    group_members = [[] for _ in range(num_groups)]
    for raw_gid, members in raw_groups.items():
        group_members[gid_map[raw_gid]] = [uid_map[m] for m in members]
    user_items = [set() for _ in range(num_users)]
    for raw_uid, raw_iid in user_pairs:
        user_items[uid_map[raw_uid]].add(iid_map[raw_iid])
    group_items = [set() for _ in range(num_groups)]
    for raw_gid, raw_iid in group_pairs:
        group_items[gid_map[raw_gid]].add(iid_map[raw_iid])

    ds = InteractionDataset(num_users, num_items, num_groups,
                            group_members, user_items, group_items)
    return ds.validate()


def save_dataset(ds: InteractionDataset, directory: str) -> None:
    """Write the three TSV files with already-compact ids (load round-trips)."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "group_members.tsv"), "w", encoding="utf-8") as fh:
        for gid, members in enumerate(ds.group_members):
            fh.write(f"{gid}\t{','.join(map(str, members))}\n")
    with open(os.path.join(directory, "user_item.tsv"), "w", encoding="utf-8") as fh:
        for uid, items in enumerate(ds.user_items):
            for iid in sorted(items):
                fh.write(f"{uid}\t{iid}\n")
    with open(os.path.join(directory, "group_item.tsv"), "w", encoding="utf-8") as fh:
        for gid, items in enumerate(ds.group_items):
            for iid in sorted(items):
                fh.write(f"{gid}\t{iid}\n")


# -- splitting & sampling -----------------------------------------------------


def leave_one_out_split(ds: InteractionDataset, seed: int) -> InteractionDataset:
    """Hold out one test and one validation positive per entity.

    Entities with fewer than 3 positives keep everything in train and are
    flagged train_only (excluded from ranking metrics).
    """
    rng = substream(seed, "split")

    def split_entities(per_entity_items):
        out = []
        for items in per_entity_items:
            ordered = sorted(items)
            if len(ordered) < 3:
                out.append(EntitySplit(train=frozenset(ordered), train_only=True))
                continue
            picks = rng.choice(len(ordered), size=2, replace=False)
            test_item, val_item = ordered[picks[0]], ordered[picks[1]]
            train = frozenset(it for it in ordered if it not in (test_item, val_item))
            out.append(EntitySplit(train=train, val=val_item, test=test_item))
        return out

    ds.user_splits = split_entities(ds.user_items)
    ds.group_splits = split_entities(ds.group_items)
    return ds


def sample_negatives(ds: InteractionDataset, task: str, entity: int,
                     n_neg: int, rng) -> np.ndarray:
    """Uniform sample without replacement from items the entity never touched.

    The exclusion set is the entity's full positive set (train, val, test),
    so evaluation negatives can never leak positives.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    positives = ds.positives(task, entity)
    candidates = np.setdiff1d(np.arange(ds.num_items), np.fromiter(positives, dtype=np.int64),
                              assume_unique=False)
    if n_neg > candidates.size:
        raise SamplingError(
            f"need {n_neg} negatives but only {candidates.size} items are available")
    return rng.choice(candidates, size=n_neg, replace=False)


# -- batching -----------------------------------------------------------------


@dataclass
class TrainBatch:
    """One training batch.

    Rows 0..n_pos are positives; negatives for positive p occupy rows
    n_pos + p*n_neg_per_pos .. n_pos + (p+1)*n_neg_per_pos. `pos_index`
    maps every row to the positive block it belongs to.
    """
    task: str
    member_ids: np.ndarray     # (B, Lmax) int64, padded with the pad id
    member_mask: np.ndarray    # (B, Lmax) bool
    item_ids: np.ndarray       # (B,) int64
    labels: np.ndarray         # (B,) bool
    group_ids: np.ndarray      # (B,) int64 entity ids
    pos_index: np.ndarray      # (B,) int64
    n_pos: int
    n_neg_per_pos: int
    aug_member_mask: Optional[np.ndarray] = None  # (2V, Lmax) bool
    aug_rows: Optional[np.ndarray] = None          # (V,) positive-row indices

    def validate(self, ds: InteractionDataset):
        sizes = np.array([len(ds.members_of(self.task, int(e))) for e in self.group_ids])
        assert np.array_equal(self.member_mask.sum(axis=1), sizes)
        if self.aug_member_mask is not None:
            assert (self.aug_member_mask.sum(axis=1) >= 1).all()
        return self


def _mask_views(mask_row: np.ndarray, size: int, ratio: float, rng) -> tuple:
    """Two independent masked copies of one group's mask row."""
    n_mask = int(np.floor(ratio * size))
    if n_mask == 0:
        n_mask = 1   # a no-op view would equal the original and defeat the contrast
    present = np.flatnonzero(mask_row)
    views = []
    for _ in range(2):
        view = mask_row.copy()
        view[rng.choice(present, size=n_mask, replace=False)] = False
        views.append(view)
    return views[0], views[1]


def make_batches(ds: InteractionDataset, cfg: TrainConfig, task: str,
                 epoch: int) -> Iterator[TrainBatch]:
    """Shuffled positive examples with in-batch negatives and, for the group
    task, two masking views per eligible positive."""
    rng = substream(cfg.seed, f"batches/{task}", epoch)
    neg_rng = substream(cfg.seed, f"negatives/{task}", epoch)
    mask_rng = substream(cfg.seed, f"masking/{task}", epoch)
    splits = ds.splits_for(task)

    pairs = [(e, it) for e, sp in enumerate(splits) for it in sorted(sp.train)]
    order = rng.permutation(len(pairs))
    k = cfg.train_neg_per_pos

    for start in range(0, len(order), cfg.batch_size):
        chunk = [pairs[i] for i in order[start:start + cfg.batch_size]]
        n_pos = len(chunk)
        entities = []
        items = []
        labels = []
        pos_index = []
        for p, (e, it) in enumerate(chunk):
            entities.append(e)
            items.append(it)
            labels.append(True)
            pos_index.append(p)
        for p, (e, _it) in enumerate(chunk):
            negs = sample_negatives(ds, task, e, k, neg_rng)
            for nit in negs:
                entities.append(e)
                items.append(int(nit))
                labels.append(False)
                pos_index.append(p)

        member_lists = [ds.members_of(task, e) for e in entities]
        l_max = max(len(m) for m in member_lists)
        pad_id = ds.num_users
        b = len(entities)
        member_ids = np.full((b, l_max), pad_id, dtype=np.int64)
        member_mask = np.zeros((b, l_max), dtype=bool)
        for i, members in enumerate(member_lists):
            member_ids[i, :len(members)] = members
            member_mask[i, :len(members)] = True

        aug_mask = aug_rows = None
        if task == GROUP_TASK:
            masks = []
            rows = []
            for p, (e, _it) in enumerate(chunk):
                size = len(ds.group_members[e])
                if size >= cfg.loss.aug_threshold:
                    v1, v2 = _mask_views(member_mask[p], size, cfg.loss.mask_ratio, mask_rng)
                    masks.extend([v1, v2])
                    rows.append(p)
            if rows:
                aug_mask = np.stack(masks)
                aug_rows = np.asarray(rows, dtype=np.int64)

        yield TrainBatch(
            task=task,
            member_ids=member_ids,
            member_mask=member_mask,
            item_ids=np.asarray(items, dtype=np.int64),
            labels=np.asarray(labels, dtype=bool),
            group_ids=np.asarray(entities, dtype=np.int64),
            pos_index=np.asarray(pos_index, dtype=np.int64),
            n_pos=n_pos,
            n_neg_per_pos=k,
            aug_member_mask=aug_mask,
            aug_rows=aug_rows,
        )


# -- synthetic generator --------------------------------------------------------


def generate_synthetic(num_users: int, num_items: int, num_groups: int, seed: int,
                       planted_clusters: int = 2, within_prob: float = 0.9,
                       user_items_mean: float = 18.0, group_items_mean: float = 12.0,
                       group_size_mean: float = 3.5, group_size_min: int = 2,
                       group_size_max: int = 8) -> InteractionDataset:
    """Planted-cluster dataset: users and items belong to latent clusters,
    interactions stay mostly within-cluster, groups are drawn from one
    cluster with a small-group-heavy size distribution."""
    if planted_clusters < 2:
        raise ValueError("planted_clusters must be >= 2")
    if num_items < planted_clusters * 10 or num_users < planted_clusters:
        raise ValueError("sizes too small for the requested cluster count")
    if not group_size_min <= group_size_mean <= group_size_max:
        raise ValueError("group size bounds do not bracket the mean")
    rng = substream(seed, "synthetic")

    user_cluster = rng.integers(planted_clusters, size=num_users)
    item_cluster = np.arange(num_items) % planted_clusters
    cluster_items = [np.flatnonzero(item_cluster == c) for c in range(planted_clusters)]
    # mild popularity skew inside each cluster so held-out items are learnable
    cluster_weights = []
    for items in cluster_items:
        w = 1.0 / (1.0 + np.arange(items.size)) ** 0.7
        cluster_weights.append(w / w.sum())

    def draw_items(cluster: int, count: int) -> set:
        chosen: set = set()
        items = cluster_items[cluster]
        weights = cluster_weights[cluster]
        guard = 0
        while len(chosen) < count and guard < 50 * count:
            guard += 1
            if within_prob >= 1.0 or rng.random() < within_prob:
                chosen.add(int(rng.choice(items, p=weights)))
            else:
                chosen.add(int(rng.integers(num_items)))
        return chosen

    user_items = []
    for u in range(num_users):
        count = max(3, int(rng.poisson(user_items_mean)))
        count = min(count, num_items - 2)
        user_items.append(draw_items(int(user_cluster[u]), count))

    group_members = []
    group_items = []
    for _g in range(num_groups):
        size = int(np.clip(round(rng.normal(group_size_mean, 1.5)),
                           group_size_min, group_size_max))
        cluster = int(rng.integers(planted_clusters))
        pool = np.flatnonzero(user_cluster == cluster)
        if within_prob >= 1.0 or pool.size < size:
            members = rng.choice(pool if pool.size >= size else np.arange(num_users),
                                 size=size, replace=False)
        else:
            n_in = max(1, int(round(within_prob * size)))
            n_in = min(n_in, pool.size, size)
            members = list(rng.choice(pool, size=n_in, replace=False))
            outsiders = np.setdiff1d(np.arange(num_users), members)
            members += list(rng.choice(outsiders, size=size - n_in, replace=False))
            members = np.asarray(members)
        group_members.append([int(m) for m in members])
        count = max(3, int(rng.poisson(group_items_mean)))
        count = min(count, num_items - 2)
        # consensus: items come from the members' majority cluster
        majority = int(np.bincount(user_cluster[members], minlength=planted_clusters).argmax())
        group_items.append(draw_items(majority, count))

    ds = InteractionDataset(num_users, num_items, num_groups,
                            group_members, user_items, group_items)
    return ds.validate()
