"""The group/user scorer: embedding lookup, stacked masked-MHSA encoder
with residual + layer norm, mean pooling, sigmoid head.

Members are a set, so no positional encodings are used; that makes member
permutation invariance an exact, testable property. Padded positions carry
a reserved embedding row, receive -inf attention logits as keys, and are
excluded from pooling, so they can never influence an output.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig, substream
from .errors import DataFormatError, DimensionError
from .numcore import (Tensor, concat, dropout, layer_norm, linear,
                      masked_attention, take_rows)

MASKED_LOGIT = -1e30
CKPT_MAGIC = b"C3RECKPT"
CKPT_VERSION = 1


@dataclass
class ForwardTrace:
    h_states: list          # H^0 .. H^L, each a (B, T, d) Tensor
    token_mask: np.ndarray  # (B, T) bool; members then the item token

    @property
    def final(self) -> Tensor:
        return self.h_states[-1]


class C3Model:
    def __init__(self, num_users: int, num_items: int, cfg: TrainConfig):
        cfg.validate()
        self.num_users = num_users
        self.num_items = num_items
        self.cfg = cfg
        self.pad_id = num_users
        d = cfg.embedding_dim
        ff = cfg.effective_ff_dim
        rng = substream(cfg.seed, "init")
        bound = 1.0 / np.sqrt(d)

        def uniform(*shape):
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        def zeros(*shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        def ones(*shape):
            return Tensor(np.ones(shape), requires_grad=True)

        self.params: dict = {}
        p = self.params
        p["E_u"] = uniform(num_users + 1, d)   # last row is the padding embedding
        p["E_i"] = uniform(num_items, d)
        for l in range(cfg.layers):
            p[f"layer{l}.Wq"] = uniform(d, d)
            p[f"layer{l}.Wk"] = uniform(d, d)
            p[f"layer{l}.Wv"] = uniform(d, d)
            p[f"layer{l}.Wo"] = uniform(d, d)
            p[f"layer{l}.ln1_g"] = ones(d)
            p[f"layer{l}.ln1_b"] = zeros(d)
            p[f"layer{l}.W1"] = uniform(d, ff)
            p[f"layer{l}.b1"] = zeros(ff)
            p[f"layer{l}.W2"] = uniform(ff, d)
            p[f"layer{l}.b2"] = zeros(d)
            p[f"layer{l}.ln2_g"] = ones(d)
            p[f"layer{l}.ln2_b"] = zeros(d)
        p["head.W"] = uniform(d, 1)
        p["head.b"] = zeros(1)

    def parameters(self) -> dict:
        return self.params

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    # -- forward ------------------------------------------------------------

    def build_input(self, member_ids: np.ndarray, member_mask: np.ndarray,
                    item_ids: np.ndarray):
        """Token sequence H^0: member embeddings followed by the item embedding.

        Returns (H0, token_mask). Masked member slots are forced onto the
        padding row so their ids never index a real user.
        """
        member_ids = np.atleast_2d(member_ids)
        member_mask = np.atleast_2d(member_mask)
        item_ids = np.atleast_1d(item_ids)
        if member_mask.sum(axis=1).min() < 1:
            raise DimensionError("every example needs at least one unmasked member")
        if item_ids.min() < 0 or item_ids.max() >= self.num_items:
            raise DimensionError("item id out of range")
        if member_ids[member_mask].size and member_ids[member_mask].max() >= self.num_users:
            raise DimensionError("member id out of range")
        safe_ids = np.where(member_mask, member_ids, self.pad_id)
        b, l = safe_ids.shape
        members = take_rows(self.params["E_u"], safe_ids)
        item = take_rows(self.params["E_i"], item_ids).reshape(b, 1, self.cfg.embedding_dim)
        h0 = concat([members, item], axis=1)
        token_mask = np.concatenate([member_mask, np.ones((b, 1), dtype=bool)], axis=1)
        return h0, token_mask

    def encoder_forward(self, h0: Tensor, token_mask: np.ndarray,
                        train_mode: bool = False, dropout_rng=None) -> ForwardTrace:
        cfg = self.cfg
        b, t, d = h0.data.shape
        heads = cfg.heads
        k = d // heads
        scale = 1.0 / np.sqrt(k)
        key_bias = np.where(token_mask, 0.0, MASKED_LOGIT)
        rate = cfg.dropout if train_mode else 0.0
        if rate > 0.0 and dropout_rng is None:
            raise DimensionError("train_mode with dropout requires an RNG")

        states = [h0]
        h = h0
        for l in range(cfg.layers):
            p = self.params

            def split_heads(x):
                return x.reshape(b, t, heads, k).transpose((0, 2, 1, 3))

            q = split_heads(linear(h, p[f"layer{l}.Wq"]))
            key = split_heads(linear(h, p[f"layer{l}.Wk"]))
            v = split_heads(linear(h, p[f"layer{l}.Wv"]))
            ctx = masked_attention(q, key, v, key_bias, scale) \
                .transpose((0, 2, 1, 3)).reshape(b, t, d)
            out = linear(ctx, p[f"layer{l}.Wo"])
            if rate > 0.0:
                out = dropout(out, rate, dropout_rng)
            h = layer_norm(h + out, p[f"layer{l}.ln1_g"], p[f"layer{l}.ln1_b"])
            ff = linear(linear(h, p[f"layer{l}.W1"], p[f"layer{l}.b1"]).relu(),
                        p[f"layer{l}.W2"], p[f"layer{l}.b2"])
            if rate > 0.0:
                ff = dropout(ff, rate, dropout_rng)
            h = layer_norm(h + ff, p[f"layer{l}.ln2_g"], p[f"layer{l}.ln2_b"])
            states.append(h)
        return ForwardTrace(h_states=states, token_mask=token_mask)

    @staticmethod
    def _masked_mean(h: Tensor, mask: np.ndarray) -> Tensor:
        counts = mask.sum(axis=1).astype(np.float64)
        pooled = (h * Tensor(mask[:, :, None].astype(np.float64))).sum(axis=1)
        return pooled / Tensor(counts[:, None])

    def pool_and_score(self, trace: ForwardTrace) -> Tensor:
        """Mean over unmasked member tokens plus the item token, then the
        affine head and sigmoid. Returns a (B,) score tensor in (0, 1)."""
        pooled = self._masked_mean(trace.final, trace.token_mask)
        b = pooled.data.shape[0]
        return linear(pooled, self.params["head.W"], self.params["head.b"]) \
            .sigmoid().reshape(b)

    def score(self, member_ids, member_mask, item_ids,
              train_mode: bool = False, dropout_rng=None) -> Tensor:
        h0, token_mask = self.build_input(member_ids, member_mask, item_ids)
        trace = self.encoder_forward(h0, token_mask, train_mode, dropout_rng)
        return self.pool_and_score(trace)

    def group_representation(self, member_ids, member_mask, item_ids,
                             train_mode: bool = False, dropout_rng=None) -> Tensor:
        """Pooled consensus vector for each group.

        By default only member tokens are pooled, so the vector reflects the
        members rather than the (shared) candidate item; flip
        cfg.contrastive_pool_includes_item to pool the item token too.
        """
        member_mask = np.atleast_2d(member_mask)
        h0, token_mask = self.build_input(member_ids, member_mask, item_ids)
        trace = self.encoder_forward(h0, token_mask, train_mode, dropout_rng)
        if self.cfg.contrastive_pool_includes_item:
            pool_mask = token_mask
        else:
            b = member_mask.shape[0]
            pool_mask = np.concatenate(
                [member_mask, np.zeros((b, 1), dtype=bool)], axis=1)
        return self._masked_mean(trace.final, pool_mask)

    # -- checkpointing --------------------------------------------------------

    def save(self, path: str) -> None:
        """Binary checkpoint: magic, version byte, JSON header, LE float64
        buffers; plus a human-readable JSON sidecar."""
        header = {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "hyper": self.cfg.to_dict(),
            "params": [{"name": name, "shape": list(t.data.shape)}
                       for name, t in self.params.items()],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(struct.pack("<B", CKPT_VERSION))
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for t in self.params.values():
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        with open(path + ".json", "w", encoding="utf-8") as fh:
            json.dump({"num_users": self.num_users, "num_items": self.num_items,
                       "hyper": self.cfg.to_dict()}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "C3Model":
        with open(path, "rb") as fh:
            magic = fh.read(len(CKPT_MAGIC))
            if magic != CKPT_MAGIC:
                raise DataFormatError(f"{path}: not a checkpoint file")
            (version,) = struct.unpack("<B", fh.read(1))
            if version != CKPT_VERSION:
                raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            cfg = TrainConfig.from_dict(header["hyper"])
            model = cls(header["num_users"], header["num_items"], cfg)
            for spec in header["params"]:
                name, shape = spec["name"], tuple(spec["shape"])
                if name not in model.params or model.params[name].data.shape != shape:
                    raise DataFormatError(f"{path}: unexpected parameter {name} {shape}")
                n = int(np.prod(shape))
                buf = fh.read(n * 8)
                if len(buf) != n * 8:
                    raise DataFormatError(f"{path}: truncated buffer for {name}")
                model.params[name].data = np.frombuffer(buf, dtype="<f8") \
                    .astype(np.float64).reshape(shape)
        return model


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
