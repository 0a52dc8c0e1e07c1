"""Single transformer encoder block regressor."""
from __future__ import annotations

import math

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from ..errors import ShapeError
from .base import N_FEATURES, SequenceModel, uniform_init

MASK_MODES = ("causal", "none")
POSITIONAL_MODES = ("none", "sinusoidal")
DROPOUT = 0.1
LN_EPS = 1e-5


def causal_mask(n_query: int, n_key: int) -> np.ndarray:
    """Additive mask, ``-inf`` strictly above the diagonal."""
    return np.triu(np.full((n_query, n_key), -np.inf), k=1)


def scaled_dot_product_attention(q, k, v, mask: str = "none") -> Tensor:
    """``softmax(q k^T / sqrt(d_k) + mask) v`` over the last two axes."""
    q, k, v = ag.as_tensor(q), ag.as_tensor(k), ag.as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key rows {k.shape[-2]} != value rows {v.shape[-2]}")
    if mask not in MASK_MODES:
        raise ShapeError(f"unknown mask mode {mask!r}")
    scores = (q @ ag.transpose(k)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask == "causal":
        scores = scores + causal_mask(q.shape[-2], k.shape[-2])
    return ag.softmax(scores, axis=-1) @ v


def sinusoidal_encoding(n_steps: int, d_model: int) -> np.ndarray:
    pos = np.arange(n_steps)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class TransformerBlockNet(SequenceModel):
    """Embedding, multi-head self-attention with add & norm, position-wise
    feed-forward with add & norm, and a per-step linear head."""

    arch = "transformer"

    def _check_hyper(self, hyper):
        d = int(hyper.get("d_model", 32))
        heads = int(hyper.get("heads", 2))
        d_ff = int(hyper.get("d_ff", 64))
        mask = hyper.get("mask", "none")
        posenc = hyper.get("positional", "none")
        dropout = float(hyper.get("dropout", DROPOUT))
        if heads < 1 or d < 1 or d_ff < 1:
            raise ShapeError("d_model, heads and d_ff must be positive")
        if d % heads:
            raise ShapeError(f"d_model {d} is not divisible by heads {heads}")
        if mask not in MASK_MODES:
            raise ShapeError(f"mask must be one of {MASK_MODES}, got {mask!r}")
        if posenc not in POSITIONAL_MODES:
            raise ShapeError(f"positional must be one of {POSITIONAL_MODES}, got {posenc!r}")
        return {"d_model": d, "heads": heads, "d_ff": d_ff, "mask": mask, "positional": posenc,
                "dropout": dropout}

    def _build(self, rng):
        d, f = self.hyper["d_model"], self.hyper["d_ff"]
        p = {"embed.w": uniform_init(rng, N_FEATURES, (N_FEATURES, d)), "embed.b": np.zeros(d)}
        for name in ("q", "k", "v", "o"):
            p[f"attn.{name}.w"] = uniform_init(rng, d, (d, d))
            # a key bias shifts every logit of a row equally, so softmax ignores it
            if name != "k":
                p[f"attn.{name}.b"] = np.zeros(d)
        p["ln1.g"], p["ln1.b"] = np.ones(d), np.zeros(d)
        p["ff1.w"], p["ff1.b"] = uniform_init(rng, d, (d, f)), np.zeros(f)
        p["ff2.w"], p["ff2.b"] = uniform_init(rng, f, (f, d)), np.zeros(d)
        p["ln2.g"], p["ln2.b"] = np.ones(d), np.zeros(d)
        p["head.w"], p["head.b"] = uniform_init(rng, d, (d, 1)), np.zeros(1)
        return p

    @classmethod
    def expected_param_count(cls, d_model=32, heads=2, d_ff=64, **_):
        d, f = d_model, d_ff
        return (N_FEATURES * d + d) + 4 * d * d + 3 * d + 2 * d + (d * f + f) + (f * d + d) + 2 * d + d + 1

    def _split_heads(self, t: Tensor, B: int, T: int) -> Tensor:
        h = self.hyper["heads"]
        return ag.transpose(t.reshape(B, T, h, self.hyper["d_model"] // h), (0, 2, 1, 3))

    def attention(self, e: Tensor) -> Tensor:
        p = self.params
        B, T, d = e.shape
        q = self._split_heads(e @ p["attn.q.w"] + p["attn.q.b"], B, T)
        k = self._split_heads(e @ p["attn.k.w"], B, T)
        v = self._split_heads(e @ p["attn.v.w"] + p["attn.v.b"], B, T)
        heads = scaled_dot_product_attention(q, k, v, self.hyper["mask"])
        merged = ag.transpose(heads, (0, 2, 1, 3)).reshape(B, T, d)
        return merged @ p["attn.o.w"] + p["attn.o.b"]

    def forward(self, x, training=False, rng=None):
        p = self.params
        rate = self.hyper["dropout"]
        B, T, _ = x.shape
        e = x @ p["embed.w"] + p["embed.b"]
        if self.hyper["positional"] == "sinusoidal":
            e = e + sinusoidal_encoding(T, self.hyper["d_model"])
        a = ag.dropout(self.attention(e), rate, rng, training)
        n1 = ag.layer_norm(e + a, eps=LN_EPS) * p["ln1.g"] + p["ln1.b"]
        ff = ag.relu(n1 @ p["ff1.w"] + p["ff1.b"]) @ p["ff2.w"] + p["ff2.b"]
        ff = ag.dropout(ff, rate, rng, training)
        n2 = ag.layer_norm(n1 + ff, eps=LN_EPS) * p["ln2.g"] + p["ln2.b"]
        out = n2 @ p["head.w"] + p["head.b"]
        return out.reshape(B, T)
