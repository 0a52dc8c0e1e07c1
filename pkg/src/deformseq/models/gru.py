"""Gated recurrent units: a single causal layer and the two-layer encoder-decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from ..errors import ShapeError
from .base import N_FEATURES, SequenceModel, uniform_init


@dataclass
class GruCellParams:
    """Weights of one GRU layer, gate blocks ordered (update, reset, candidate).

    ``w_in``: (input, 3H); ``u_zr``: (H, 2H) recurrent weights of the two
    gates; ``u_h``: (H, H) recurrent candidate weights; ``bias``: (3H,).
    """

    w_in: Tensor
    u_zr: Tensor
    u_h: Tensor
    bias: Tensor

    @property
    def hidden(self) -> int:
        return self.u_h.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_in.shape[0]

    def check(self):
        h, i = self.hidden, self.input_dim
        shapes = {"w_in": (i, 3 * h), "u_zr": (h, 2 * h), "u_h": (h, h), "bias": (3 * h,)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"GRU {name} has shape {getattr(self, name).shape}, expected {shape}")


def init_gru_params(rng: np.random.Generator, input_dim: int, hidden: int) -> dict:
    return {
        "w_in": uniform_init(rng, input_dim, (input_dim, 3 * hidden)),
        "u_zr": uniform_init(rng, hidden, (hidden, 2 * hidden)),
        "u_h": uniform_init(rng, hidden, (hidden, hidden)),
        "bias": np.zeros(3 * hidden),
    }


def gru_param_count(input_dim: int, hidden: int) -> int:
    return 3 * hidden * input_dim + 3 * hidden * hidden + 3 * hidden


def gru_cell_step(x_t, h_prev, params: GruCellParams, x_proj=None) -> Tensor:
    """One GRU transition ``h' = (1 - z) * h + z * h_cand``.

    z = sigmoid(W_z x + U_z h + b_z), r = sigmoid(W_r x + U_r h + b_r),
    h_cand = tanh(W_h x + U_h (r * h) + b_h).  ``x_proj`` may carry a
    precomputed ``x @ w_in + bias`` to skip that product.
    """
    H = params.hidden
    h_prev = ag.as_tensor(h_prev)
    if h_prev.shape[-1] != H:
        raise ShapeError(f"hidden state width {h_prev.shape[-1]} != {H}")
    if x_proj is None:
        x_t = ag.as_tensor(x_t)
        if x_t.shape[-1] != params.input_dim:
            raise ShapeError(f"input width {x_t.shape[-1]} != {params.input_dim}")
        x_proj = x_t @ params.w_in + params.bias
    zr = ag.sigmoid(x_proj[..., : 2 * H] + h_prev @ params.u_zr)
    z = zr[..., :H]
    r = zr[..., H:]
    cand = ag.tanh(x_proj[..., 2 * H:] + (r * h_prev) @ params.u_h)
    return h_prev + z * (cand - h_prev)


def run_gru(x: Tensor, params: GruCellParams, h0=None, keep_all=True):
    """Run a GRU over ``x`` of shape (batch, steps, input).

    Returns (stacked states (batch, steps, H) or None, final state).
    """
    B, T, _ = x.shape
    proj = x @ params.w_in + params.bias
    h = h0 if h0 is not None else Tensor(np.zeros((B, params.hidden)))
    states = []
    for t in range(T):
        h = gru_cell_step(None, h, params, x_proj=proj[:, t, :])
        if keep_all:
            states.append(h)
    return (ag.stack(states, axis=1) if keep_all else None), h


class _GruHeadMixin:
    def _layer(self, prefix: str) -> GruCellParams:
        p = self.params
        return GruCellParams(p[f"{prefix}.w_in"], p[f"{prefix}.u_zr"], p[f"{prefix}.u_h"], p[f"{prefix}.bias"])

    def _head(self, states: Tensor) -> Tensor:
        out = states @ self.params["head.w"] + self.params["head.b"]
        return out.reshape(out.shape[0], out.shape[1])


def _check_hidden(hyper: dict) -> dict:
    hidden = int(hyper.get("hidden", 64))
    if hidden < 1:
        raise ShapeError(f"hidden size must be positive, got {hidden}")
    return {"hidden": hidden}


class EncoderDecoderGru(_GruHeadMixin, SequenceModel):
    """Two GRU layers: the encoder reads the whole sequence and its final
    state seeds the decoder, which re-reads the same features; a linear
    head maps each decoder state to one damage value.

    Every output therefore depends on the *last* input step, which is why
    predictions on a truncated history differ from the full-history ones.
    """

    arch = "encdec_gru"

    def _check_hyper(self, hyper):
        return _check_hidden(hyper)

    def _build(self, rng):
        H = self.hyper["hidden"]
        params = {}
        for prefix in ("enc", "dec"):
            for k, v in init_gru_params(rng, N_FEATURES, H).items():
                params[f"{prefix}.{k}"] = v
        params["head.w"] = uniform_init(rng, H, (H, 1))
        params["head.b"] = np.zeros(1)
        return params

    @classmethod
    def expected_param_count(cls, hidden=64):
        return 2 * gru_param_count(N_FEATURES, hidden) + hidden + 1

    def encode(self, x: Tensor) -> Tensor:
        _, h_final = run_gru(x, self._layer("enc"), keep_all=False)
        return h_final

    def forward(self, x, training=False, rng=None):
        encoded = self.encode(x)
        states, _ = run_gru(x, self._layer("dec"), h0=encoded)
        return self._head(states)


class CausalGru(_GruHeadMixin, SequenceModel):
    """Single unidirectional GRU layer read step by step, plus a linear head."""

    arch = "gru"

    def _check_hyper(self, hyper):
        return _check_hidden(hyper)

    def _build(self, rng):
        H = self.hyper["hidden"]
        params = {f"rnn.{k}": v for k, v in init_gru_params(rng, N_FEATURES, H).items()}
        params["head.w"] = uniform_init(rng, H, (H, 1))
        params["head.b"] = np.zeros(1)
        return params

    @classmethod
    def expected_param_count(cls, hidden=64):
        return gru_param_count(N_FEATURES, hidden) + hidden + 1

    def forward(self, x, training=False, rng=None):
        states, _ = run_gru(x, self._layer("rnn"))
        return self._head(states)
