"""Two-layer 1D convolutional regressor (second layer has a single filter)."""
from __future__ import annotations

import numpy as np

from .. import autograd as ag
from ..errors import ShapeError
from .base import N_FEATURES, SequenceModel, uniform_init

PADDING_MODES = ("causal", "symmetric")


def pad_widths(kernel: int, mode: str) -> tuple:
    """(left, right) zero padding that keeps the output length equal to the input."""
    if mode == "causal":
        return kernel - 1, 0
    if mode == "symmetric":
        left = (kernel - 1) // 2
        return left, kernel - 1 - left
    raise ShapeError(f"unknown padding mode {mode!r}")


def conv1d(x, weight, bias, kernel: int, mode: str):
    """Same-length 1D convolution of (batch, steps, channels).

    ``weight`` has shape (kernel * channels, filters) with window offset as
    the major index, so row ``j * C + c`` weights channel ``c`` at offset
    ``j`` inside the window ``[t - left, t + right]``.
    """
    T = x.shape[1]
    left, right = pad_widths(kernel, mode)
    xp = ag.pad(x, axis=1, before=left, after=right)
    cols = ag.concat([xp[:, j:j + T, :] for j in range(kernel)], axis=-1) if kernel > 1 else xp
    return cols @ weight + bias


class Conv1dNet(SequenceModel):
    arch = "conv"

    def _check_hyper(self, hyper):
        filters = int(hyper.get("filters", 32))
        kernel = int(hyper.get("kernel", 3))
        padding = hyper.get("padding", "causal")
        if filters < 1 or kernel < 1:
            raise ShapeError(f"filters and kernel must be positive, got {filters}, {kernel}")
        if padding not in PADDING_MODES:
            raise ShapeError(f"padding must be one of {PADDING_MODES}, got {padding!r}")
        return {"filters": filters, "kernel": kernel, "padding": padding}

    def _build(self, rng):
        F, k = self.hyper["filters"], self.hyper["kernel"]
        return {
            "conv1.w": uniform_init(rng, k * N_FEATURES, (k * N_FEATURES, F)),
            "conv1.b": np.zeros(F),
            "conv2.w": uniform_init(rng, k * F, (k * F, 1)),
            "conv2.b": np.zeros(1),
        }

    @classmethod
    def expected_param_count(cls, filters=32, kernel=3, padding="causal"):
        return kernel * N_FEATURES * filters + filters + kernel * filters + 1

    def forward(self, x, training=False, rng=None):
        k, mode = self.hyper["kernel"], self.hyper["padding"]
        p = self.params
        h = ag.relu(conv1d(x, p["conv1.w"], p["conv1.b"], k, mode))
        out = conv1d(h, p["conv2.w"], p["conv2.b"], k, mode)
        return out.reshape(out.shape[0], out.shape[1])
