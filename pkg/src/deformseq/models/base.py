"""Shared plumbing for the sequence models: parameters, prediction, checkpoints."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from ..autograd import RngStream, Tensor, no_grad
from ..dataset import Normalization
from ..errors import SchemaError, ShapeError, StateError

CHECKPOINT_FORMAT = "deformseq-checkpoint"
CHECKPOINT_VERSION = 1
N_FEATURES = 3


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class SequenceModel:
    """Maps a ``(batch, steps, 3)`` feature tensor to ``(batch, steps)`` damage.

    Subclasses set ``arch`` and implement ``_build`` (parameter shapes and
    initial values) and ``forward``.  Parameters live in ``self.params`` as
    leaf Tensors that optimisers update in place.
    """

    arch = ""

    def __init__(self, seed: int = 0, normalization: Normalization | None = None, **hyper):
        self.seed = int(seed)
        self.normalization = normalization
        self.hyper = self._check_hyper(dict(hyper))
        rng = RngStream(self.seed).generator
        self.params = {name: Tensor(value, requires_grad=True, name=name)
                       for name, value in self._build(rng).items()}

    # subclass hooks --------------------------------------------------------
    def _check_hyper(self, hyper: dict) -> dict:
        return hyper

    def _build(self, rng: np.random.Generator) -> dict:
        raise NotImplementedError

    def forward(self, x: Tensor, training: bool = False, rng: RngStream | None = None) -> Tensor:
        raise NotImplementedError

    @classmethod
    def expected_param_count(cls, **hyper) -> int:
        raise NotImplementedError

    # ----------------------------------------------------------------------
    def __call__(self, x, training=False, rng=None):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3 or x.shape[-1] != N_FEATURES:
            raise ShapeError(f"expected (batch, steps, {N_FEATURES}) features, got {x.shape}")
        if x.shape[1] < 1:
            raise ShapeError("sequences need at least one step")
        return self.forward(x, training=training, rng=rng)

    @property
    def n_params(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def get_state(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def set_state(self, state: dict) -> None:
        for k, p in self.params.items():
            if state[k].shape != p.data.shape:
                raise ShapeError(f"parameter {k}: shape {state[k].shape} != {p.data.shape}")
            p.data = np.array(state[k], dtype=np.float64, copy=True)

    def copy(self) -> "SequenceModel":
        clone = type(self)(seed=self.seed, normalization=self.normalization, **self.hyper)
        clone.set_state(self.get_state())
        return clone

    # prediction --------------------------------------------------------------
    def predict_features(self, features: np.ndarray) -> np.ndarray:
        """Inference on raw (unnormalised) features, ``(steps, 3)`` or ``(batch, steps, 3)``."""
        if self.normalization is None:
            raise StateError(f"{self.arch} model has no fitted normalization")
        feats = np.asarray(features, dtype=np.float64)
        single = feats.ndim == 2
        with no_grad():
            out = self(self.normalization.apply(feats), training=False).data
        return out[0] if single else out

    def predict(self, path) -> np.ndarray:
        """Per-step damage estimate for one LoadingPath."""
        return self.predict_features(path.features)

    # checkpoints ---------------------------------------------------------------
    def to_dict(self) -> dict:
        if self.normalization is None:
            raise StateError("cannot checkpoint a model without normalization parameters")
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "arch": self.arch,
            "hyperparameters": self.hyper,
            "seed": self.seed,
            "normalization": self.normalization.to_dict(),
            "params": {k: {"shape": list(p.data.shape), "data": p.data.ravel().tolist()}
                       for k, p in self.params.items()},
        }


def model_from_dict(d: dict, registry: dict) -> SequenceModel:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"not a checkpoint document (format={d.get('format')!r})")
    arch = d.get("arch")
    if arch not in registry:
        raise SchemaError(f"unknown architecture {arch!r}", column="arch")
    model = registry[arch](seed=d["seed"], normalization=Normalization.from_dict(d["normalization"]),
                           **d["hyperparameters"])
    state = {}
    for k, blob in d["params"].items():
        state[k] = np.array(blob["data"], dtype=np.float64).reshape(blob["shape"])
    if set(state) != set(model.params):
        raise SchemaError(f"checkpoint parameters {sorted(state)} do not match {arch}")
    model.set_state(state)
    return model


def dump_json(obj, file_path) -> None:
    Path(file_path).write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n", encoding="utf-8")
