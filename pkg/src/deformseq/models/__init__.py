"""Sequence architectures behind one prediction contract."""
import json
from pathlib import Path

from .base import SequenceModel, dump_json, model_from_dict
from .conv import Conv1dNet, conv1d
from .gru import CausalGru, EncoderDecoderGru, GruCellParams, gru_cell_step, run_gru
from .transformer import TransformerBlockNet, causal_mask, scaled_dot_product_attention

ARCHITECTURES = {
    EncoderDecoderGru.arch: EncoderDecoderGru,
    Conv1dNet.arch: Conv1dNet,
    TransformerBlockNet.arch: TransformerBlockNet,
    CausalGru.arch: CausalGru,
}


def build_model(arch: str, seed: int = 0, normalization=None, **hyper) -> SequenceModel:
    try:
        cls = ARCHITECTURES[arch]
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}") from None
    return cls(seed=seed, normalization=normalization, **hyper)


def predict(model: SequenceModel, path):
    return model.predict(path)


def save_checkpoint(model: SequenceModel, file_path) -> None:
    dump_json(model.to_dict(), file_path)


def load_checkpoint(file_path) -> SequenceModel:
    return model_from_dict(json.loads(Path(file_path).read_text(encoding="utf-8")), ARCHITECTURES)


__all__ = [
    "ARCHITECTURES", "CausalGru", "Conv1dNet", "EncoderDecoderGru", "GruCellParams",
    "SequenceModel", "TransformerBlockNet", "build_model", "causal_mask", "conv1d",
    "gru_cell_step", "load_checkpoint", "predict", "run_gru", "save_checkpoint",
    "scaled_dot_product_attention",
]
