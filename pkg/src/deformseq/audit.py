"""Prefix-consistency audit of damage surrogates on truncated histories.

A surrogate embedded in an incremental solver only ever sees the history
up to the current step, so its prediction for step ``t`` must not change
when later steps are removed.  The audit truncates each path, predicts on
both versions and compares the overlap.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .deformation import LoadingPath, localization_step
from .errors import DeformSeqError, InvalidInputError

DEFAULT_FRACTIONS = (0.25, 0.5, 0.75, 0.9)


@dataclass
class AuditConfig:
    fractions: tuple = DEFAULT_FRACTIONS
    tolerance: float = 1e-9
    threshold: float = 1.0
    paths: int | list | None = 100

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if not self.fractions or any(not 0.0 < f < 1.0 for f in self.fractions):
            raise InvalidInputError(f"truncation fractions must lie in (0, 1), got {self.fractions}")
        if not self.tolerance > 0:
            raise InvalidInputError("deviation tolerance must be positive")


@dataclass
class AuditEntry:
    path_id: int
    fraction: float
    n_kept: int
    max_dev: float
    mean_dev: float
    loc_full: int | None
    loc_trunc: int | None


@dataclass
class AuditReport:
    arch: str
    tolerance: float
    entries: list = field(default_factory=list)
    mode: dict = field(default_factory=dict)

    @property
    def max_deviation(self) -> float:
        return max((e.max_dev for e in self.entries), default=0.0)

    def path_max_deviation(self) -> dict:
        out = {}
        for e in self.entries:
            out[e.path_id] = max(out.get(e.path_id, 0.0), e.max_dev)
        return out

    @property
    def consistent_fraction(self) -> float:
        per_path = self.path_max_deviation()
        return sum(v <= self.tolerance for v in per_path.values()) / len(per_path) if per_path else 1.0

    @property
    def verdict(self) -> str:
        return "consistent" if all(e.max_dev <= self.tolerance for e in self.entries) else "inconsistent"

    @property
    def localization_shifts(self) -> int:
        """Pairs whose localization step differs between full (restricted to
        the overlap) and truncated input."""
        return sum(e.loc_full != e.loc_trunc for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "format": "deformseq-audit",
            "arch": self.arch,
            "mode": self.mode,
            "tolerance": self.tolerance,
            "verdict": self.verdict,
            "consistent_path_fraction": self.consistent_fraction,
            "max_deviation": self.max_deviation,
            "localization_shifts": self.localization_shifts,
            "entries": [vars(e).copy() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuditReport":
        if d.get("format") != "deformseq-audit":
            raise InvalidInputError("not an audit document")
        return cls(d["arch"], d["tolerance"], [AuditEntry(**e) for e in d["entries"]], d.get("mode", {}))

    def save(self, json_path, csv_path=None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        if csv_path is not None:
            Path(csv_path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def load(cls, json_path) -> "AuditReport":
        return cls.from_dict(json.loads(Path(json_path).read_text(encoding="utf-8")))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path_id", "fraction", "max_dev", "mean_dev", "loc_full", "loc_trunc"])
        for e in self.entries:
            w.writerow([e.path_id, repr(e.fraction), repr(e.max_dev), repr(e.mean_dev),
                        "" if e.loc_full is None else e.loc_full,
                        "" if e.loc_trunc is None else e.loc_trunc])
        return buf.getvalue()


def kept_steps(n: int, fraction: float) -> int:
    return math.ceil(fraction * n)


def truncate_path(path: LoadingPath, fraction: float) -> LoadingPath:
    """Keep the first ``ceil(fraction * n)`` steps of every series."""
    if not 0.0 < fraction < 1.0:
        raise InvalidInputError(f"truncation fraction must lie in (0, 1), got {fraction}")
    n_keep = kept_steps(len(path), fraction)
    if n_keep < 1:
        raise InvalidInputError(f"truncating {len(path)} steps at {fraction} leaves nothing")
    return path.truncated(n_keep)


def _select(dataset, spec) -> list:
    if spec is None:
        return list(dataset.paths)
    if isinstance(spec, int):
        return list(dataset.paths[:spec])
    wanted = set(spec)
    return [p for p in dataset.paths if p.path_id in wanted]


def _model_mode(model) -> dict:
    keys = ("padding", "mask", "positional")
    return {k: model.hyper[k] for k in keys if k in model.hyper}


def prefix_consistency_audit(model, dataset, config: AuditConfig | None = None,
                             batch_size: int = 128) -> AuditReport:
    """Compare predictions on full and truncated histories for every
    audited path and fraction.  Deviation is measured only over the steps
    both inputs share."""
    config = config or AuditConfig()
    paths = sorted(_select(dataset, config.paths), key=lambda p: p.path_id)
    if not paths:
        raise InvalidInputError("no paths selected for audit")
    report = AuditReport(getattr(model, "arch", type(model).__name__), config.tolerance,
                         mode=_model_mode(model) if hasattr(model, "hyper") else {})
    feats = np.stack([p.features for p in paths])
    n = feats.shape[1]
    full = np.concatenate([model.predict_features(feats[i:i + batch_size])
                           for i in range(0, len(paths), batch_size)])
    per_fraction = {}
    for frac in config.fractions:
        k = kept_steps(n, frac)
        if k < 1:
            raise InvalidInputError(f"fraction {frac} leaves no steps of {n}")
        per_fraction[frac] = (k, np.concatenate([model.predict_features(feats[i:i + batch_size, :k])
                                                 for i in range(0, len(paths), batch_size)]))
    for j, p in enumerate(paths):
        for frac in config.fractions:
            k, trunc = per_fraction[frac]
            dev = np.abs(full[j, :k] - trunc[j])
            report.entries.append(AuditEntry(
                path_id=int(p.path_id), fraction=frac, n_kept=k,
                max_dev=float(dev.max()), mean_dev=float(dev.mean()),
                loc_full=localization_step(full[j, :k], config.threshold),
                loc_trunc=localization_step(trunc[j], config.threshold),
            ))
    return report


# ---------------------------------------------------------------------------
# architecture comparison

MATRIX_CELLS = (
    ("encdec_gru", "encoder-decoder GRU", {"hidden": 16}),
    ("conv", "conv causal", {"filters": 16, "kernel": 5, "padding": "causal"}),
    ("conv", "conv symmetric", {"filters": 16, "kernel": 5, "padding": "symmetric"}),
    ("transformer", "transformer masked", {"d_model": 16, "heads": 2, "d_ff": 32, "mask": "causal"}),
    ("transformer", "transformer unmasked", {"d_model": 16, "heads": 2, "d_ff": 32, "mask": "none"}),
)


@dataclass
class MatrixRow:
    label: str
    arch: str
    hyper: dict
    verdict: str | None
    max_deviation: float | None
    consistent_fraction: float | None
    test_mse: float | None
    error: str | None = None
    report: AuditReport | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {k: v for k, v in vars(self).items() if k != "report"}


def architecture_causality_matrix(dataset, config: AuditConfig | None = None, train_config=None,
                                  split_fraction: float = 0.8, seed: int = 0, cells=MATRIX_CELLS) -> list:
    """Briefly train every architecture/mode cell and audit it.

    A failure in one cell is recorded on its row; the others still run.
    """
    from .dataset import split as split_dataset
    from .models import build_model
    from .training import TrainConfig, train

    if len(dataset) == 0:
        raise InvalidInputError("dataset is empty")
    config = config or AuditConfig()
    train_config = train_config or TrainConfig(learning_rate=3e-3, batch_size=32, max_epochs=5, seed=seed)
    sp = split_dataset(dataset, split_fraction, seed)
    rows = []
    for arch, label, hyper in cells:
        try:
            model, hist = train(build_model(arch, seed=seed, **hyper), sp, train_config)
            rep = prefix_consistency_audit(model, dataset, config)
            rows.append(MatrixRow(label, arch, dict(hyper), rep.verdict, rep.max_deviation,
                                  rep.consistent_fraction, hist.best_val_mse, report=rep))
        except (DeformSeqError, ArithmeticError, ValueError) as exc:
            rows.append(MatrixRow(label, arch, dict(hyper), None, None, None, None, error=str(exc)))
    return rows


def format_matrix(rows) -> str:
    lines = [f"{'cell':<22} {'verdict':<13} {'max dev':>10} {'consistent':>10} {'test mse':>10}"]
    for r in rows:
        if r.error:
            lines.append(f"{r.label:<22} error: {r.error}")
            continue
        lines.append(f"{r.label:<22} {r.verdict:<13} {r.max_deviation:10.2e} "
                     f"{r.consistent_fraction:10.2f} {r.test_mse:10.2e}")
    return "\n".join(lines)
