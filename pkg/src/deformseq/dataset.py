"""Path collections: CSV persistence, synthesis, normalisation and splitting.

CSV layout, one row per increment, header mandatory::

    path_id,step,eps1,eps2,phi,eps_bar,eps_bar_fail,damage

``step`` is 0-based.  Floats are written with ``repr`` so they survive a
save/load cycle bit for bit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .deformation import (
    BilinearSpec,
    LoadingPath,
    equivalent_strain_increment,
    generate_bilinear_path,
    synthetic_failure_strain,
)
from .errors import InvalidInputError, SchemaError, ShapeError

COLUMNS = ("path_id", "step", "eps1", "eps2", "phi", "eps_bar", "eps_bar_fail", "damage")
FEATURES = ("eps1", "eps2", "phi")
PHYSICS_TOL = 1e-6


@dataclass(frozen=True)
class Normalization:
    """Per-feature affine map ``(x - shift) / scale`` for (eps1, eps2, phi)."""

    shift: tuple
    scale: tuple
    clamped: tuple = (False, False, False)

    def __post_init__(self):
        if len(self.shift) != 3 or len(self.scale) != 3:
            raise ShapeError("normalization needs exactly three shift/scale entries")
        if any(not (s > 0) for s in self.scale):
            raise InvalidInputError(f"normalization scales must be positive, got {self.scale}")

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - np.asarray(self.shift)) / np.asarray(self.scale)

    @property
    def warned(self) -> bool:
        return any(self.clamped)

    def to_dict(self) -> dict:
        return {"shift": list(self.shift), "scale": list(self.scale), "clamped": list(self.clamped)}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(tuple(float(v) for v in d["shift"]), tuple(float(v) for v in d["scale"]),
                   tuple(bool(v) for v in d.get("clamped", (False,) * 3)))


@dataclass
class PathDataset:
    paths: list
    normalization: Normalization | None = None
    split_seed: int | None = None

    def __post_init__(self):
        lengths = {len(p) for p in self.paths}
        if len(lengths) > 1:
            raise ShapeError(f"paths have inconsistent step counts {sorted(lengths)}")

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    @property
    def n_steps(self) -> int:
        return len(self.paths[0]) if self.paths else 0

    @property
    def ids(self) -> list:
        return [p.path_id for p in self.paths]

    def by_id(self, path_id) -> LoadingPath:
        for p in self.paths:
            if p.path_id == path_id:
                return p
        raise KeyError(path_id)

    def features(self) -> np.ndarray:
        """``(n_paths, n_steps, 3)`` raw feature tensor."""
        return np.stack([p.features for p in self.paths])

    def targets(self) -> np.ndarray:
        return np.stack([p.damage for p in self.paths])


@dataclass
class DatasetSplit:
    train: PathDataset
    test: PathDataset
    fraction: float


# ---------------------------------------------------------------------------
# CSV


def _fmt(x: float) -> str:
    return repr(float(x))


def save_csv(dataset: PathDataset, file_path) -> None:
    file_path = Path(file_path)
    try:
        with file_path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for p in sorted(dataset.paths, key=lambda p: p.path_id):
                fail = _fmt(p.eps_bar_fail)
                for i in range(len(p)):
                    w.writerow((int(p.path_id), i, _fmt(p.eps1[i]), _fmt(p.eps2[i]), _fmt(p.phi[i]),
                                _fmt(p.eps_bar[i]), fail, _fmt(p.damage[i])))
    except OSError as exc:
        raise OSError(f"could not write dataset to {file_path}: {exc}") from exc


def _check_physics(path: LoadingPath, tol: float) -> None:
    d1 = np.diff(path.eps1, prepend=0.0)
    d2 = np.diff(path.eps2, prepend=0.0)
    expected = np.cumsum(equivalent_strain_increment(d1, d2))
    if np.max(np.abs(expected - path.eps_bar)) > tol:
        raise SchemaError(f"path {path.path_id}: eps_bar disagrees with the accumulated "
                          f"equivalent strain of its increments", column="eps_bar")


def load_csv(file_path, column_map: dict | None = None, check_physics: bool = True) -> PathDataset:
    """Read a dataset written by :func:`save_csv` (or a compatible export).

    ``column_map`` maps schema names to the names used in the file, for
    exports whose headers differ.  ``check_physics`` re-derives ``eps_bar``
    from the strain increments and ``damage`` from ``eps_bar`` and rejects
    mismatches above 1e-6.
    """
    file_path = Path(file_path)
    names = {c: (column_map or {}).get(c, c) for c in COLUMNS}
    rows_by_path: dict = {}
    with file_path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file, header row missing", row=1) from None
        index = {}
        for col in COLUMNS:
            if names[col] not in header:
                raise SchemaError("missing column", row=1, column=names[col])
            index[col] = header.index(names[col])
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                pid = int(row[index["path_id"]])
            except (ValueError, IndexError):
                raise SchemaError("non-integer path_id", row=lineno, column=names["path_id"]) from None
            try:
                step = int(row[index["step"]])
            except (ValueError, IndexError):
                raise SchemaError("non-integer step", row=lineno, column=names["step"]) from None
            vals = []
            for col in COLUMNS[2:]:
                try:
                    v = float(row[index[col]])
                except (ValueError, IndexError):
                    raise SchemaError("non-numeric cell", row=lineno, column=names[col]) from None
                vals.append(v)
            rows = rows_by_path.setdefault(pid, [])
            if step != len(rows):
                raise SchemaError(f"non-monotone step index {step} for path {pid} "
                                  f"(expected {len(rows)})", row=lineno, column=names["step"])
            rows.append(vals)

    paths = []
    for pid in sorted(rows_by_path):
        a = np.array(rows_by_path[pid], dtype=np.float64)
        eps1, eps2, phi, eps_bar, fails, damage = (a[:, j].copy() for j in range(6))
        if np.any(fails != fails[0]):
            raise SchemaError(f"path {pid}: eps_bar_fail varies along the path", column=names["eps_bar_fail"])
        p = LoadingPath(path_id=pid, eps1=eps1, eps2=eps2, phi=phi, eps_bar=eps_bar,
                        eps_bar_fail=float(fails[0]), damage=damage)
        try:
            p.validate(tol=PHYSICS_TOL if check_physics else math.inf)
        except InvalidInputError as exc:
            raise SchemaError(str(exc)) from None
        if check_physics:
            _check_physics(p, PHYSICS_TOL)
        paths.append(p)
    return PathDataset(paths)


# ---------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class SynthesisRanges:
    """Sampling ranges for synthetic bilinear paths (angles in radians).

    ``total_strain`` is the strain-space length of a whole path, so the
    per-step magnitude is ``total_strain / n_steps``.  The default angle
    range runs from plane strain (0) to equibiaxial stretching (pi/4).
    """

    phi1: tuple = (0.0, math.pi / 4)
    phi2: tuple = (0.0, math.pi / 4)
    switch_fraction: tuple = (0.2, 0.8)
    total_strain: float = 0.3
    fail_c0: float = 0.3
    fail_c1: float = 0.4
    fail_phi_ref: float = math.pi / 4

    def check(self) -> None:
        for name in ("phi1", "phi2", "switch_fraction"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise InvalidInputError(f"degenerate range for {name}: ({lo}, {hi})")
        lo, hi = self.switch_fraction
        if lo < 0 or hi > 1:
            raise InvalidInputError(f"switch_fraction range must lie in [0, 1], got ({lo}, {hi})")
        if not self.total_strain > 0:
            raise InvalidInputError("total_strain must be positive")
        if not self.fail_c0 > 0 or self.fail_c1 < 0:
            raise InvalidInputError("failure curve needs c0 > 0 and c1 >= 0")


def synthesize(n_paths: int, n_steps: int, seed: int = 42,
               ranges: SynthesisRanges | None = None) -> PathDataset:
    """Sample ``n_paths`` synthetic bilinear paths deterministically from ``seed``.

    The failure strain is the analytic stand-in evaluated at the final
    segment angle; it is not a simulation result.
    """
    ranges = ranges or SynthesisRanges()
    ranges.check()
    if int(n_paths) != n_paths or n_paths < 1:
        raise InvalidInputError(f"n_paths must be >= 1, got {n_paths}")
    if int(n_steps) != n_steps or n_steps < 2:
        raise InvalidInputError(f"n_steps must be >= 2, got {n_steps}")
    rng = np.random.default_rng(seed)
    step = ranges.total_strain / n_steps
    paths = []
    for pid in range(int(n_paths)):
        phi1 = rng.uniform(*ranges.phi1)
        phi2 = rng.uniform(*ranges.phi2)
        sf = rng.uniform(*ranges.switch_fraction)
        n_first = math.floor(sf * n_steps)
        phi_final = phi2 if n_first < n_steps else phi1
        fail = float(synthetic_failure_strain(phi_final, ranges.fail_c0, ranges.fail_c1, ranges.fail_phi_ref))
        spec = BilinearSpec(phi1=phi1, phi2=phi2, switch_fraction=sf, n_steps=int(n_steps),
                            step_magnitude=step, eps_bar_fail=fail)
        paths.append(generate_bilinear_path(spec, path_id=pid))
    return PathDataset(paths, split_seed=seed)


# ---------------------------------------------------------------------------
# normalisation and splitting


def fit_normalization(dataset: PathDataset) -> Normalization:
    if len(dataset) == 0:
        raise InvalidInputError("cannot fit normalization on an empty dataset")
    flat = np.concatenate([p.features for p in dataset.paths], axis=0)
    shift = flat.mean(axis=0)
    std = flat.std(axis=0)
    # exact constancy test; the float mean of a constant column can leave std ~1e-17
    clamped = tuple(bool(c) for c in (np.ptp(flat, axis=0) == 0) | ~(std > 0))
    scale = tuple(1.0 if c else float(s) for c, s in zip(clamped, std))
    return Normalization(tuple(float(v) for v in shift), scale, clamped)


def apply_normalization(dataset: PathDataset, norm: Normalization) -> PathDataset:
    """Return a copy whose (eps1, eps2, phi) series are mapped through ``norm``.

    ``eps_bar`` and ``damage`` are left as they are.
    """
    out = []
    for p in dataset.paths:
        f = norm.apply(p.features)
        out.append(LoadingPath(path_id=p.path_id, eps1=f[:, 0], eps2=f[:, 1], phi=f[:, 2],
                               eps_bar=p.eps_bar, eps_bar_fail=p.eps_bar_fail, damage=p.damage,
                               dt=p.dt, meta=dict(p.meta)))
    return PathDataset(out, normalization=norm, split_seed=dataset.split_seed)


def normalize_fit_transform(dataset: PathDataset):
    """Fit per-feature z-scores on ``dataset`` and apply them.

    A zero-variance feature keeps scale 1 and is flagged in ``clamped``.
    """
    norm = fit_normalization(dataset)
    return apply_normalization(dataset, norm), norm


def split(dataset: PathDataset, fraction: float = 0.8, seed: int = 42) -> DatasetSplit:
    if not 0.0 < fraction < 1.0:
        raise InvalidInputError(f"train fraction must lie in (0, 1), got {fraction}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fraction * n))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    train = [dataset.paths[i] for i in sorted(order[:n_train])]
    test = [dataset.paths[i] for i in sorted(order[n_train:])]
    return DatasetSplit(
        train=PathDataset(train, dataset.normalization, seed),
        test=PathDataset(test, dataset.normalization, seed),
        fraction=fraction,
    )
