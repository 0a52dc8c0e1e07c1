"""Bayesian hyperparameter search: Matérn-5/2 Gaussian process + expected improvement.

The first few trials are scrambled-Sobol samples; after that a GP fitted
on the unit-cube encoding of past configurations proposes the point of
maximal expected improvement.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .autograd import RngStream
from .errors import DivergenceError, InvalidInputError, StudyError
from .models import build_model
from .training import TrainConfig, TrainHistory, train

log = logging.getLogger(__name__)

N_INITIAL = 5
N_CANDIDATES = 1024
N_LOCAL_STARTS = 5
GP_NOISE = 1e-6
LENGTHSCALE_GRID = (0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.5)
KINDS = ("float", "log", "int", "int_log2")


@dataclass(frozen=True)
class Dimension:
    """One search axis.  ``int_log2`` samples powers of two between the bounds."""

    name: str
    kind: str
    low: float
    high: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"dimension {self.name}: unknown kind {self.kind!r}")
        if not self.low <= self.high:
            raise InvalidInputError(f"dimension {self.name}: bounds out of order ({self.low}, {self.high})")
        if self.kind == "log" and self.low <= 0:
            raise InvalidInputError(f"dimension {self.name}: log scale needs positive bounds")
        if self.kind == "int_log2":
            for b in (self.low, self.high):
                if b <= 0 or 2 ** round(math.log2(b)) != b:
                    raise InvalidInputError(f"dimension {self.name}: int_log2 bounds must be powers of two")

    def to_unit(self, value) -> float:
        lo, hi = self.low, self.high
        if hi == lo:
            return 0.5
        if self.kind == "log":
            return (math.log(value) - math.log(lo)) / (math.log(hi) - math.log(lo))
        if self.kind == "int_log2":
            return (math.log2(value) - math.log2(lo)) / (math.log2(hi) - math.log2(lo))
        return (value - lo) / (hi - lo)

    def from_unit(self, u: float):
        u = min(max(float(u), 0.0), 1.0)
        lo, hi = self.low, self.high
        if self.kind == "float":
            return lo + u * (hi - lo)
        if self.kind == "log":
            return float(min(max(math.exp(math.log(lo) + u * (math.log(hi) - math.log(lo))), lo), hi))
        if self.kind == "int":
            return int(min(max(round(lo + u * (hi - lo)), lo), hi))
        e_lo, e_hi = round(math.log2(lo)), round(math.log2(hi))
        return int(2 ** round(e_lo + u * (e_hi - e_lo)))

    def contains(self, value) -> bool:
        if self.kind in ("int", "int_log2") and int(value) != value:
            return False
        if self.kind == "int_log2" and 2 ** round(math.log2(value)) != value:
            return False
        return self.low <= value <= self.high


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple

    def __post_init__(self):
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise InvalidInputError(f"duplicate dimension names in {names}")

    @property
    def names(self):
        return [d.name for d in self.dimensions]

    def __len__(self):
        return len(self.dimensions)

    def encode(self, config: dict) -> np.ndarray:
        return np.array([d.to_unit(config[d.name]) for d in self.dimensions])

    def decode(self, u) -> dict:
        return {d.name: d.from_unit(x) for d, x in zip(self.dimensions, u)}

    def contains(self, config: dict) -> bool:
        return all(d.contains(config[d.name]) for d in self.dimensions)

    def to_dict(self) -> dict:
        return {d.name: {"kind": d.kind, "low": d.low, "high": d.high} for d in self.dimensions}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        return cls(tuple(Dimension(k, v["kind"], v["low"], v["high"]) for k, v in d.items()))


_LR = Dimension("learning_rate", "log", 1e-5, 1e-3)
_BATCH = Dimension("batch_size", "int_log2", 16, 256)

DEFAULT_SPACES = {
    "encdec_gru": SearchSpace((_LR, Dimension("hidden", "int", 16, 128), _BATCH)),
    "conv": SearchSpace((Dimension("filters", "int", 16, 128), Dimension("kernel", "int", 3, 7), _LR, _BATCH)),
    "transformer": SearchSpace((
        Dimension("learning_rate", "log", 1e-5, 1e-2),
        Dimension("d_model", "int", 16, 128),
        Dimension("heads", "int", 1, 8),
        Dimension("d_ff", "int", 32, 256),
        _BATCH,
    )),
}
DEFAULT_SPACES["gru"] = DEFAULT_SPACES["encdec_gru"]


# ---------------------------------------------------------------------------
# Gaussian process


def matern52(a: np.ndarray, b: np.ndarray, lengthscale: float) -> np.ndarray:
    d = np.sqrt(np.maximum(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1), 0.0)) / lengthscale
    s5 = math.sqrt(5.0) * d
    return (1.0 + s5 + 5.0 / 3.0 * d * d) * np.exp(-s5)


class GaussianProcess:
    """Zero-mean GP on standardised targets; lengthscale chosen by profile
    likelihood over a fixed grid, signal variance in closed form."""

    def __init__(self, noise: float = GP_NOISE, grid=LENGTHSCALE_GRID):
        self.noise = noise
        self.grid = grid

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GaussianProcess":
        self.x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.y_mean = y.mean()
        self.y_std = y.std() if y.std() > 0 else 1.0
        z = (y - self.y_mean) / self.y_std
        n = len(z)
        best = None
        for ls in self.grid:
            k = matern52(self.x, self.x, ls) + self.noise * np.eye(n)
            try:
                cf = cho_factor(k, lower=True)
            except np.linalg.LinAlgError:
                continue
            alpha = cho_solve(cf, z)
            amp = float(z @ alpha) / n
            if not amp > 0:
                continue
            loglik = -0.5 * n * math.log(amp) - np.sum(np.log(np.diag(cf[0])))
            if best is None or loglik > best[0]:
                best = (loglik, ls, cf, alpha, amp)
        if best is None:
            raise np.linalg.LinAlgError("no lengthscale gave a positive-definite kernel")
        _, self.lengthscale, self._cf, self._alpha, self.amplitude = best
        return self

    def predict(self, xq: np.ndarray):
        """Posterior mean and standard deviation in the original target units."""
        ks = matern52(np.atleast_2d(xq), self.x, self.lengthscale)
        mu = ks @ self._alpha
        v = cho_solve(self._cf, ks.T)
        var = np.maximum(1.0 - np.sum(ks * v.T, axis=1), 1e-12) * self.amplitude
        return mu * self.y_std + self.y_mean, np.sqrt(var) * self.y_std


def expected_improvement(mu, sigma, best: float, xi: float = 0.0):
    """EI for minimisation."""
    sigma = np.maximum(sigma, 1e-12)
    imp = best - mu - xi
    z = imp / sigma
    return imp * norm.cdf(z) + sigma * norm.pdf(z)


# ---------------------------------------------------------------------------
# suggestion


@dataclass
class TrialRecord:
    index: int
    config: dict
    train_mse: float | None
    test_mse: float | None
    status: str = "ok"
    history: TrainHistory | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index, "config": self.config, "train_mse": self.train_mse,
            "test_mse": self.test_mse, "status": self.status,
            "history": self.history.to_dict() if self.history is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        h = d.get("history")
        return cls(d["index"], d["config"], d["train_mse"], d["test_mse"], d["status"],
                   TrainHistory.from_dict(h) if h is not None else None)


def _objective_values(history, transform: str) -> np.ndarray:
    ok = [t.test_mse for t in history if t.status == "ok"]
    worst = max(ok) * 10.0 if ok else 1.0
    y = np.array([t.test_mse if t.status == "ok" else worst for t in history], dtype=np.float64)
    if transform == "log":
        y = np.log(np.maximum(y, 1e-300))
    return y


def suggest(space: SearchSpace, history, rng: RngStream, transform: str = "none",
            n_initial: int = N_INITIAL, n_candidates: int = N_CANDIDATES) -> dict:
    """Next configuration to evaluate.

    ``history`` is the list of TrialRecords so far.  The first ``n_initial``
    proposals walk a scrambled Sobol sequence seeded by ``rng.seed``; later
    ones maximise EI over random candidates refined by bounded L-BFGS from
    the best few.  A singular GP fit falls back to a random point.
    ``transform="log"`` models the log of the objective.
    """
    d = len(space)
    k = len(history)
    step_rng = rng.child(k).generator
    if k < n_initial:
        m = max(1, math.ceil(math.log2(max(n_initial, 2))))
        sobol = qmc.Sobol(d, scramble=True, seed=np.random.default_rng(rng.seed))
        return space.decode(sobol.random_base2(m)[k % (2 ** m)])

    x = np.array([space.encode(t.config) for t in history])
    y = _objective_values(history, transform)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gp = GaussianProcess().fit(x, y)
    except (np.linalg.LinAlgError, ValueError):
        log.warning("GP fit failed after %d trials, sampling at random", k)
        return space.decode(step_rng.random(d))

    best = float(y.min())
    cand = step_rng.random((n_candidates, d))
    mu, sd = gp.predict(cand)
    ei = expected_improvement(mu, sd, best)

    def neg_ei(u):
        m_, s_ = gp.predict(u[None, :])
        return -float(expected_improvement(m_, s_, best)[0])

    top = np.argsort(-ei)[:N_LOCAL_STARTS]
    best_u, best_val = cand[top[0]], -ei[top[0]]
    for i in top:
        res = minimize(neg_ei, cand[i], method="L-BFGS-B", bounds=[(0.0, 1.0)] * d,
                       options={"maxiter": 50})
        if res.success and res.fun < best_val:
            best_u, best_val = np.clip(res.x, 0.0, 1.0), res.fun
    return space.decode(best_u)


# ---------------------------------------------------------------------------
# studies


@dataclass
class Study:
    arch: str
    space: SearchSpace
    seed: int
    trials: list = field(default_factory=list)
    fixed: dict = field(default_factory=dict)

    @property
    def best_index(self):
        ok = [t for t in self.trials if t.status == "ok"]
        if not ok:
            return None
        return min(ok, key=lambda t: (t.test_mse, t.index)).index

    @property
    def best(self) -> TrialRecord:
        return self.trials[self.best_index]

    def best_so_far(self) -> list:
        out, cur = [], math.inf
        for t in self.trials:
            if t.status == "ok":
                cur = min(cur, t.test_mse)
            out.append(cur)
        return out

    def to_dict(self) -> dict:
        return {
            "format": "deformseq-study",
            "arch": self.arch,
            "seed": self.seed,
            "space": self.space.to_dict(),
            "fixed": self.fixed,
            "best_index": self.best_index,
            "trials": [t.to_dict() for t in self.trials],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Study":
        if d.get("format") != "deformseq-study":
            raise InvalidInputError("not a study document")
        return cls(d["arch"], SearchSpace.from_dict(d["space"]), d["seed"],
                   [TrialRecord.from_dict(t) for t in d["trials"]], d.get("fixed", {}))

    def save(self, json_path, csv_path=None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        if csv_path is not None:
            Path(csv_path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def load(cls, json_path) -> "Study":
        return cls.from_dict(json.loads(Path(json_path).read_text(encoding="utf-8")))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "status", "train_mse", "test_mse", "best_so_far", *self.space.names])
        for t, b in zip(self.trials, self.best_so_far()):
            w.writerow([t.index, t.status, _num(t.train_mse), _num(t.test_mse), _num(b),
                        *[t.config[n] for n in self.space.names]])
        return buf.getvalue()


def _num(v):
    return "" if v is None else repr(float(v))


def fit_heads(config: dict, low: int = 16, high: int = 128) -> dict:
    """Round ``d_model`` to a multiple of ``heads`` inside ``[low, high]``."""
    if "heads" not in config or "d_model" not in config:
        return config
    h = int(config["heads"])
    d = h * max(1, round(config["d_model"] / h))
    while d < low:
        d += h
    while d > high:
        d -= h
    return {**config, "d_model": int(d)}


TRAIN_KEYS = ("learning_rate", "batch_size")


def run_trial(arch: str, config: dict, split, fixed: dict, train_defaults: dict, seed: int, index: int):
    hyper = {k: v for k, v in config.items() if k not in TRAIN_KEYS}
    hyper.update(fixed)
    model = build_model(arch, seed=seed + index, **hyper)
    tc = TrainConfig(learning_rate=float(config["learning_rate"]), batch_size=int(config["batch_size"]),
                     seed=seed + index, **train_defaults)
    try:
        _, hist = train(model, split, tc)
    except DivergenceError as exc:
        return TrialRecord(index, config, None, None, "diverged", exc.history)
    return TrialRecord(index, config, hist.best_train_mse, hist.best_val_mse, "ok", hist)


def run_study(arch: str, split, space: SearchSpace | None = None, n_trials: int = 20, seed: int = 0,
              fixed: dict | None = None, max_epochs: int = 100, patience: int = 5, progress=None) -> Study:
    """Run ``n_trials`` sequential train/evaluate rounds guided by :func:`suggest`.

    ``fixed`` holds model hyperparameters that are not searched (e.g.
    conv padding or transformer mask mode).
    """
    space = space or DEFAULT_SPACES[arch]
    study = Study(arch, space, seed, fixed=dict(fixed or {}))
    rng = RngStream(seed)
    train_defaults = {"max_epochs": max_epochs, "patience": patience}
    for i in range(n_trials):
        config = suggest(space, study.trials, rng, transform="log")
        if "heads" in config and "d_model" in space.names:
            dm = space.dimensions[space.names.index("d_model")]
            config = fit_heads(config, int(dm.low), int(dm.high))
        record = run_trial(arch, config, split, study.fixed, train_defaults, seed, i)
        study.trials.append(record)
        if progress:
            progress(record)
    if study.best_index is None:
        raise StudyError(f"all {n_trials} trials diverged for {arch}")
    return study
