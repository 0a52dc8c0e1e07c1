"""Plasticity bookkeeping for bilinear strain paths.

Equivalent plastic strain is accumulated from principal in-plane strain
increments and normalised by a failure strain to give the damage
indicator ``D``; ``D >= 1`` marks localization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

TWO_OVER_SQRT3 = 2.0 / math.sqrt(3.0)

# Synthetic forming-limit stand-in: eps_bar_fail(phi) = c0 + c1 * (1 - cos(phi - phi_ref))
FAIL_C0 = 0.3
FAIL_C1 = 0.4
FAIL_PHI_REF = math.pi / 4


@dataclass(frozen=True)
class StrainIncrement:
    d_eps1: float
    d_eps2: float

    def __post_init__(self):
        if not (math.isfinite(self.d_eps1) and math.isfinite(self.d_eps2)):
            raise InvalidInputError(f"non-finite strain increment ({self.d_eps1}, {self.d_eps2})")

    @property
    def equivalent(self) -> float:
        return float(equivalent_strain_increment(self.d_eps1, self.d_eps2))


def equivalent_strain_increment(d_eps1, d_eps2):
    """Equivalent plastic strain of one increment.

    ``(2/sqrt(3)) * sqrt(de1**2 + de2**2 + de1*de2)``.  Works elementwise on
    arrays; scalars in give a numpy float back.
    """
    a = np.asarray(d_eps1, dtype=np.float64)
    b = np.asarray(d_eps2, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("strain increments must be finite")
    # factor out the larger magnitude so squares neither underflow nor overflow
    s = np.maximum(np.abs(a), np.abs(b))
    safe = np.where(s > 0, s, 1.0)
    u, v = a / safe, b / safe
    q = np.maximum(u * u + v * v + u * v, 0.0)
    return np.where(s > 0, TWO_OVER_SQRT3 * s * np.sqrt(q), 0.0)


def accumulate_equivalent_strain(increments) -> np.ndarray:
    """Left-Riemann prefix sum of per-increment equivalent strains.

    ``increments`` is a sequence of :class:`StrainIncrement` or an ``(n, 2)``
    array of ``(d_eps1, d_eps2)`` rows.
    """
    if len(increments) == 0:
        raise InvalidInputError("cannot accumulate an empty increment sequence")
    if isinstance(increments[0], StrainIncrement):
        arr = np.array([(s.d_eps1, s.d_eps2) for s in increments], dtype=np.float64)
    else:
        arr = np.asarray(increments, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise InvalidInputError(f"expected (n, 2) increments, got shape {arr.shape}")
    return np.cumsum(equivalent_strain_increment(arr[:, 0], arr[:, 1]))


def damage_series(eps_bar, eps_bar_fail: float) -> np.ndarray:
    if not (math.isfinite(eps_bar_fail) and eps_bar_fail > 0):
        raise InvalidInputError(f"eps_bar_fail must be positive, got {eps_bar_fail}")
    eps_bar = np.asarray(eps_bar, dtype=np.float64)
    if eps_bar.size > 1 and np.any(np.diff(eps_bar) < 0):
        raise InvalidInputError("eps_bar must be nondecreasing")
    # Values above 1 are kept; localization_step applies the threshold.
    return eps_bar / eps_bar_fail


def localization_step(damage, threshold: float = 1.0):
    """Index of the first step with ``damage >= threshold``, else ``None``."""
    hits = np.flatnonzero(np.asarray(damage) >= threshold)
    return int(hits[0]) if hits.size else None


def synthetic_failure_strain(phi_final, c0=FAIL_C0, c1=FAIL_C1, phi_ref=FAIL_PHI_REF):
    """Analytic forming-limit-like stand-in for the simulated failure strain."""
    return c0 + c1 * (1.0 - np.cos(phi_final - phi_ref))


@dataclass
class LoadingPath:
    """One strain history with its derived equivalent strain and damage."""

    path_id: int
    eps1: np.ndarray
    eps2: np.ndarray
    phi: np.ndarray
    eps_bar: np.ndarray
    eps_bar_fail: float
    damage: np.ndarray
    dt: float = 0.0025
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.eps1)

    @property
    def features(self) -> np.ndarray:
        """``(n, 3)`` array of per-step ``(eps1, eps2, phi)``."""
        return np.stack([self.eps1, self.eps2, self.phi], axis=1)

    @property
    def steps(self):
        return [tuple(row) for row in self.features]

    def validate(self, tol: float = 0.0) -> None:
        n = len(self.eps1)
        if n == 0:
            raise InvalidInputError(f"path {self.path_id}: no steps")
        for name in ("eps2", "phi", "eps_bar", "damage"):
            if len(getattr(self, name)) != n:
                raise InvalidInputError(f"path {self.path_id}: series {name} has length "
                                        f"{len(getattr(self, name))}, expected {n}")
        for name in ("eps1", "eps2", "phi", "eps_bar", "damage"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidInputError(f"path {self.path_id}: non-finite values in {name}")
        if not (math.isfinite(self.eps_bar_fail) and self.eps_bar_fail > 0):
            raise InvalidInputError(f"path {self.path_id}: eps_bar_fail must be positive")
        if self.eps_bar[0] < 0 or np.any(np.diff(self.eps_bar) < 0):
            raise InvalidInputError(f"path {self.path_id}: eps_bar must be nonnegative and nondecreasing")
        expected = self.eps_bar / self.eps_bar_fail
        if np.max(np.abs(expected - self.damage)) > tol:
            raise InvalidInputError(f"path {self.path_id}: damage != eps_bar / eps_bar_fail")
        if np.count_nonzero(np.diff(self.phi)) > 1:
            raise InvalidInputError(f"path {self.path_id}: phi switches more than once")

    def truncated(self, n_keep: int) -> "LoadingPath":
        return LoadingPath(
            path_id=self.path_id,
            eps1=self.eps1[:n_keep].copy(),
            eps2=self.eps2[:n_keep].copy(),
            phi=self.phi[:n_keep].copy(),
            eps_bar=self.eps_bar[:n_keep].copy(),
            eps_bar_fail=self.eps_bar_fail,
            damage=self.damage[:n_keep].copy(),
            dt=self.dt,
            meta=dict(self.meta),
        )


@dataclass(frozen=True)
class BilinearSpec:
    phi1: float
    phi2: float
    switch_fraction: float
    n_steps: int
    step_magnitude: float
    eps_bar_fail: float

    def check(self) -> None:
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidInputError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not (self.step_magnitude > 0 and math.isfinite(self.step_magnitude)):
            raise InvalidInputError(f"step_magnitude must be positive, got {self.step_magnitude}")
        if not 0.0 <= self.switch_fraction <= 1.0:
            raise InvalidInputError(f"switch_fraction must lie in [0, 1], got {self.switch_fraction}")
        if not (self.eps_bar_fail > 0 and math.isfinite(self.eps_bar_fail)):
            raise InvalidInputError(f"eps_bar_fail must be positive, got {self.eps_bar_fail}")
        if not (math.isfinite(self.phi1) and math.isfinite(self.phi2)):
            raise InvalidInputError("segment angles must be finite")


def generate_bilinear_path(spec: BilinearSpec, path_id: int = 0, dt: float = 0.0025) -> LoadingPath:
    """Two proportional segments: ``floor(switch_fraction * n)`` steps at
    ``phi1``, the remainder at ``phi2``."""
    spec.check()
    n = int(spec.n_steps)
    n_first = math.floor(spec.switch_fraction * n)
    phi = np.full(n, spec.phi2, dtype=np.float64)
    phi[:n_first] = spec.phi1
    d1 = spec.step_magnitude * np.cos(phi)
    d2 = spec.step_magnitude * np.sin(phi)
    eps_bar = accumulate_equivalent_strain(np.stack([d1, d2], axis=1))
    return LoadingPath(
        path_id=path_id,
        eps1=np.cumsum(d1),
        eps2=np.cumsum(d2),
        phi=phi,
        eps_bar=eps_bar,
        eps_bar_fail=float(spec.eps_bar_fail),
        damage=damage_series(eps_bar, spec.eps_bar_fail),
        dt=dt,
        meta={"phi1": spec.phi1, "phi2": spec.phi2, "switch_index": n_first},
    )
