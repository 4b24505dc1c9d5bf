"""Particle ensembles on phase space and their position marginals.

An ensemble of N particles with positions and velocities in R^d stands in
for a probability measure on phase space with uniform weights 1/N. Arrays
are particle-major (row i = particle i) and frozen after construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


def _frozen_array(a, name):
    arr = np.array(a, dtype=float)
    if arr.ndim != 2:
        raise InvalidArgument(f"{name} must be a 2-D (N, d) array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidArgument(f"{name} must have N >= 1 and d >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniformly weighted empirical measure supported on N points in R^d."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen_array(self.points, "points"))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class PhaseEnsemble:
    """N particles (X^i, V^i) in R^d x R^d at a given time."""

    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        pos = _frozen_array(self.positions, "positions")
        vel = _frozen_array(self.velocities, "velocities")
        if pos.shape != vel.shape:
            raise InvalidArgument(
                f"positions shape {pos.shape} != velocities shape {vel.shape}"
            )
        if not np.isfinite(self.time) or self.time < 0:
            raise InvalidArgument(f"time must be finite and >= 0, got {self.time}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]


def init_gaussian(n, d, seed):
    """Draw an ensemble with i.i.d. standard-normal positions and velocities.

    Uses numpy's PCG64 generator (``np.random.default_rng``) so runs are
    bit-reproducible across platforms for a fixed seed. Positions are drawn
    first, then velocities, each as an (n, d) block.
    """
    if n < 1 or d < 1:
        raise InvalidArgument(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    positions = rng.standard_normal((n, d))
    velocities = rng.standard_normal((n, d))
    return PhaseEnsemble(positions=positions, velocities=velocities, time=0.0)


def x_marginal(e: PhaseEnsemble) -> EmpiricalMeasure:
    """Project onto positions, discarding velocities. Order preserved."""
    return EmpiricalMeasure(points=e.positions)


def kinetic_energy(e: PhaseEnsemble, scale=1.0) -> float:
    """(1/N) sum_i (1/2) ||scale * V^i||^2."""
    if not np.isfinite(scale):
        raise InvalidArgument(f"scale must be finite, got {scale}")
    v = scale * e.velocities
    return 0.5 * float(np.mean(np.sum(v * v, axis=1)))


def write_snapshot_csv(e: PhaseEnsemble, path):
    """Serialize one ensemble: header ``particle,coord,x,v``, one row per
    (particle, coordinate)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["particle", "coord", "x", "v"])
        for i in range(e.n):
            for j in range(e.dim):
                w.writerow([i, j, repr(float(e.positions[i, j])),
                            repr(float(e.velocities[i, j]))])


def read_snapshot_csv(path, time=0.0) -> PhaseEnsemble:
    """Inverse of :func:`write_snapshot_csv`."""
    rows = []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if header != ["particle", "coord", "x", "v"]:
            raise InvalidArgument(f"unexpected snapshot header: {header}")
        for particle, coord, x, v in r:
            rows.append((int(particle), int(coord), float(x), float(v)))
    if not rows:
        raise InvalidArgument("empty snapshot file")
    n = max(p for p, _, _, _ in rows) + 1
    d = max(c for _, c, _, _ in rows) + 1
    pos = np.full((n, d), np.nan)
    vel = np.full((n, d), np.nan)
    for p, c, x, v in rows:
        pos[p, c] = x
        vel[p, c] = v
    return PhaseEnsemble(positions=pos, velocities=vel, time=time)
