"""Bookkeeping shared by the two gradient flows: traces, step control, boundary roll-off."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Grid, VectorField, divergence
from .spectral import blend_incompressible, project_div_free


@dataclass
class FlowTrace:
    """Audit trail of one flow stage.

    ``energies[0]`` is the energy of the initial map; every later entry
    belongs to an accepted step.  ``dts`` and ``max_divergence`` are per
    accepted step; ``max_divergence`` is relative to the step's max speed.
    ``corrected`` counts landmark steps whose weights were solved through the
    incompressibility constraint.
    """

    stage: str
    energies: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    max_divergence: list = field(default_factory=list)
    rejected: int = 0
    corrected: int = 0
    attempts: int = 0
    converged: bool = False
    reason: str = ""
    final_state: object = None

    @property
    def iterations(self) -> int:
        return len(self.energies) - 1 if self.energies else 0

    @property
    def final_energy(self) -> float:
        return self.energies[-1]


class StepController:
    """Halve the step after an energy increase, restore it after three successes in a row."""

    restore_after = 3

    def __init__(self, dt, min_dt, max_step):
        self.dt0 = float(dt)
        self.dt = float(dt)
        self.min_dt = float(min_dt)
        self.max_step = float(max_step)
        self._streak = 0

    def step_for(self, v: VectorField) -> float:
        vmax = v.max_norm()
        limit = self.max_step * min(v.grid.spacing)
        if vmax * self.dt > limit:
            return limit / vmax
        return self.dt

    def reject(self, used_dt):
        self.dt = used_dt / 2.0
        self._streak = 0
        return self.dt >= self.min_dt

    def accept(self):
        self._streak += 1
        if self._streak >= self.restore_after and self.dt < self.dt0:
            self.dt = min(2.0 * self.dt, self.dt0)
            self._streak = 0


def relative_divergence(v: VectorField, boundary: str = "periodic") -> float:
    """Largest pointwise central-difference divergence relative to the max speed."""
    vmax = v.max_norm()
    if vmax == 0:
        return 0.0
    return float(np.abs(divergence(v, boundary).values).max() / vmax)


def constrain(v: VectorField, plan, alpha) -> VectorField:
    """Blend ``v`` with its divergence-free projection according to ``alpha``."""
    if np.ndim(alpha) == 0 and not hasattr(alpha, "values") and float(alpha) == 0.0:
        return v
    return blend_incompressible(v, project_div_free(v, plan), alpha)


def boundary_window(grid: Grid, fraction: float) -> np.ndarray:
    """Separable raised-cosine roll-off: 1 in the bulk, 0 on the faces."""
    window = np.ones(grid.dims)
    if fraction <= 0:
        return window
    for d, n in enumerate(grid.dims):
        band = max(fraction * (n - 1), 1.0)
        i = np.arange(n, dtype=float)
        dist = np.minimum(i, (n - 1) - i)
        w = np.where(dist >= band, 1.0, np.sin(0.5 * np.pi * dist / band) ** 2)
        shape = [1] * grid.ndims
        shape[d] = n
        window = window * w.reshape(shape)
    return window
