"""Tunables shared by the landmark and intensity flows."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ParameterError
from .fields import ScalarField


@dataclass(frozen=True)
class FlowParams:
    """Flow settings.

    ``dt`` is the nominal flow-time step of both stages.  ``max_step`` caps
    the largest voxel displacement of a single update, in units of the
    smallest grid spacing.  ``alpha_incomp`` is the incompressibility weight:
    1 projects every velocity onto the divergence-free fields, 0 disables
    projection, and a :class:`ScalarField` blends voxel by voxel.
    ``boundary_taper`` is the fraction of each axis over which the landmark
    velocity is rolled off to zero at the faces (0 disables the roll-off).
    ``boundary`` selects the spectral boundary model: ``"slip"`` keeps flow
    from crossing the box faces, ``"periodic"`` wraps opposite faces.
    """

    dt: float = 0.1
    eps_rbf: float = 1.0
    eps_user: float = 0.93
    eps_image: float = 3e-4
    alpha_cn: float = 0.02
    gamma: float = 0.01
    alpha_incomp: object = 1.0
    max_iter_landmark: int = 200
    max_iter_image: int = 300
    max_step: float = 1.0
    boundary_taper: float = 0.0
    min_dt: float = 1e-4
    boundary: str = "slip"

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be positive, got {self.gamma}")
        if not self.eps_image > 0:
            raise ParameterError(f"eps_image must be positive, got {self.eps_image}")
        if not self.eps_rbf > 0:
            raise ParameterError(f"eps_rbf must be positive, got {self.eps_rbf}")
        if self.eps_user < 0:
            raise ParameterError(f"eps_user must be non-negative, got {self.eps_user}")
        if self.alpha_cn < 0:
            raise ParameterError(f"alpha_cn must be non-negative, got {self.alpha_cn}")
        if not self.max_step > 0:
            raise ParameterError(f"max_step must be positive, got {self.max_step}")
        if not 0 <= self.boundary_taper < 0.5:
            raise ParameterError(f"boundary_taper must lie in [0, 0.5), got {self.boundary_taper}")
        if self.max_iter_landmark < 0 or self.max_iter_image < 0:
            raise ParameterError("iteration limits must be non-negative")
        if self.boundary not in ("slip", "periodic"):
            raise ParameterError(f"boundary must be 'slip' or 'periodic', got {self.boundary!r}")
        a = self.alpha_incomp
        values = a.values if isinstance(a, ScalarField) else np.asarray(a, dtype=float)
        if not np.all(np.isfinite(values)) or values.min() < 0 or values.max() > 1:
            raise ParameterError("alpha_incomp must lie in [0, 1]")

    def with_(self, **changes) -> "FlowParams":
        return replace(self, **changes)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]
