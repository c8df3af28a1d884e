"""Rigid initialisation, landmark flow and intensity flow chained into one inverse map."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfigurationError, ParameterError
from .fields import InverseMap, ScalarField, compose_warp, gradient
from .intensity import image_flow
from .landmarks import folded_identity, landmark_flow
from .metrics import MetricsReport, build_report, _require_binary
from .params import FlowParams
from .rigid import LandmarkSet, RigidTransform, project_to_rigid, solve_affine
from .spectral import make_plan


@dataclass
class RegistrationResult:
    map: InverseMap
    rigid: RigidTransform
    stage_traces: dict = field(default_factory=dict)
    converged: dict = field(default_factory=dict)
    metrics: MetricsReport = None

    def warped(self, image: ScalarField) -> ScalarField:
        return compose_warp(image, self.map)


def normalize_intensity(img: ScalarField) -> ScalarField:
    """Min-max rescale to [0, 1]; a constant image maps to zeros."""
    lo, hi = float(img.values.min()), float(img.values.max())
    if hi == lo:
        return ScalarField(img.grid, np.zeros(img.grid.dims))
    return ScalarField(img.grid, (img.values - lo) / (hi - lo))


def avocado(i0: ScalarField, i1: ScalarField, landmarks: LandmarkSet, params: FlowParams = None,
            skip_rigid: bool = False, skip_landmark: bool = False, skip_intensity: bool = False,
            on_velocity=None) -> RegistrationResult:
    """Register source ``i1`` onto target ``i0``.

    ``landmarks.source`` are points in the source frame, ``landmarks.target``
    their partners in the target frame.  The returned map lives on the target
    grid and already contains the rigid motion, so
    ``compose_warp(i1, result.map)`` is the registered source.
    """
    params = params or FlowParams()
    grid = i0.grid
    if i1.grid.ndims != grid.ndims:
        raise ParameterError("source and target images differ in dimensionality")
    landmarks = landmarks if landmarks is not None else LandmarkSet(np.zeros((0, grid.ndims)), np.zeros((0, grid.ndims)))
    target = normalize_intensity(i0)
    source = normalize_intensity(i1)
    plan = make_plan(grid, params.boundary)
    result = RegistrationResult(map=None, rigid=RigidTransform.identity(grid.ndims))

    if not skip_rigid:
        if len(landmarks) == 0:
            raise DegenerateConfigurationError("rigid initialisation needs landmarks (or skip_rigid=True)")
        result.rigid = project_to_rigid(solve_affine(landmarks))
    phi = folded_identity(grid, result.rigid)

    if not skip_landmark and len(landmarks):
        phi, trace = landmark_flow(result.rigid, landmarks, grid, params, init=phi, plan=plan,
                                   on_velocity=on_velocity)
        result.stage_traces["landmark"] = trace
        result.converged["landmark"] = trace.converged

    if not skip_intensity:
        phi, trace = image_flow(target, source, phi, params, plan=plan, grad_i1=gradient(source),
                                on_velocity=on_velocity)
        result.stage_traces["intensity"] = trace
        result.converged["intensity"] = trace.converged

    result.map = phi
    result.metrics = build_report(phi, landmarks if len(landmarks) else None)
    return result


def warp_segmentation(seg: ScalarField, phi: InverseMap, threshold: float = 0.5) -> ScalarField:
    """Pull a binary mask through ``phi`` and threshold it back to {0, 1}."""
    _require_binary(seg, "segmentation")
    warped = compose_warp(seg, phi)
    return ScalarField(phi.grid, (warped.values >= threshold).astype(float))
