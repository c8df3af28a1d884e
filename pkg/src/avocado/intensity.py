"""Intensity-driven gradient flow (sum-of-squared-differences energy)."""
from __future__ import annotations

import numpy as np

from .errors import GridMismatchError
from .fields import (InverseMap, ScalarField, VectorField, advect_inverse_map, compose_warp, gradient,
                     jacobian_matrix, sample_vector)
from .flow import FlowTrace, StepController, constrain, relative_divergence
from .params import FlowParams
from .spectral import cauchy_navier_smooth, make_plan


def _check_target(i0, phi):
    if i0.grid != phi.grid:
        raise GridMismatchError("target image must live on the map grid")


def image_energy(i0: ScalarField, i1: ScalarField, phi: InverseMap) -> float:
    """Mean squared intensity difference between the warped source and the target."""
    _check_target(i0, phi)
    r = compose_warp(i1, phi).values - i0.values
    return float(np.mean(r * r))


def image_force(i0: ScalarField, i1: ScalarField, grad_i1: VectorField, phi: InverseMap,
                chain_rule: bool = True) -> VectorField:
    """Residual times the source gradient sampled through the map.

    With ``chain_rule`` the sampled gradient is carried into the target
    frame by the transposed map Jacobian, which makes the force the exact
    gradient of the energy when the map contains a rotation.  The energy
    change for ``phi(x - eps * u(x))`` is then ``-(2 / N) * sum(g . u) * eps``.
    """
    _check_target(i0, phi)
    if grad_i1.grid != i1.grid:
        raise GridMismatchError("source gradient must live on the source grid")
    residual = compose_warp(i1, phi).values - i0.values
    sampled = sample_vector(grad_i1, phi.mapped)
    if chain_rule:
        sampled = np.einsum("...cd,...c->...d", jacobian_matrix(phi), sampled)
    return VectorField(phi.grid, residual[..., None] * sampled)


def image_flow(i0: ScalarField, i1: ScalarField, init: InverseMap, params: FlowParams, plan=None,
               grad_i1: VectorField = None, on_velocity=None):
    """Descend the image energy from ``init``.

    The stage stops once an accepted step lowers the energy by less than
    ``params.eps_image`` times the starting energy.  Returns ``(map, trace)``.
    """
    _check_target(i0, init)
    plan = plan or make_plan(init.grid, params.boundary)
    grad_i1 = gradient(i1) if grad_i1 is None else grad_i1
    phi = init
    energy = image_energy(i0, i1, phi)
    trace = FlowTrace("intensity", energies=[energy])
    control = StepController(params.dt, params.min_dt, params.max_step)
    tol = params.eps_image * energy
    if energy == 0.0:
        trace.converged = True
        trace.reason = "images already agree"
        return phi, trace

    while trace.attempts < params.max_iter_image:
        trace.attempts += 1
        g = image_force(i0, i1, grad_i1, phi)
        v = cauchy_navier_smooth(g, plan, params.alpha_cn, params.gamma)
        v = constrain(v, plan, params.alpha_incomp)
        step = control.step_for(v)
        if on_velocity is not None:
            on_velocity("intensity", trace.attempts, v)
        candidate = advect_inverse_map(phi, v, step) if v.max_norm() > 0 else phi
        new_energy = image_energy(i0, i1, candidate)
        if new_energy <= energy:
            change = energy - new_energy
            phi, energy = candidate, new_energy
            control.accept()
            trace.energies.append(energy)
            trace.dts.append(step)
            trace.max_divergence.append(relative_divergence(v, plan.boundary))
            if change < tol:
                trace.converged = True
                trace.reason = f"energy change {change:.3g} below {params.eps_image} of the initial energy"
                break
        else:
            trace.rejected += 1
            if not control.reject(step):
                trace.reason = "step size fell below min_dt without decreasing the image energy"
                break
    else:
        trace.reason = f"reached max_iter_image={params.max_iter_image}"
    return phi, trace
