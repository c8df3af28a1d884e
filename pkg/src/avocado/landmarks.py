"""Landmark-driven gradient flow with multiquadric radial basis velocities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, SingularKernelError
from .fields import Grid, InverseMap, VectorField, advect_inverse_map, sample_map
from .flow import FlowTrace, StepController, boundary_window, constrain, relative_divergence
from .params import FlowParams
from .rigid import LandmarkSet, RigidTransform, apply_rigid
from .spectral import make_plan


# accepted steps between rebuilds of the constrained center response
RESPONSE_REFRESH = 5
RESPONSE_RCOND = 1e-2


def multiquadric(r, eps: float = 1.0):
    return np.sqrt(1.0 + (eps * np.asarray(r, dtype=float)) ** 2)


@dataclass
class RbfState:
    """One iteration of the landmark flow, every point in the target frame.

    ``centers`` are the current deformed landmark positions, ``targets`` the
    rigidly moved source landmarks; ``weights`` are filled by
    :func:`solve_rbf_weights`.
    """

    centers: np.ndarray
    targets: np.ndarray
    weights: np.ndarray = None
    iteration: int = 0

    @property
    def residuals(self) -> np.ndarray:
        return self.targets - self.centers

    @property
    def energy(self) -> float:
        return float((self.residuals**2).sum())

    @property
    def rms(self) -> float:
        return float(np.sqrt(self.energy / len(self.centers))) if len(self.centers) else 0.0


def kernel_matrix(centers, eps):
    diff = centers[:, None, :] - centers[None, :, :]
    return multiquadric(np.linalg.norm(diff, axis=-1), eps)


def solve_rbf_weights(state: RbfState, eps: float = 1.0) -> np.ndarray:
    """Solve ``G b = d`` per component, ``G_ij = K(|center_i - center_j|)``."""
    centers = np.asarray(state.centers, dtype=float)
    m = len(centers)
    if m == 0:
        return np.zeros((0, centers.shape[-1]))
    dist = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    scale = max(float(dist.max()), 1.0)
    np.fill_diagonal(dist, np.inf)
    i, j = np.unravel_index(np.argmin(dist), dist.shape)
    if m > 1 and dist[i, j] <= 1e-9 * scale:
        raise SingularKernelError(
            f"landmark centers {min(i, j)} and {max(i, j)} coincide (distance {dist[i, j]:.3g} mm)",
            pair=(min(i, j), max(i, j)),
        )
    gram = kernel_matrix(centers, eps)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularKernelError(
            f"kernel matrix is numerically singular (condition {cond:.3g}); "
            f"closest centers are {min(i, j)} and {max(i, j)} at {dist[i, j]:.3g} mm",
            pair=(min(i, j), max(i, j)),
        )
    weights = np.linalg.solve(gram, state.residuals)
    state.weights = weights
    return weights


def rbf_evaluate(state: RbfState, points, eps: float = 1.0) -> np.ndarray:
    """``sum_i b_i K(|x - center_i|)`` at arbitrary points (shape ``(..., ndims)``)."""
    points = np.asarray(points, dtype=float)
    out = np.zeros(points.shape)
    for c, b in zip(state.centers, state.weights):
        r = np.sqrt(((points - c) ** 2).sum(axis=-1))
        out += multiquadric(r, eps)[..., None] * b
    return out


def rbf_velocity(state: RbfState, grid: Grid, eps: float = 1.0) -> VectorField:
    return VectorField(grid, rbf_evaluate(state, grid.coordinates(), eps))


def folded_identity(grid: Grid, rigid: RigidTransform) -> InverseMap:
    """Identity map pre-composed with the inverse rigid transform."""
    return InverseMap(grid, apply_rigid(rigid.inverse(), grid.coordinates()))


def tracked_centers(phi: InverseMap, rigid: RigidTransform, targets_frame_points) -> np.ndarray:
    return apply_rigid(rigid, sample_map(phi, targets_frame_points))


def eulerian_velocity(state: RbfState, phi: InverseMap, rigid: RigidTransform, eps: float) -> VectorField:
    """Grid velocity that carries the tracked centers along the residuals.

    The flow updates ``phi(x - dt v(x))``, so a center tracked through
    ``psi = rigid o phi`` moves by ``-dt * Dpsi v`` to first order.  The
    rigid motion is folded into the initial map, so ``Dpsi`` starts at the
    identity and stays close to it under volume-preserving flow; taking
    ``v = -u(psi(x))`` with ``u`` the RBF interpolant of the residuals then
    advances every center by its residual.  Inverting the sampled ``Dpsi``
    instead would feed its discretisation noise back into the velocity.
    """
    psi = apply_rigid(rigid, phi.mapped)
    return VectorField(phi.grid, -rbf_evaluate(state, psi, eps))


def _stencil(grid: Grid, points):
    """Interpolation nodes and multilinear weights of every point, shapes ``(M, 2^nd, nd)`` and ``(M, 2^nd)``."""
    nd = grid.ndims
    idx = np.clip(grid.to_index(points), 0, np.asarray(grid.dims) - 1)
    base = np.minimum(np.floor(idx), np.asarray(grid.dims) - 2).astype(int)
    frac = idx - base
    corners = np.array(np.meshgrid(*([[0, 1]] * nd), indexing="ij")).reshape(nd, -1).T
    nodes = base[:, None, :] + corners[None, :, :]
    weights = np.prod(np.where(corners[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :]), axis=-1)
    return nodes, weights


def center_motion(v: VectorField, phi: InverseMap, rigid: RigidTransform, points) -> np.ndarray:
    """Exact first-order velocity of the tracked centers when the map is advected by ``v``.

    A tracked center is the multilinear sample of the updated map, whose
    node values are ``phi(x_j - dt v(x_j))``.  Each node value moves along
    a one-sided directional derivative of the piecewise-linear ``phi``,
    which a step well inside one cell captures exactly; sampling the
    central-difference Jacobian instead is off by O(h) and can flip the
    sign of the predicted energy change.
    """
    grid = phi.grid
    nodes, weights = _stencil(grid, points)
    vmax = v.max_norm()
    if vmax == 0:
        return np.zeros((len(nodes), grid.ndims))
    h = 1e-4 * min(grid.spacing) / vmax
    x = grid.to_physical(nodes)
    vel = v.values[tuple(np.moveaxis(nodes, -1, 0))]
    moved = (sample_map(phi, x - h * vel) - phi.mapped[tuple(np.moveaxis(nodes, -1, 0))]) / h
    return np.einsum("mj,mjc,ac->ma", weights, moved, rigid.rotation)


def descent_rate(v: VectorField, phi: InverseMap, rigid: RigidTransform, points, state: RbfState) -> float:
    """``-dE/dt`` of the landmark energy along ``v``; positive means ``v`` descends."""
    return 2.0 * float(np.sum(center_motion(v, phi, rigid, points) * state.residuals))


def center_response(state: RbfState, phi: InverseMap, rigid: RigidTransform, points, eps: float,
                    constraint) -> np.ndarray:
    """Linear map from RBF weights to first-order center motion under ``constraint``.

    Projection is linear but not local, so the projected RBF velocity
    generally misses the residuals at the centers and can even point the
    wrong way (the multiquadric grows with distance and its far field
    dominates the projection).  Column ``(j, k)`` is the center motion of
    the constrained velocity of a unit weight on center ``j``, component
    ``k``; solving ``response @ b = residuals`` gives weights whose
    constrained velocity moves every center along its residual.  Shape
    ``(M * nd, M * nd)``.
    """
    grid = phi.grid
    m, nd = state.centers.shape
    psi = apply_rigid(rigid, phi.mapped)
    response = np.empty((m, nd, m, nd))
    for j, c in enumerate(state.centers):
        kern = multiquadric(np.sqrt(((psi - c) ** 2).sum(axis=-1)), eps)
        for k in range(nd):
            unit = np.zeros(nd)
            unit[k] = 1.0
            v = constraint(VectorField(grid, -kern[..., None] * unit))
            response[:, :, j, k] = center_motion(v, phi, rigid, points)
    return response.reshape(m * nd, m * nd)


def solve_response(response, state: RbfState) -> np.ndarray:
    beta, *_ = np.linalg.lstsq(response, state.residuals.reshape(-1), rcond=RESPONSE_RCOND)
    return beta.reshape(state.residuals.shape)


def landmark_flow(rigid: RigidTransform, landmarks: LandmarkSet, grid: Grid, params: FlowParams,
                  init: InverseMap = None, plan=None, on_velocity=None):
    """Deform the inverse map until the landmarks agree to within ``params.eps_user`` (RMS, mm).

    Returns ``(map, trace)``.  ``on_velocity(stage, k, v)`` is called with
    every velocity that is about to be integrated.
    """
    if landmarks.ndims != grid.ndims:
        raise GridMismatchError(f"{landmarks.ndims}D landmarks cannot drive a {grid.ndims}D grid")
    phi = folded_identity(grid, rigid) if init is None else init
    if phi.grid != grid:
        raise GridMismatchError("initial map is not on the requested grid")
    plan = plan or make_plan(grid, params.boundary)
    targets = apply_rigid(rigid, landmarks.source)
    window = boundary_window(grid, params.boundary_taper)[..., None]

    def constraint(v):
        return constrain(VectorField(grid, v.values * window), plan, params.alpha_incomp)

    # with the constraint switched off the plain RBF weights already interpolate
    constrained = not (np.ndim(params.alpha_incomp) == 0 and float(params.alpha_incomp) == 0.0)
    response, response_age = None, 0

    state = RbfState(tracked_centers(phi, rigid, landmarks.target), targets)
    trace = FlowTrace("landmark", energies=[state.energy])
    control = StepController(params.dt, params.min_dt, params.max_step)
    if len(landmarks) == 0 or state.rms < params.eps_user:
        trace.converged = True
        trace.reason = "initial landmark error below threshold"
        trace.final_state = state
        return phi, trace

    while trace.attempts < params.max_iter_landmark:
        trace.attempts += 1
        solve_rbf_weights(state, params.eps_rbf)
        v = constraint(eulerian_velocity(state, phi, rigid, params.eps_rbf))
        if constrained and descent_rate(v, phi, rigid, landmarks.target, state) <= 0:
            # projection turned the plain RBF velocity away from the residuals; no step size
            # can fix that, so solve for weights through the constraint instead
            if response is None or response_age >= RESPONSE_REFRESH:
                response = center_response(state, phi, rigid, landmarks.target, params.eps_rbf, constraint)
                response_age = 0
            drive = RbfState(state.centers, state.targets, solve_response(response, state), state.iteration)
            v = constraint(eulerian_velocity(drive, phi, rigid, params.eps_rbf))
            trace.corrected += 1
            if descent_rate(v, phi, rigid, landmarks.target, state) <= 0 and response_age > 0:
                # a stale response may be the culprit; rebuild once before giving up
                response = center_response(state, phi, rigid, landmarks.target, params.eps_rbf, constraint)
                response_age = 0
                drive.weights = solve_response(response, state)
                v = constraint(eulerian_velocity(drive, phi, rigid, params.eps_rbf))
        if descent_rate(v, phi, rigid, landmarks.target, state) <= 0:
            trace.reason = "no admissible velocity lowers the landmark energy"
            break
        step = control.step_for(v)
        if on_velocity is not None:
            on_velocity("landmark", trace.attempts, v)
        candidate = advect_inverse_map(phi, v, step)
        new_state = RbfState(tracked_centers(candidate, rigid, landmarks.target), targets,
                             iteration=state.iteration + 1)
        if new_state.energy < state.energy:
            phi, state = candidate, new_state
            control.accept()
            response_age += 1
            trace.energies.append(state.energy)
            trace.dts.append(step)
            trace.max_divergence.append(relative_divergence(v, plan.boundary))
            if state.rms < params.eps_user:
                trace.converged = True
                trace.reason = f"RMS landmark error {state.rms:.4g} mm below {params.eps_user} mm"
                break
        else:
            trace.rejected += 1
            if not control.reject(step):
                trace.reason = "step size fell below min_dt without decreasing the landmark energy"
                break
    else:
        trace.reason = f"reached max_iter_landmark={params.max_iter_landmark}"
    trace.final_state = state
    return phi, trace
