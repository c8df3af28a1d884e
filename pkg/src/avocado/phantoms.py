"""Deterministic synthetic registration cases."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import NumericalError, ParameterError
from .fields import (Grid, InverseMap, ScalarField, VectorField, advect_inverse_map, compose_warp,
                     identity_map, interior, jacobian_determinant, jacobian_matrix, sample_array,
                     sample_map)
from .rigid import LandmarkSet
from .spectral import make_plan, project_div_free


@dataclass(frozen=True, eq=False)
class PhantomCase:
    source: ScalarField
    target: ScalarField
    source_mask: ScalarField
    target_mask: ScalarField
    init_landmarks: LandmarkSet
    validation_landmarks: LandmarkSet
    ground_truth: InverseMap = None
    seed: int = 0


# ---------------------------------------------------------------------------
# 2D ellipses

def _ellipse_mask(grid, center, a, b):
    xy = grid.coordinates()
    q = ((xy[..., 0] - center[0]) / a) ** 2 + ((xy[..., 1] - center[1]) / b) ** 2
    return (q <= 1.0).astype(float)


def fit_ellipse_axes(grid, center, area, ratio=2.0):
    """Semi-axes ``(ratio * b, b)`` whose rasterised pixel area is closest to ``area``.

    Pixel counts are monotone in ``b``, so a bisection finds the smallest
    ``b`` reaching the requested count; the neighbouring count below is
    kept when it is closer.
    """
    px = grid.voxel_volume
    lo, hi = 0.0, np.sqrt(area / (np.pi * ratio)) * 1.5 + 2.0 * max(grid.spacing)

    def count(b):
        return _ellipse_mask(grid, center, ratio * b, b).sum() * px

    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if count(mid) >= area:
            hi = mid
        else:
            lo = mid
    best = hi if abs(count(hi) - area) <= abs(count(lo) - area) else lo
    return ratio * best, best


def ellipse_pair(canvas: Grid, area_src: float = 1888.0, area_tgt: float = 1264.0,
                 edge_sigma: float = 2.0, n_landmarks: int = 6, seed: int = 0) -> PhantomCase:
    """Concentric axis-aligned ellipses of the requested pixel areas.

    The masks are smoothed by a Gaussian of ``edge_sigma`` pixels to give
    the intensity flow a usable gradient.  Landmarks sit on both boundaries
    at matching parametric angles; validation landmarks use the angles
    half-way between them.
    """
    if canvas.ndims != 2:
        raise ParameterError("ellipse phantom needs a 2D canvas")
    margin = 8.0 * max(canvas.spacing)
    lo, hi = canvas.extent_min(), canvas.extent_max()
    center = 0.5 * (lo + hi)
    axes = {}
    for name, area in (("source", area_src), ("target", area_tgt)):
        a, b = fit_ellipse_axes(canvas, center, area)
        if np.any(center - np.array([a, b]) - margin < lo) or np.any(center + np.array([a, b]) + margin > hi):
            raise ParameterError(f"{name} ellipse of area {area} does not fit the canvas with an 8 px margin")
        axes[name] = (a, b)

    masks, images = {}, {}
    for name, (a, b) in axes.items():
        m = _ellipse_mask(canvas, center, a, b)
        masks[name] = ScalarField(canvas, m)
        sig = [edge_sigma / s for s in canvas.spacing]
        images[name] = ScalarField(canvas, np.clip(gaussian_filter(m, sig, mode="nearest"), 0.0, 1.0))

    def boundary(theta, name):
        a, b = axes[name]
        return np.stack([center[0] + a * np.cos(theta), center[1] + b * np.sin(theta)], axis=1)

    theta = 2.0 * np.pi * np.arange(n_landmarks) / n_landmarks
    half = theta + np.pi / n_landmarks
    init = LandmarkSet(boundary(theta, "source"), boundary(theta, "target"))
    validation = LandmarkSet(boundary(half, "source"), boundary(half, "target"))
    return PhantomCase(images["source"], images["target"], masks["source"], masks["target"],
                       init, validation, None, seed)


# ---------------------------------------------------------------------------
# ground-truth warps

def random_divfree_velocity(grid: Grid, modes: int, rng) -> VectorField:
    """Random smooth field with no flow through the faces, projected to zero divergence.

    Component ``d`` is a random sum of ``sin`` modes along axis ``d`` and
    ``cos`` modes along the other axes (wave numbers up to ``modes``, weight
    ``1 / (1 + |k|^2)``), which is exactly the symmetry the slip projection
    assumes.  Scaled to unit max speed.
    """
    nd = grid.ndims
    plan = make_plan(grid, "slip")
    ks = np.arange(modes + 1)
    comps = []
    for d in range(nd):
        bases = []
        for ax, n in enumerate(grid.dims):
            t = np.pi * np.arange(n) / (n - 1)
            f = np.sin if ax == d else np.cos
            bases.append(f(np.outer(ks, t)))
        mesh = np.meshgrid(*([ks] * nd), indexing="ij")
        amp = 1.0 / (1.0 + sum(m**2 for m in mesh))
        amp = amp * rng.standard_normal(amp.shape)
        amp[(0,) * nd] = 0.0
        field = amp
        for ax in range(nd):
            # contract wave number axis ``ax`` against its spatial basis
            field = np.tensordot(field, bases[ax], axes=([0], [0]))
        comps.append(field)
    v = project_div_free(VectorField(grid, np.stack(comps, axis=-1)), plan)
    vmax = v.max_norm()
    if vmax == 0:
        raise NumericalError("random velocity vanished after projection; use more modes")
    return VectorField(grid, v.values / vmax)


def divfree_warp_3d(grid: Grid, modes: int = 2, max_disp: float = 5.0, seed: int = 0,
                    steps: int = 32, jacobian_tol: float = 0.03) -> InverseMap:
    """Integrate a random stationary divergence-free velocity into an inverse map.

    ``max_disp`` is the peak speed in voxels of the smallest spacing,
    integrated over unit flow time in ``steps`` semi-Lagrangian steps, so it
    bounds the largest displacement.  Works on 2D grids as well.
    """
    if max_disp < 0:
        raise ParameterError("max_disp must be non-negative")
    if max_disp == 0:
        return identity_map(grid)
    rng = np.random.default_rng(seed)
    v = random_divfree_velocity(grid, modes, rng)
    v = VectorField(grid, v.values * max_disp * min(grid.spacing))
    phi = identity_map(grid)
    dt = 1.0 / steps
    for _ in range(steps):
        phi = advect_inverse_map(phi, v, dt)
    det = interior(jacobian_determinant(phi).values, grid.ndims)
    if det.min() <= 0 or np.abs(det - 1.0).max() > jacobian_tol:
        raise NumericalError(
            f"warp Jacobian determinant spans [{det.min():.4f}, {det.max():.4f}]; "
            f"reduce max_disp or increase steps (currently {steps})"
        )
    return phi


def invert_points(phi: InverseMap, points, tol: float = 1e-9, max_iter: int = 200) -> np.ndarray:
    """Solve ``phi(c) = p`` for each point by Newton iteration on the sampled map."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    jac = jacobian_matrix(phi)
    grid = phi.grid
    jac_field = jac.reshape(tuple(grid.dims) + (grid.ndims * grid.ndims,))
    c = points.copy()
    for _ in range(max_iter):
        r = sample_map(phi, c) - points
        if np.abs(r).max() < tol:
            break
        j = sample_array(grid, jac_field, c).reshape(-1, grid.ndims, grid.ndims)
        c = c - np.linalg.solve(j, r[..., None])[..., 0]
    return c


# ---------------------------------------------------------------------------
# 3D blobs

def _sample_centers(rng, lo, hi, count, min_sep, attempts=20000):
    pts = []
    for _ in range(attempts):
        p = rng.uniform(lo, hi)
        if all(np.linalg.norm(p - q) >= min_sep for q in pts):
            pts.append(p)
            if len(pts) == count:
                break
    if len(pts) < count:
        raise ParameterError(f"could only place {len(pts)} of {count} separated blob centers")
    return np.array(pts)


def blob_image(grid, centers, sigmas, amplitudes):
    x = grid.coordinates()
    img = np.zeros(grid.dims)
    for c, s, a in zip(centers, sigmas, amplitudes):
        img += a * np.exp(-((x - c) ** 2).sum(axis=-1) / (2.0 * s * s))
    return img


def blob_case_3d(grid: Grid, n_blobs: int = 40, warp: InverseMap = None, n_landmarks: int = 10,
                 n_validation: int = 10, seed: int = 0, margin: float = 12.0,
                 sigma_range=(3.0, 5.0)) -> PhantomCase:
    """Sum-of-Gaussians source, target pulled back through ``warp``.

    Landmarks sit on blob centers in the source; their target partners are
    read from the warp by inversion.  The first ``n_landmarks`` centers
    initialise the registration, the next ``n_validation`` are held out.
    """
    if n_landmarks < grid.ndims + 1:
        raise ParameterError(f"need at least {grid.ndims + 1} initialisation landmarks")
    if n_landmarks + n_validation > n_blobs:
        raise ParameterError("not enough blobs to host every landmark")
    rng = np.random.default_rng(seed)
    warp = identity_map(grid) if warp is None else warp
    lo = grid.extent_min() + margin * np.asarray(grid.spacing)
    hi = grid.extent_max() - margin * np.asarray(grid.spacing)
    min_sep = 1.5 * sigma_range[0] * min(grid.spacing)
    centers = _sample_centers(rng, lo, hi, n_blobs, min_sep)
    sigmas = rng.uniform(*sigma_range, size=n_blobs) * min(grid.spacing)
    amps = rng.uniform(0.5, 1.0, size=n_blobs)
    raw = blob_image(grid, centers, sigmas, amps)
    src = ScalarField(grid, raw / raw.max())
    tgt = compose_warp(src, warp)

    src_pts = centers[: n_landmarks + n_validation]
    tgt_pts = invert_points(warp, src_pts)
    init = LandmarkSet(src_pts[:n_landmarks], tgt_pts[:n_landmarks])
    val = LandmarkSet(src_pts[n_landmarks:], tgt_pts[n_landmarks:],
                      ids=tuple(range(n_landmarks + 1, n_landmarks + n_validation + 1)))
    src_mask = ScalarField(grid, (src.values >= 0.5).astype(float))
    tgt_mask = ScalarField(grid, (tgt.values >= 0.5).astype(float))
    return PhantomCase(src, tgt, src_mask, tgt_mask, init, val, warp, seed)


def sphere_mask(grid: Grid, center, radius: float) -> ScalarField:
    x = grid.coordinates()
    inside = ((x - np.asarray(center, dtype=float)) ** 2).sum(axis=-1) <= radius * radius
    return ScalarField(grid, inside.astype(float))
