"""Sampling grids, scalar and vector fields, and the inverse-map representation.

Arrays are stored with axis ``d`` of the numpy array running along physical
axis ``d`` (``values[i, j, k]`` is the voxel at x-index ``i``).  Vector
components live on a trailing axis of length ``ndims``.  Physical coordinates
are ``origin + index * spacing`` with no direction cosines.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import GridMismatchError, GridTooSmallError, ParameterError


@dataclass(frozen=True)
class Grid:
    dims: tuple
    spacing: tuple = None
    origin: tuple = None

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) not in (2, 3):
            raise ParameterError(f"grid must be 2D or 3D, got {len(dims)} axes")
        if any(n < 2 for n in dims):
            raise ParameterError(f"every grid dimension must be >= 2, got {dims}")
        spacing = (1.0,) * len(dims) if self.spacing is None else tuple(float(s) for s in self.spacing)
        origin = (0.0,) * len(dims) if self.origin is None else tuple(float(o) for o in self.origin)
        if len(spacing) != len(dims) or len(origin) != len(dims):
            raise ParameterError("spacing and origin must have one entry per axis")
        if any(not s > 0 for s in spacing):
            raise ParameterError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def ndims(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    def coordinates(self) -> np.ndarray:
        """Physical coordinate of every voxel, shape ``dims + (ndims,)``."""
        axes = [o + s * np.arange(n) for n, s, o in zip(self.dims, self.spacing, self.origin)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def to_index(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return (points - np.asarray(self.origin)) / np.asarray(self.spacing)

    def to_physical(self, index) -> np.ndarray:
        index = np.asarray(index, dtype=float)
        return np.asarray(self.origin) + index * np.asarray(self.spacing)

    def extent_min(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float)

    def extent_max(self) -> np.ndarray:
        return self.to_physical(np.asarray(self.dims) - 1)

    def contains(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((points >= self.extent_min()) & (points <= self.extent_max()), axis=-1)


def _check_values(grid, values, trailing):
    values = np.asarray(values, dtype=float)
    expected = tuple(grid.dims) + trailing
    if values.shape != expected:
        raise GridMismatchError(f"values have shape {values.shape}, grid expects {expected}")
    return values


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, ()))

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.dims, float(value)))


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, (self.grid.ndims,)))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(tuple(grid.dims) + (grid.ndims,)))

    @classmethod
    def constant(cls, grid, vector):
        vector = np.asarray(vector, dtype=float)
        return cls(grid, np.broadcast_to(vector, tuple(grid.dims) + (grid.ndims,)).copy())

    def max_norm(self) -> float:
        return float(np.sqrt((self.values**2).sum(axis=-1)).max())


@dataclass(frozen=True, eq=False)
class InverseMap:
    """Sampled inverse deformation: ``mapped[x]`` is the source-frame point for target voxel ``x``."""

    grid: Grid
    mapped: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mapped", _check_values(self.grid, self.mapped, (self.grid.ndims,)))

    def displacement(self) -> np.ndarray:
        return self.mapped - self.grid.coordinates()


def same_grid(*items):
    first = items[0].grid
    for item in items[1:]:
        if item.grid != first:
            raise GridMismatchError(f"grid mismatch: {first} vs {item.grid}")
    return first


def identity_map(grid: Grid) -> InverseMap:
    return InverseMap(grid, grid.coordinates())


# ---------------------------------------------------------------------------
# interpolation

def _interpolate(grid, data, points, index_space=False):
    """Multilinear interpolation of ``data`` (shape ``dims + tail``) at physical points.

    Coordinates are clamped to the grid box first.  Returns the interpolated
    values together with the physical offset removed by the clamp (exactly
    zero for points inside the box).
    """
    points = np.asarray(points, dtype=float)
    lead = points.shape[:-1]
    flat = points.reshape(-1, grid.ndims)
    raw = flat if index_space else grid.to_index(flat)
    # round-off from the physical/index conversion must not blur voxel centres
    near = np.rint(raw)
    raw = np.where(np.abs(raw - near) <= 1e-12 * np.maximum(1.0, np.abs(raw)), near, raw)
    idx = np.clip(raw, 0, np.asarray(grid.dims) - 1)
    tail = data.shape[grid.ndims:]
    chans = data.reshape(tuple(grid.dims) + (-1,))
    coords = np.ascontiguousarray(idx.T)
    out = np.empty((flat.shape[0], chans.shape[-1]))
    for c in range(chans.shape[-1]):
        out[:, c] = map_coordinates(chans[..., c], coords, order=1, mode="nearest", prefilter=False)
    overflow = (raw - idx) * np.asarray(grid.spacing)
    return out.reshape(lead + tail), overflow.reshape(points.shape)


def sample_array(grid: Grid, data: np.ndarray, points) -> np.ndarray:
    """Multilinear sample of raw per-voxel ``data`` (any trailing shape)."""
    return _interpolate(grid, np.asarray(data, dtype=float), points)[0]


def sample_scalar(f: ScalarField, points) -> np.ndarray:
    """Multilinear sample of ``f`` at one point or an array of points (clamp-to-edge)."""
    values, _ = _interpolate(f.grid, f.values, points)
    return values if np.ndim(values) else float(values)


def sample_vector(v: VectorField, points) -> np.ndarray:
    values, _ = _interpolate(v.grid, v.values, points)
    return values


def sample_map(phi: InverseMap, points) -> np.ndarray:
    """Evaluate the inverse map at arbitrary points.

    The displacement is interpolated and added to the query points, so the
    identity returns the points unchanged and, outside the grid box, the
    displacement is held at its boundary value (a translation stays a
    translation beyond the sampled region).
    """
    points = np.asarray(points, dtype=float)
    disp, _ = _interpolate(phi.grid, phi.displacement(), points)
    return points + disp


# ---------------------------------------------------------------------------
# transport

def advect_inverse_map(phi: InverseMap, v: VectorField, dt: float) -> InverseMap:
    """One semi-Lagrangian step ``phi_new(x) = phi(x - dt * v(x))``."""
    grid = same_grid(phi, v)
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    # index space keeps voxel centres exact, so v = 0 reproduces phi bit for bit
    index = np.stack(np.meshgrid(*[np.arange(n, dtype=float) for n in grid.dims], indexing="ij"), axis=-1)
    query = index - dt * v.values / np.asarray(grid.spacing)
    values, overflow = _interpolate(grid, phi.mapped, query, index_space=True)
    return InverseMap(grid, values + overflow)


def compose_warp(image: ScalarField, phi: InverseMap) -> ScalarField:
    """Pull ``image`` back through ``phi``; the result lives on ``phi.grid``."""
    values, _ = _interpolate(image.grid, image.values, phi.mapped)
    return ScalarField(phi.grid, values)


# ---------------------------------------------------------------------------
# finite differences

def jacobian_matrix(phi: InverseMap) -> np.ndarray:
    """``J[..., c, d] = d mapped_c / d x_d``; central inside, one-sided at the faces."""
    grid = phi.grid
    if any(n < 3 for n in grid.dims):
        raise GridTooSmallError(f"jacobian needs >= 3 voxels per axis, got {grid.dims}")
    # differentiate the displacement so the identity map gives exactly I
    disp = phi.mapped - grid.coordinates()
    jac = np.empty(tuple(grid.dims) + (grid.ndims, grid.ndims))
    for c in range(grid.ndims):
        grads = np.gradient(disp[..., c], *grid.spacing, edge_order=1)
        for d in range(grid.ndims):
            jac[..., c, d] = grads[d]
    jac += np.eye(grid.ndims)
    return jac


def jacobian_determinant(phi: InverseMap) -> ScalarField:
    return ScalarField(phi.grid, np.linalg.det(jacobian_matrix(phi)))


def interior(values: np.ndarray, ndims: int, width: int = 1) -> np.ndarray:
    """Strip ``width`` voxels from every face of the first ``ndims`` axes."""
    return values[(slice(width, -width),) * ndims]


def _periodic_central(values, axis, h):
    return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2.0 * h)


def _mirror_central(values, axis, h):
    # ghost samples mirror the first interior voxel with odd symmetry
    pad = [(0, 0)] * values.ndim
    pad[axis] = (1, 1)
    ext = np.pad(values, pad, mode="reflect")
    lo = [slice(None)] * values.ndim
    hi = [slice(None)] * values.ndim
    lo[axis], hi[axis] = 0, -1
    ext[tuple(lo)] *= -1.0
    ext[tuple(hi)] *= -1.0
    return (np.take(ext, np.arange(2, ext.shape[axis]), axis=axis)
            - np.take(ext, np.arange(0, ext.shape[axis] - 2), axis=axis)) / (2.0 * h)


def divergence(v: VectorField, boundary: str = "periodic") -> ScalarField:
    """Central-difference divergence.

    ``boundary="periodic"`` wraps at the faces; ``"slip"`` uses mirror ghost
    voxels in which each component is odd along its own axis, the stencil
    that pairs with the slip spectral plan.  Both agree at interior voxels.
    """
    grid = v.grid
    if any(n < 3 for n in grid.dims):
        raise GridTooSmallError(f"divergence needs >= 3 voxels per axis, got {grid.dims}")
    if boundary not in ("periodic", "slip"):
        raise ParameterError(f"boundary must be 'periodic' or 'slip', got {boundary!r}")
    central = _periodic_central if boundary == "periodic" else _mirror_central
    div = np.zeros(grid.dims)
    for d, h in enumerate(grid.spacing):
        div += central(v.values[..., d], d, h)
    return ScalarField(grid, div)


def gradient(f: ScalarField) -> VectorField:
    """Central-difference gradient with periodic wrap, matching ``divergence``."""
    grid = f.grid
    comps = [_periodic_central(f.values, d, h) for d, h in enumerate(grid.spacing)]
    return VectorField(grid, np.stack(comps, axis=-1))
