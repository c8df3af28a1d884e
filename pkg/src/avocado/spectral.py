"""Fourier-domain operators on periodic grids.

All operators here are Fourier multipliers built from the symbols of the
central-difference stencils, so they pair exactly with
:func:`avocado.fields.divergence`.  Real-input transforms are used; every
multiplier is even in frequency, which keeps the spectra Hermitian.

A plan built with ``boundary="slip"`` applies the same operators to the
mirror image of the box (``2 (n - 1)`` samples per axis), with each vector
component reflected oddly along its own axis and evenly along the others.
Projected fields then have no flow through the faces and nothing wraps from
one face to the opposite one.  The mirror is never formed explicitly; real
cosine and sine transforms give the same coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatchError, GridTooSmallError, ParameterError
from .fields import Grid, ScalarField, VectorField, same_grid


@dataclass(frozen=True, eq=False)
class SpectralPlan:
    """Frequency-domain symbols for one grid.

    ``gradient_symbol[d]`` holds the real factor ``s_d`` of the symbol of the
    central difference along axis ``d``; it is zero at DC and at exact
    Nyquist.  ``laplacian_symbol`` is the symbol of the negative discrete
    Laplacian (non-negative).  ``transform`` and ``untransform`` move vector
    values to per-component coefficient arrays and back.
    """

    grid: Grid
    gradient_symbol: tuple
    laplacian_symbol: np.ndarray
    grad_norm2: np.ndarray = field(repr=False)
    boundary: str = "periodic"

    @property
    def axes(self):
        return tuple(range(self.grid.ndims))

    def transform(self, values):
        nd = self.grid.ndims
        if self.boundary == "periodic":
            return [sfft.rfftn(values[..., d], axes=self.axes) for d in range(nd)]
        return [_slip_forward(values[..., d], d) for d in range(nd)]

    def untransform(self, coeffs):
        if self.boundary == "periodic":
            out = [sfft.irfftn(c, s=self.grid.dims, axes=self.axes) for c in coeffs]
        else:
            out = [_slip_inverse(c, d) for d, c in enumerate(coeffs)]
        return np.stack(out, axis=-1)


# Slip coefficients: DCT-I along axes where the component is even, DST-I
# (on the interior samples, zero-padded to the full length) along the
# component's own axis.  Both equal the FFT of the mirrored box up to the
# same per-mode scale, so the periodic multipliers carry over unchanged.

def _slip_forward(values, comp_axis):
    out = values
    for ax in range(values.ndim):
        if ax == comp_axis:
            n = out.shape[ax]
            inner = sfft.dst(np.take(out, np.arange(1, n - 1), axis=ax), type=1, axis=ax)
            pad = [(0, 0)] * out.ndim
            pad[ax] = (1, 1)
            out = np.pad(inner, pad)
        else:
            out = sfft.dct(out, type=1, axis=ax)
    return out


def _slip_inverse(coeffs, comp_axis):
    out = coeffs
    for ax in range(coeffs.ndim):
        if ax == comp_axis:
            n = out.shape[ax]
            inner = sfft.idst(np.take(out, np.arange(1, n - 1), axis=ax), type=1, axis=ax)
            pad = [(0, 0)] * out.ndim
            pad[ax] = (1, 1)
            out = np.pad(inner, pad)
        else:
            out = sfft.idct(out, type=1, axis=ax)
    return out


def _axis_frequencies(n, last):
    k = np.arange(n // 2 + 1) if last else np.fft.fftfreq(n, 1.0 / n)
    return np.asarray(k, dtype=float)


def make_plan(grid: Grid, boundary: str = "periodic") -> SpectralPlan:
    if boundary not in ("periodic", "slip"):
        raise ParameterError(f"boundary must be 'periodic' or 'slip', got {boundary!r}")
    if boundary == "slip" and any(n < 3 for n in grid.dims):
        raise GridTooSmallError(f"slip boundary needs >= 3 voxels per axis, got {grid.dims}")
    nd = grid.ndims
    grads = []
    lap = 0.0
    for d, (n, h) in enumerate(zip(grid.dims, grid.spacing)):
        if boundary == "periodic":
            k = _axis_frequencies(n, last=(d == nd - 1))
            theta = 2.0 * np.pi * k / n
            nyquist = (np.abs(k) == n // 2) if n % 2 == 0 else np.zeros(k.shape, bool)
        else:
            k = np.arange(n, dtype=float)
            theta = np.pi * k / (n - 1)
            nyquist = k == n - 1
        s = np.sin(theta) / h
        # sin(pi) is not exactly zero in floating point
        s[k == 0] = 0.0
        s[nyquist] = 0.0
        shape = [1] * nd
        shape[d] = s.size
        grads.append(s.reshape(shape))
        lap = lap + ((2.0 - 2.0 * np.cos(theta)) / h**2).reshape(shape)
    norm2 = sum(g**2 for g in grads)
    norm2 = np.broadcast_to(norm2, np.broadcast_shapes(*(g.shape for g in grads)))
    return SpectralPlan(grid, tuple(grads), np.asarray(lap), np.ascontiguousarray(norm2), boundary)


def _check(v, plan):
    if v.grid != plan.grid:
        raise GridMismatchError(f"field grid {v.grid} does not match plan grid {plan.grid}")


def project_div_free(v: VectorField, plan: SpectralPlan) -> VectorField:
    """Remove the curl-free part of ``v`` frequency by frequency.

    Frequencies where the gradient symbol vanishes (DC and Nyquist corners)
    pass through unchanged.
    """
    _check(v, plan)
    spectra = plan.transform(v.values)
    dot = sum(s * f for s, f in zip(plan.gradient_symbol, spectra))
    norm2 = plan.grad_norm2
    coef = np.zeros_like(dot)
    active = norm2 > 0
    coef[active] = dot[active] / norm2[active]
    out = [f - coef * s for f, s in zip(spectra, plan.gradient_symbol)]
    return VectorField(v.grid, plan.untransform(out))


def blend_incompressible(v_orig: VectorField, v_div: VectorField, alpha) -> VectorField:
    """Pointwise convex combination ``(1 - alpha) v_orig + alpha v_div``.

    ``alpha`` may be a scalar or a :class:`ScalarField` on the same grid.
    """
    same_grid(v_orig, v_div)
    if isinstance(alpha, ScalarField):
        same_grid(v_orig, alpha)
        a = alpha.values
    else:
        a = np.asarray(float(alpha))
    if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
        raise ParameterError("incompressibility weight must lie in [0, 1]")
    if a.ndim == 0:
        if a == 1.0:
            return VectorField(v_div.grid, v_div.values.copy())
        if a == 0.0:
            return VectorField(v_orig.grid, v_orig.values.copy())
    else:
        a = a[..., None]
    return VectorField(v_orig.grid, (1.0 - a) * v_orig.values + a * v_div.values)


def cauchy_navier_smooth(g: VectorField, plan: SpectralPlan, alpha_cn: float, gamma: float) -> VectorField:
    """Apply the inverse of ``L = -alpha_cn * Laplacian + gamma * I`` to each component."""
    _check(g, plan)
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive (operator singular at DC), got {gamma}")
    if alpha_cn < 0:
        raise ParameterError(f"alpha_cn must be non-negative, got {alpha_cn}")
    denom = gamma + alpha_cn * plan.laplacian_symbol
    out = [c / denom for c in plan.transform(g.values)]
    return VectorField(g.grid, plan.untransform(out))
