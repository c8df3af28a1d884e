"""Landmark affine fit and its projection onto the rotation group."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfigurationError, ParameterError


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """Paired landmarks in millimetres: ``source[i]`` corresponds to ``target[i]``."""

    source: np.ndarray
    target: np.ndarray
    ids: tuple = None

    def __post_init__(self):
        source = np.atleast_2d(np.asarray(self.source, dtype=float))
        target = np.atleast_2d(np.asarray(self.target, dtype=float))
        if source.size == 0 and target.size == 0:
            source = source.reshape(0, max(source.shape[-1], 3))
            target = target.reshape(source.shape)
        if source.shape != target.shape:
            raise ParameterError(f"source {source.shape} and target {target.shape} landmark arrays differ")
        if source.shape[1] not in (2, 3):
            raise ParameterError("landmarks must be 2D or 3D points")
        ids = tuple(range(1, len(source) + 1)) if self.ids is None else tuple(self.ids)
        if len(ids) != len(source):
            raise ParameterError("one id per landmark pair is required")
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.source)

    @property
    def ndims(self) -> int:
        return self.source.shape[1]

    def offsets(self) -> np.ndarray:
        return np.linalg.norm(self.target - self.source, axis=1)


@dataclass(frozen=True, eq=False)
class AffineTransform:
    """``x -> linear @ x + translation``.

    When produced by :func:`solve_affine` the landmark centroids are kept,
    so the rigid projection can re-derive its translation from them.
    """

    linear: np.ndarray
    translation: np.ndarray
    source_centroid: np.ndarray = None
    target_centroid: np.ndarray = None

    def apply(self, points):
        return np.asarray(points, dtype=float) @ self.linear.T + self.translation


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls, ndims):
        return cls(np.eye(ndims), np.zeros(ndims))

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points):
        return apply_rigid(self, points)


def solve_affine(landmarks: LandmarkSet) -> AffineTransform:
    """Least-squares affine ``c ~ A p + t`` on centroid-subtracted landmarks."""
    nd = landmarks.ndims
    need = nd + 1
    if len(landmarks) < need:
        raise DegenerateConfigurationError(
            f"affine fit in {nd}D needs at least {need} landmark pairs, got {len(landmarks)}"
        )
    p_bar = landmarks.source.mean(axis=0)
    c_bar = landmarks.target.mean(axis=0)
    p = landmarks.source - p_bar
    c = landmarks.target - c_bar
    moment = p.T @ p
    cross = c.T @ p
    # relative conditioning test keeps the check independent of landmark units
    sv = np.linalg.svd(moment, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], np.finfo(float).tiny):
        shape = "coplanar" if nd == 3 else "collinear"
        raise DegenerateConfigurationError(f"source landmarks are {shape}; moment matrix is singular")
    linear = np.linalg.solve(moment.T, cross.T).T
    return AffineTransform(linear, c_bar - linear @ p_bar, p_bar, c_bar)


def project_to_rigid(a: AffineTransform) -> RigidTransform:
    """Nearest rotation to ``a.linear`` via SVD, with the determinant forced to +1.

    The translation maps the source centroid onto the target centroid when
    the centroids are known; otherwise the affine translation is kept.
    """
    u, _, vt = np.linalg.svd(a.linear)
    d = np.ones(u.shape[0])
    d[-1] = np.sign(np.linalg.det(u @ vt)) or 1.0
    rotation = (u * d) @ vt
    if a.source_centroid is not None and a.target_centroid is not None:
        translation = a.target_centroid - rotation @ a.source_centroid
    else:
        translation = np.asarray(a.translation, dtype=float).copy()
    return RigidTransform(rotation, translation)


def kabsch(landmarks: LandmarkSet) -> RigidTransform:
    """Least-squares rotation and translation (reference estimator, not used by the pipeline)."""
    p_bar = landmarks.source.mean(axis=0)
    c_bar = landmarks.target.mean(axis=0)
    h = (landmarks.source - p_bar).T @ (landmarks.target - c_bar)
    u, _, vt = np.linalg.svd(h)
    d = np.ones(u.shape[0])
    d[-1] = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rotation = (vt.T * d) @ u.T
    return RigidTransform(rotation, c_bar - rotation @ p_bar)


def apply_rigid(r: RigidTransform, p) -> np.ndarray:
    return np.asarray(p, dtype=float) @ r.rotation.T + r.translation
