"""Validation measurements: landmark error, volume change, overlap, paired tests, robustness."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from .errors import AvocadoError, GridMismatchError, ParameterError
from .fields import InverseMap, ScalarField, interior, jacobian_determinant, sample_map
from .rigid import LandmarkSet


@dataclass
class MetricsReport:
    tre_per_landmark: list = field(default_factory=list)
    tre_mean: float = float("nan")
    tre_std: float = float("nan")
    volume_before: float = float("nan")
    volume_after: float = float("nan")
    volume_change_pct: float = float("nan")
    jacobian_min: float = float("nan")
    jacobian_max: float = float("nan")
    jacobian_mean: float = float("nan")
    dice: float = None
    dice_both_empty: bool = False

    def as_dict(self):
        return dict(self.__dict__)


def target_registration_error(phi: InverseMap, validation: LandmarkSet) -> np.ndarray:
    """Distance in mm between ``phi(c_i)`` and ``p_i`` for every pair.

    Pairs whose target landmark lies outside the map grid get NaN and drop
    out of :func:`summarize_tre`.
    """
    if len(validation) == 0:
        return np.zeros(0)
    if validation.ndims != phi.grid.ndims:
        raise GridMismatchError("landmark and map dimensionality differ")
    deformed = sample_map(phi, validation.target)
    err = np.linalg.norm(deformed - validation.source, axis=1)
    err[~phi.grid.contains(validation.target)] = np.nan
    return err


def summarize_tre(errors) -> tuple:
    errors = np.asarray(errors, dtype=float)
    valid = errors[np.isfinite(errors)]
    if valid.size == 0:
        return float("nan"), float("nan")
    return float(valid.mean()), float(valid.std(ddof=1)) if valid.size > 1 else 0.0


def _require_binary(seg, name="mask"):
    v = seg.values
    if not np.all((v == 0.0) | (v == 1.0)):
        raise ParameterError(f"{name} must be binary (values in {{0, 1}})")


def mask_volume(seg: ScalarField) -> float:
    """Voxel count of the mask times the voxel volume (mm^3, or px^2 in 2D)."""
    _require_binary(seg)
    return float(seg.values.sum()) * seg.grid.voxel_volume


def volume_change_pct(before: float, after: float) -> float:
    return 100.0 * (after - before) / before


def dice(a: ScalarField, b: ScalarField) -> float:
    """Overlap ``2|A & B| / (|A| + |B|)``; two empty masks score 1.0."""
    if a.grid.dims != b.grid.dims:
        raise GridMismatchError(f"mask grids differ: {a.grid.dims} vs {b.grid.dims}")
    _require_binary(a, "first mask")
    _require_binary(b, "second mask")
    sa = a.values.astype(bool)
    sb = b.values.astype(bool)
    total = int(sa.sum()) + int(sb.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(sa, sb).sum()) / total


class PairedTTest(NamedTuple):
    statistic: float
    pvalue: float
    df: int
    degenerate: bool


def paired_t_test(errs_a, errs_b) -> PairedTTest:
    """Two-sided paired t-test on ``errs_a - errs_b``.

    Differences with zero spread report ``t = +-inf, p = 0`` and set
    ``degenerate``, unless they are all zero (``t = 0, p = 1``).
    """
    a = np.asarray(errs_a, dtype=float)
    b = np.asarray(errs_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ParameterError(f"paired samples must be 1D of equal length, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ParameterError("paired t-test needs at least two pairs")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return PairedTTest(0.0, 1.0, n - 1, True)
        return PairedTTest(float(np.copysign(np.inf, mean)), 0.0, n - 1, True)
    t = mean / (sd / np.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), n - 1)
    return PairedTTest(float(t), float(min(p, 1.0)), n - 1, False)


def jacobian_stats(phi: InverseMap, width: int = 1) -> tuple:
    det = interior(jacobian_determinant(phi).values, phi.grid.ndims, width)
    return float(det.min()), float(det.max()), float(det.mean())


def build_report(phi: InverseMap, validation: LandmarkSet = None, mask_before: ScalarField = None,
                 mask_after: ScalarField = None, dice_pair=None) -> MetricsReport:
    report = MetricsReport()
    report.jacobian_min, report.jacobian_max, report.jacobian_mean = jacobian_stats(phi)
    if validation is not None and len(validation):
        err = target_registration_error(phi, validation)
        report.tre_per_landmark = [float(e) for e in err]
        report.tre_mean, report.tre_std = summarize_tre(err)
    if mask_before is not None and mask_after is not None:
        report.volume_before = mask_volume(mask_before)
        report.volume_after = mask_volume(mask_after)
        report.volume_change_pct = volume_change_pct(report.volume_before, report.volume_after)
    if dice_pair is not None:
        x, y = dice_pair
        report.dice = dice(x, y)
        report.dice_both_empty = not (x.values.any() or y.values.any())
    return report


# ---------------------------------------------------------------------------
# landmark perturbation study

@dataclass
class CurvePoint:
    sigma: float
    mean_perturbation: float
    mean_tre: float
    std_tre: float
    runs: int
    failures: int = 0
    errors: list = field(default_factory=list)


def perturbation_study(target: ScalarField, source: ScalarField, landmarks: LandmarkSet,
                       validation: LandmarkSet, sigmas, seed: int, params=None, repeats: int = 1,
                       **pipeline_kwargs) -> list:
    """Re-run the registration with Gaussian noise added to every source landmark.

    Noise for sigma index ``i`` and repeat ``r`` comes from
    ``numpy.random.default_rng([seed, i, r])`` (PCG64).  A sigma of zero runs
    the unperturbed registration.  Registration failures are recorded on
    the curve point rather than raised.
    """
    from .pipeline import avocado

    curve = []
    for i, sigma in enumerate(sigmas):
        sigma = float(sigma)
        if sigma < 0:
            raise ParameterError("perturbation sigma must be non-negative")
        tres, perts, errors = [], [], []
        for r in range(repeats if sigma > 0 else 1):
            rng = np.random.default_rng([seed, i, r])
            noise = rng.normal(0.0, sigma, size=landmarks.source.shape) if sigma > 0 else np.zeros_like(landmarks.source)
            moved = LandmarkSet(landmarks.source + noise, landmarks.target, landmarks.ids)
            try:
                result = avocado(target, source, moved, params, **pipeline_kwargs)
            except (AvocadoError, np.linalg.LinAlgError) as exc:
                errors.append(f"{type(exc).__name__}: {exc}")
                continue
            err = target_registration_error(result.map, validation)
            tres.append(summarize_tre(err)[0])
            perts.append(float(np.linalg.norm(noise, axis=1).mean()))
        curve.append(CurvePoint(
            sigma=sigma,
            mean_perturbation=float(np.mean(perts)) if perts else float("nan"),
            mean_tre=float(np.mean(tres)) if tres else float("nan"),
            std_tre=float(np.std(tres)) if tres else float("nan"),
            runs=len(tres),
            failures=len(errors),
            errors=errors,
        ))
    return curve
