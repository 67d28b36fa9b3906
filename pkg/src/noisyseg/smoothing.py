"""Spatially-varying label smoothing driven by per-tissue boundary uncertainty.

For each voxel the R-ball neighborhood is inspected (R = the table's maximum
uncertainty).  Voxels far from any label boundary, or near a boundary whose
most certain adjoining tissue has uncertainty 0, keep their one-hot row.  Every
other voxel gets an exp-weighted average of the hard labels in its r_u-ball,
where r_u is the minimum uncertainty seen in the R-ball and the kernel width
tau defaults to r_u.  Balls are clipped at the volume border and the weights
renormalized over the clipped set, so rows always stay on the simplex.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ValidationError
from .volume import LabelVolume, ProbVolume, ScalarMap, UncertaintyTable


@dataclass(frozen=True, eq=False)
class SmoothingOutput:
    smoothed: ProbVolume
    mask: ScalarMap
    uncertainty_map: ScalarMap


def build_uncertainty_map(labels: LabelVolume, table: UncertaintyTable) -> ScalarMap:
    """Per-voxel uncertainty U(i) = table[label(i)], in voxels."""
    utab = table.as_array(labels.num_labels)
    return ScalarMap(labels.geometry, utab[labels.labels].astype(np.float64))


def smooth_labels(
    labels: LabelVolume,
    table: UncertaintyTable,
    tau_override: float | None = None,
    threads: int | None = None,
) -> SmoothingOutput:
    """Smooth hard labels into per-voxel probability rows.

    ``tau_override`` fixes the weight kernel width instead of the default
    tau = r_u.  ``threads`` pins the worker count for this call (0/None keeps
    the current setting); the output is bit-identical for any thread count.
    """
    if not isinstance(labels, LabelVolume):
        raise ValidationError(
            "smooth_labels takes hard labels; re-smoothing soft volumes is undefined"
        )
    if tau_override is not None and tau_override <= 0:
        raise ValidationError(f"tau override must be > 0, got {tau_override}")

    num_labels = labels.num_labels
    utab = table.as_array(num_labels)
    big_r = int(utab.max())

    nx, ny, nz = labels.geometry.dims
    n = labels.geometry.num_voxels
    offs_r, _ = _kernels.ball_offsets(big_r)
    offs_all, w_all, seg = _kernels.build_weight_segments(big_r, tau_override)
    dflat_r = offs_r[:, 0] + nx * (offs_r[:, 1] + ny * offs_r[:, 2])
    dflat_all = offs_all[:, 0] + nx * (offs_all[:, 1] + ny * offs_all[:, 2])

    probs = np.zeros((n, num_labels), dtype=np.float64)
    mask = np.zeros(n, dtype=np.uint8)
    with _kernels.run_threads(threads):
        _kernels.smooth_kernel(
            labels.labels, nx, ny, nz, utab, big_r,
            offs_r, dflat_r, offs_all, dflat_all, w_all, seg, probs, mask,
        )

    geometry = labels.geometry
    return SmoothingOutput(
        smoothed=ProbVolume(geometry, probs, num_labels),
        mask=ScalarMap(geometry, mask.astype(np.float64)),
        uncertainty_map=ScalarMap(geometry, utab[labels.labels].astype(np.float64)),
    )


def standard_smooth(labels: LabelVolume, alpha: float) -> ProbVolume:
    """Uniform label smoothing baseline; background voxels stay exact one-hot."""
    if not (0.0 <= alpha < 1.0):
        raise ValidationError(f"alpha must lie in [0, 1), got {alpha}")
    n = labels.geometry.num_voxels
    num_labels = labels.num_labels
    probs = np.zeros((n, num_labels), dtype=np.float64)
    probs[np.arange(n), labels.labels] = 1.0
    foreground = labels.labels != 0
    probs[foreground] = (1.0 - alpha) * probs[foreground] + alpha / num_labels
    return ProbVolume(labels.geometry, probs, num_labels)


def compute_mask(original: LabelVolume, smoothed: ProbVolume) -> ScalarMap:
    """Binary map of voxels whose row is no longer the one-hot of the hard label.

    The comparison is exact: a row counts as altered when any entry differs
    from the one-hot row, equivalently when its maximum probability is not 1.
    """
    if original.geometry != smoothed.geometry:
        raise ValidationError("label and probability volumes have different geometry")
    if original.num_labels != smoothed.num_labels:
        raise ValidationError("label and probability volumes disagree on num_labels")
    n = original.geometry.num_voxels
    own = smoothed.probs[np.arange(n), original.labels]
    nonzero = np.count_nonzero(smoothed.probs, axis=1)
    altered = (own != 1.0) | (nonzero != 1)
    return ScalarMap(original.geometry, altered.astype(np.float64))
