"""Region-split, transition-corrected cross-entropy with analytic gradients.

The loss of a prediction against smoothed targets splits over the mask: voxels
with unaltered labels contribute plain soft cross-entropy, altered voxels
contribute the backward-corrected term where the per-class loss vector is
multiplied by C = (T^T + lambda*I)^-1 before contracting with the target row.
Gradients are taken with respect to pre-softmax scores.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .volume import ProbVolume, ScalarMap, ScoreVolume

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossReport:
    total: float
    clean_term: float
    corrected_term: float
    per_voxel: ScalarMap | None = None

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "clean_term": self.clean_term,
            "corrected_term": self.corrected_term,
        }


def softmax(scores: ScoreVolume) -> ProbVolume:
    """Row-wise stable softmax."""
    probs = _softmax_rows(scores.scores)
    return ProbVolume(scores.geometry, probs, scores.num_labels)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _combined_coefficients(targets: ProbVolume, mask: ScalarMap, c: np.ndarray) -> np.ndarray:
    """Per-voxel class coefficients a: the target row where the mask is 0,
    C^T times the target row where it is 1.  Both the loss total and its score
    gradient are plain weighted cross-entropy in these coefficients."""
    altered = mask.values == 1.0
    coeff = targets.probs.copy()
    coeff[altered] = targets.probs[altered] @ c
    return coeff


def _check_inputs(scores, targets, mask, c):
    if not isinstance(scores, ScoreVolume):
        raise ValidationError("scores must be a ScoreVolume")
    if scores.geometry != targets.geometry or scores.geometry != mask.geometry:
        raise ValidationError("scores, targets and mask must share geometry")
    if scores.num_labels != targets.num_labels:
        raise ValidationError("scores and targets disagree on num_labels")
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (scores.num_labels, scores.num_labels):
        raise ValidationError(
            f"corrected inverse must be {scores.num_labels}x{scores.num_labels}"
        )
    if not mask.is_binary():
        raise ValidationError("mask must be binary")
    return c


def corrected_loss(
    scores: ScoreVolume,
    targets: ProbVolume,
    mask: ScalarMap,
    c: np.ndarray,
    reduction: str = "sum",
    keep_per_voxel: bool = False,
) -> LossReport:
    """Mask-split corrected cross-entropy.

    Per voxel, with p the softmax row and l = -log(max(p, 1e-12)):
    unaltered voxels contribute sum_k q_k * l_k, altered voxels contribute
    sum_k q_k * (C l)_k.  ``reduction`` is "sum" (default) or "mean" (divides
    every reported term by the voxel count).
    """
    c = _check_inputs(scores, targets, mask, c)
    if reduction not in ("sum", "mean"):
        raise ValidationError(f"unknown reduction {reduction!r}")

    p = _softmax_rows(scores.scores)
    log_vec = -np.log(np.maximum(p, LOG_FLOOR))
    altered = mask.values == 1.0

    per_voxel = np.empty(p.shape[0], dtype=np.float64)
    clean_rows = (targets.probs[~altered] * log_vec[~altered]).sum(axis=1)
    corr_rows = (targets.probs[altered] * (log_vec[altered] @ c.T)).sum(axis=1)
    per_voxel[~altered] = clean_rows
    per_voxel[altered] = corr_rows

    scale = 1.0 / p.shape[0] if reduction == "mean" else 1.0
    clean_term = float(clean_rows.sum() * scale)
    corrected_term = float(corr_rows.sum() * scale)
    report_map = None
    if keep_per_voxel:
        report_map = ScalarMap(scores.geometry, per_voxel * scale)
    return LossReport(
        total=clean_term + corrected_term,
        clean_term=clean_term,
        corrected_term=corrected_term,
        per_voxel=report_map,
    )


def corrected_loss_grad(
    scores: ScoreVolume,
    targets: ProbVolume,
    mask: ScalarMap,
    c: np.ndarray,
    reduction: str = "sum",
) -> np.ndarray:
    """Gradient of :func:`corrected_loss` with respect to the scores.

    With per-voxel class coefficients a (the target row for unaltered voxels,
    C^T times the target row for altered ones) the row gradient is
    (sum_k a_k) * p - a.
    """
    c = _check_inputs(scores, targets, mask, c)
    if reduction not in ("sum", "mean"):
        raise ValidationError(f"unknown reduction {reduction!r}")

    p = _softmax_rows(scores.scores)
    coeff = _combined_coefficients(targets, mask, c)
    grad = coeff.sum(axis=1, keepdims=True) * p - coeff
    if reduction == "mean":
        grad /= p.shape[0]
    return grad
