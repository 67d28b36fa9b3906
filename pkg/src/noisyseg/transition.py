"""Empirical label transition matrix and its regularized transposed inverse.

T[k][j] accumulates, over voxels whose label was altered by smoothing
(mask 1) and whose hard label is j, the smoothed probability of observing
label k.  Columns are normalized to sum to one (left-stochastic); a column
with no mass falls back to the identity column, since a label never seen in
uncertain regions carries no evidence of flipping.  The loss consumes
C = (T^T + lambda*I)^-1, cached here with a residual check.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .volume import LabelVolume, ProbVolume, ScalarMap

DEFAULT_LAMBDA = 1.0
COLUMN_SUM_TOL = 1e-9
LOAD_COLUMN_SUM_TOL = 1e-6
RESIDUAL_TOL = 1e-8
CONDITION_LIMIT = 1e12
TRANSITION_CSV_VERSION = 1


def corrected_inverse(t: np.ndarray, lam: float, transpose: bool = True) -> np.ndarray:
    """(T^T + lambda*I)^-1, or (T + lambda*I)^-1 with ``transpose=False``.

    Raises :class:`NumericalError` when the matrix is numerically singular
    (condition estimate above 1e12) or the inverse residual exceeds 1e-8.
    """
    t = np.asarray(t, dtype=np.float64)
    if lam < 0:
        raise ValidationError(f"lambda must be >= 0, got {lam}")
    num_labels = t.shape[0]
    a = (t.T if transpose else t) + lam * np.eye(num_labels)
    if np.linalg.cond(a) > CONDITION_LIMIT:
        raise NumericalError(
            f"T^T + {lam}*I is numerically singular (condition > {CONDITION_LIMIT:g})"
        )
    c = np.linalg.solve(a, np.eye(num_labels))
    residual = np.abs(c @ a - np.eye(num_labels)).max()
    if residual > RESIDUAL_TOL:
        raise NumericalError(f"inverse residual {residual:.3g} exceeds {RESIDUAL_TOL}")
    return c


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Left-stochastic L x L matrix with a cached regularized inverse."""

    t: np.ndarray
    lam: float = DEFAULT_LAMBDA
    corrected: np.ndarray = field(default=None, repr=False)
    column_tol: float = COLUMN_SUM_TOL

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValidationError(f"transition matrix must be square, got {t.shape}")
        if not np.isfinite(t).all():
            raise ValidationError("transition matrix entries must be finite")
        if t.min() < 0.0 or t.max() > 1.0:
            raise ValidationError("transition matrix entries must lie in [0, 1]")
        col_err = np.abs(t.sum(axis=0) - 1.0)
        if col_err.max() > self.column_tol:
            raise ValidationError(
                f"column sums off unity by {col_err.max():.3g} (> {self.column_tol})"
            )
        if float(self.lam) < 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        t.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "lam", float(self.lam))
        if self.corrected is None:
            object.__setattr__(self, "corrected", corrected_inverse(t, float(self.lam)))

    @property
    def num_labels(self) -> int:
        return self.t.shape[0]


def estimate_transition(
    pairs: list[tuple[LabelVolume, ProbVolume, ScalarMap]],
    lam: float = DEFAULT_LAMBDA,
) -> TransitionMatrix:
    """Accumulate T over all volumes from voxels with hard label j and mask 1.

    Per-volume partial sums are combined in list order, so the result is
    independent of how volumes are distributed over workers.
    """
    if not pairs:
        raise ValidationError("estimate_transition needs at least one volume triple")
    num_labels = pairs[0][0].num_labels
    acc = np.zeros((num_labels, num_labels), dtype=np.float64)
    for hard, probs, mask in pairs:
        if hard.num_labels != num_labels or probs.num_labels != num_labels:
            raise ValidationError("all volumes must share the same label count")
        if hard.geometry != probs.geometry or hard.geometry != mask.geometry:
            raise ValidationError("volume triple has mismatched geometry")
        acc += _accumulate(hard, probs, mask, num_labels)

    t = np.zeros_like(acc)
    col_mass = acc.sum(axis=0)
    for j in range(num_labels):
        if col_mass[j] == 0.0:
            t[j, j] = 1.0
        else:
            t[:, j] = acc[:, j] / col_mass[j]
    return TransitionMatrix(t, lam)


def _accumulate(hard, probs, mask, num_labels) -> np.ndarray:
    part = np.zeros((num_labels, num_labels), dtype=np.float64)
    selected = mask.values == 1.0
    labels = hard.labels[selected]
    rows = probs.probs[selected]
    for j in range(num_labels):
        of_label = labels == j
        if of_label.any():
            part[:, j] = rows[of_label].sum(axis=0)
    return part


def save_transition(tm: TransitionMatrix, path) -> None:
    """CSV with full float precision: one header comment, then L rows of L entries."""
    num_labels = tm.num_labels
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# transition {num_labels}x{num_labels} lambda={tm.lam!r}\n")
        for row in tm.t:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_transition(path) -> TransitionMatrix:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line.strip() for line in fh if line.strip()]
    except FileNotFoundError as exc:
        raise ValidationError(f"missing transition file: {path}") from exc
    if not lines or not lines[0].startswith("# transition"):
        raise ValidationError(f"{path}: missing '# transition' header line")
    header = lines[0]
    lam = DEFAULT_LAMBDA
    for token in header.split():
        if token.startswith("lambda="):
            try:
                lam = float(token.removeprefix("lambda="))
            except ValueError as exc:
                raise ValidationError(f"{path}: bad lambda in header: {header}") from exc
    try:
        rows = [np.array([float(v) for v in line.split(",")]) for line in lines[1:]]
    except ValueError as exc:
        raise ValidationError(f"{path}: malformed CSV row: {exc}") from exc
    if not rows or any(len(r) != len(rows) for r in rows):
        raise ValidationError(f"{path}: transition CSV must be square")
    return TransitionMatrix(np.vstack(rows), lam, column_tol=LOAD_COLUMN_SUM_TOL)
