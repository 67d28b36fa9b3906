"""Typed 3D volumes on a regular grid, plus bit-exact raw-binary file I/O.

A volume is a flat payload array with an x-fastest linearization: the voxel at
integer index (x, y, z) lives at flat position ``x + nx*(y + ny*z)``.  Use
:meth:`LabelVolume.grid` (and friends) to view the payload as an (nx, ny, nz)
array indexed ``grid[x, y, z]``.

On disk a volume is a JSON header (``<name>.json``) next to a raw little-endian
payload (``<name>.raw``).  Labels are stored as unsigned 16-bit integers,
probabilities and scalar maps as 32-bit IEEE floats.  In memory, float payloads
are kept in float64 so downstream numerics are not limited by the interchange
precision; the written payload bytes always round-trip exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

VOLUME_FORMAT_VERSION = 1

# element codes used in headers; all payloads are little-endian
_ELEM_DTYPES = {
    "u2": np.dtype("<u2"),
    "f4": np.dtype("<f4"),
}

ROW_SUM_TOL = 1e-6


def _readonly(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True, eq=False)
class GridGeometry:
    """Voxel counts (nx, ny, nz) and physical spacing (sx, sy, sz) in mm."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise ValidationError("geometry needs exactly three dims and three spacings")
        if any(d < 1 for d in dims):
            raise ValidationError(f"all dims must be >= 1, got {dims}")
        if any(not math.isfinite(s) or s <= 0 for s in spacing):
            raise ValidationError(f"all spacings must be finite and > 0, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def num_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def __eq__(self, other):
        return (
            isinstance(other, GridGeometry)
            and self.dims == other.dims
            and self.spacing == other.spacing
        )

    def __hash__(self):
        return hash((self.dims, self.spacing))


def _check_geometry_payload(geometry: GridGeometry, n: int, what: str):
    if n != geometry.num_voxels:
        raise ValidationError(
            f"{what} has {n} voxels but geometry {geometry.dims} implies {geometry.num_voxels}"
        )


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Hard per-voxel labels; ids in [0, num_labels), id 0 reserved for background."""

    geometry: GridGeometry
    labels: np.ndarray
    num_labels: int
    meta: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels)
        if labels.ndim != 1:
            raise ValidationError("labels must be a flat array")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValidationError("labels must be integers")
        if labels.dtype != np.uint16:
            if labels.size and (labels.min() < 0 or labels.max() > np.iinfo(np.uint16).max):
                raise ValidationError("label ids do not fit in uint16")
            labels = labels.astype(np.uint16)
        _check_geometry_payload(self.geometry, labels.size, "label volume")
        if int(self.num_labels) < 2:
            raise ValidationError("num_labels must be >= 2")
        if labels.size and int(labels.max()) >= int(self.num_labels):
            raise ValidationError(
                f"label id {int(labels.max())} >= num_labels {self.num_labels}"
            )
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "num_labels", int(self.num_labels))

    def grid(self) -> np.ndarray:
        """(nx, ny, nz) view indexed [x, y, z]."""
        return self.labels.reshape(self.geometry.dims, order="F")


@dataclass(frozen=True, eq=False)
class ProbVolume:
    """Per-voxel probability rows over num_labels classes; rows sum to 1."""

    geometry: GridGeometry
    probs: np.ndarray
    num_labels: int
    meta: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[1] != int(self.num_labels):
            raise ValidationError(
                f"probs must be N x {self.num_labels}, got shape {probs.shape}"
            )
        _check_geometry_payload(self.geometry, probs.shape[0], "probability volume")
        if int(self.num_labels) < 2:
            raise ValidationError("num_labels must be >= 2")
        if not np.isfinite(probs).all():
            raise ValidationError("probabilities must be finite")
        if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
            raise ValidationError("probabilities must lie in [0, 1]")
        row_err = np.abs(probs.sum(axis=1) - 1.0)
        if probs.size and row_err.max() > ROW_SUM_TOL:
            raise ValidationError(
                f"probability row off the simplex by {row_err.max():.3g} (> {ROW_SUM_TOL})"
            )
        object.__setattr__(self, "probs", _readonly(probs))
        object.__setattr__(self, "num_labels", int(self.num_labels))

    def argmax_labels(self) -> LabelVolume:
        ids = np.argmax(self.probs, axis=1).astype(np.uint16)
        return LabelVolume(self.geometry, ids, self.num_labels)


@dataclass(frozen=True, eq=False)
class ScoreVolume:
    """Pre-softmax scores (logits), one row of num_labels reals per voxel."""

    geometry: GridGeometry
    scores: np.ndarray
    num_labels: int
    meta: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[1] != int(self.num_labels):
            raise ValidationError(f"scores must be N x {self.num_labels}")
        _check_geometry_payload(self.geometry, scores.shape[0], "score volume")
        if not np.isfinite(scores).all():
            raise ValidationError("scores must be finite")
        object.__setattr__(self, "scores", _readonly(scores))
        object.__setattr__(self, "num_labels", int(self.num_labels))


@dataclass(frozen=True, eq=False)
class ScalarMap:
    """One real value per voxel (uncertainty maps, binary masks, intensities)."""

    geometry: GridGeometry
    values: np.ndarray
    meta: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValidationError("scalar map must be a flat array")
        _check_geometry_payload(self.geometry, values.size, "scalar map")
        if not np.isfinite(values).all():
            raise ValidationError("scalar map values must be finite")
        object.__setattr__(self, "values", _readonly(values))

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.geometry.dims, order="F")

    def is_binary(self) -> bool:
        return bool(np.isin(self.values, (0.0, 1.0)).all())


@dataclass(frozen=True, eq=False)
class UncertaintyTable:
    """Per-label boundary uncertainty in voxels (nonnegative integers)."""

    per_label_uncertainty: dict[int, int]

    def __post_init__(self):
        table = {}
        for key, val in self.per_label_uncertainty.items():
            label = int(key)
            if label < 0:
                raise ValidationError(f"label id {label} is negative")
            if float(val) != int(val) or int(val) < 0:
                raise ValidationError(
                    f"uncertainty for label {label} must be a nonnegative integer, got {val!r}"
                )
            table[label] = int(val)
        if not table:
            raise ValidationError("uncertainty table is empty")
        object.__setattr__(self, "per_label_uncertainty", table)

    @property
    def max_uncertainty(self) -> int:
        return max(self.per_label_uncertainty.values())

    def as_array(self, num_labels: int) -> np.ndarray:
        """Length-L lookup array; every id in [0, num_labels) must have an entry."""
        missing = [l for l in range(num_labels) if l not in self.per_label_uncertainty]
        if missing:
            raise ValidationError(
                f"uncertainty table has no entry for labels {missing} (background included)"
            )
        return np.array(
            [self.per_label_uncertainty[l] for l in range(num_labels)], dtype=np.int64
        )

    @classmethod
    def from_json(cls, path) -> "UncertaintyTable":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValidationError(f"{path}: uncertainty table must be a JSON object")
        return cls({int(k): v for k, v in raw.items()})

    def to_json(self, path) -> None:
        payload = {str(k): v for k, v in sorted(self.per_label_uncertainty.items())}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


Volume = LabelVolume | ProbVolume | ScalarMap | ScoreVolume

_KINDS = {"labels": LabelVolume, "probs": ProbVolume, "scalar": ScalarMap, "scores": ScoreVolume}


def _header_for(vol: Volume) -> dict:
    if isinstance(vol, LabelVolume):
        kind, elem = "labels", "u2"
    elif isinstance(vol, ProbVolume):
        kind, elem = "probs", "f4"
    elif isinstance(vol, ScoreVolume):
        kind, elem = "scores", "f4"
    elif isinstance(vol, ScalarMap):
        kind, elem = "scalar", "f4"
    else:
        raise ValidationError(f"not a volume: {type(vol).__name__}")
    header = {
        "format": "noisyseg-volume",
        "format_version": VOLUME_FORMAT_VERSION,
        "kind": kind,
        "dims": list(vol.geometry.dims),
        "spacing": list(vol.geometry.spacing),
        "elem": elem,
        "byte_order": "little",
        "order": "x-fastest",
    }
    if kind in ("labels", "probs", "scores"):
        header["num_labels"] = vol.num_labels
    if vol.meta is not None:
        header["meta"] = vol.meta
    return header


def write_volume(vol: Volume, header_path) -> None:
    """Write ``<name>.json`` + ``<name>.raw``; refuses volumes with invalid payloads."""
    header_path = Path(header_path)
    if header_path.suffix != ".json":
        raise ValidationError(f"volume header path must end in .json, got {header_path}")
    header = _header_for(vol)

    if isinstance(vol, LabelVolume):
        payload = np.ascontiguousarray(vol.labels, dtype=_ELEM_DTYPES["u2"])
    else:
        if isinstance(vol, ProbVolume):
            data = vol.probs
        elif isinstance(vol, ScoreVolume):
            data = vol.scores
        else:
            data = vol.values
        if not np.isfinite(data).all():
            raise ValidationError("refusing to write non-finite payload")
        payload = np.ascontiguousarray(data, dtype=_ELEM_DTYPES["f4"])

    payload_path = header_path.with_suffix(".raw")
    header["payload"] = payload_path.name
    header_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(header_path, "w", encoding="utf-8") as fh:
            json.dump(header, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(payload_path, "wb") as fh:
            fh.write(payload.tobytes())
    except OSError as exc:
        raise ValidationError(f"cannot write volume to {header_path}: {exc}") from exc


def read_volume(header_path) -> Volume:
    """Read a volume written by :func:`write_volume`; validates all invariants."""
    header_path = Path(header_path)
    try:
        with open(header_path, "r", encoding="utf-8") as fh:
            header = json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"missing volume header: {header_path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{header_path}: malformed JSON header: {exc}") from exc

    for key in ("kind", "dims", "elem", "payload"):
        if key not in header:
            raise ValidationError(f"{header_path}: header missing field {key!r}")
    kind = header["kind"]
    if kind not in _KINDS:
        raise ValidationError(f"{header_path}: unknown volume kind {kind!r}")
    if header.get("byte_order", "little") != "little":
        raise ValidationError(f"{header_path}: only little-endian payloads are supported")
    elem = header["elem"]
    if elem not in _ELEM_DTYPES:
        raise ValidationError(f"{header_path}: unknown element type {elem!r}")

    geometry = GridGeometry(tuple(header["dims"]), tuple(header.get("spacing", (1.0, 1.0, 1.0))))
    payload_path = header_path.parent / header["payload"]
    try:
        raw = payload_path.read_bytes()
    except FileNotFoundError as exc:
        raise ValidationError(f"missing payload file: {payload_path}") from exc

    dtype = _ELEM_DTYPES[elem]
    n_elems = geometry.num_voxels
    if kind in ("probs", "scores"):
        if "num_labels" not in header:
            raise ValidationError(f"{header_path}: {kind} volume header needs num_labels")
        n_elems *= int(header["num_labels"])
    expected = n_elems * dtype.itemsize
    if len(raw) != expected:
        raise ValidationError(
            f"{payload_path}: payload is {len(raw)} bytes, header declares {expected}"
        )
    flat = np.frombuffer(raw, dtype=dtype)
    meta = header.get("meta")

    if kind == "labels":
        if "num_labels" not in header:
            raise ValidationError(f"{header_path}: label volume header needs num_labels")
        return LabelVolume(geometry, flat, int(header["num_labels"]), meta=meta)
    if kind in ("probs", "scores"):
        num_labels = int(header["num_labels"])
        rows = flat.astype(np.float64).reshape(geometry.num_voxels, num_labels)
        cls = ProbVolume if kind == "probs" else ScoreVolume
        return cls(geometry, rows, num_labels, meta=meta)
    return ScalarMap(geometry, flat.astype(np.float64), meta=meta)


def index_ball(center, radius, geometry: GridGeometry) -> np.ndarray:
    """All in-bounds voxel indices within Euclidean distance ``radius`` of ``center``.

    Distances are measured in voxel index units (not mm).  Returns an (M, 3)
    int64 array of (x, y, z) triples sorted by flat index (x-fastest), so the
    order is deterministic.
    """
    cx, cy, cz = (int(c) for c in center)
    nx, ny, nz = geometry.dims
    if not (0 <= cx < nx and 0 <= cy < ny and 0 <= cz < nz):
        raise ValidationError(f"center {center} outside grid {geometry.dims}")
    radius = float(radius)
    if radius < 0 or not math.isfinite(radius):
        raise ValidationError(f"radius must be finite and >= 0, got {radius}")

    reach = int(math.floor(radius))
    xs = np.arange(max(0, cx - reach), min(nx, cx + reach + 1))
    ys = np.arange(max(0, cy - reach), min(ny, cy + reach + 1))
    zs = np.arange(max(0, cz - reach), min(nz, cz + reach + 1))
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    d2 = (gx - cx) ** 2 + (gy - cy) ** 2 + (gz - cz) ** 2
    keep = d2 <= radius * radius
    pts = np.stack([gx[keep], gy[keep], gz[keep]], axis=1).astype(np.int64)
    flat = pts[:, 0] + nx * (pts[:, 1] + ny * pts[:, 2])
    return pts[np.argsort(flat, kind="stable")]
