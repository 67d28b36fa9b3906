"""Synthetic nested-shell phantoms with known clean labels and boundary noise.

Labels are concentric spheres around the grid center: a voxel takes the index
of the innermost shell containing it (0 = background outside the largest
shell).  The intensity simulator draws per-voxel Gaussian noise around a
per-label mean.  The noise injector flips labels only inside a band around the
clean inter-label boundary whose half-width is the smaller of the two
adjoining labels' budgets, mirroring the rule that the more certain tissue
pins the boundary.

All randomness comes from numpy's PCG64 generator seeded from the spec, so
identical specs produce bit-identical volumes; the generator identity is
recorded in the output metadata.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .volume import GridGeometry, LabelVolume, ScalarMap, UncertaintyTable

FLIP_PROBABILITY = 0.5
GENERATOR_ID = "numpy.random.PCG64"


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    radii: tuple[float, ...]
    intensity_means: tuple[float, ...]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    intensity_sigma: float = 0.0
    seed: int = 0
    num_shells: int | None = None

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        if not radii or any(r <= 0 for r in radii):
            raise ValidationError("radii must be positive")
        if any(a <= b for a, b in zip(radii, radii[1:])):
            raise ValidationError(f"radii must be strictly decreasing, got {radii}")
        geometry = GridGeometry(self.dims, self.spacing)
        if 2 * radii[0] > min(geometry.dims):
            raise ValidationError(
                f"largest radius {radii[0]} does not fit inside grid {geometry.dims}"
            )
        shells = len(radii)
        if self.num_shells is not None and int(self.num_shells) != shells:
            raise ValidationError(
                f"num_shells={self.num_shells} but {shells} radii were given"
            )
        if len(self.intensity_means) != shells + 1:
            raise ValidationError(
                f"need {shells + 1} intensity means (background + shells), "
                f"got {len(self.intensity_means)}"
            )
        if self.intensity_sigma < 0:
            raise ValidationError("intensity sigma must be >= 0")
        object.__setattr__(self, "dims", geometry.dims)
        object.__setattr__(self, "spacing", geometry.spacing)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "intensity_means", tuple(float(m) for m in self.intensity_means))
        object.__setattr__(self, "num_shells", shells)

    @property
    def num_labels(self) -> int:
        return self.num_shells + 1

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.dims, self.spacing)

    @classmethod
    def from_json(cls, path) -> "PhantomSpec":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(raw) - known
        if extra:
            raise ValidationError(f"{path}: unknown phantom spec fields {sorted(extra)}")
        try:
            return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})
        except TypeError as exc:
            raise ValidationError(f"{path}: bad phantom spec: {exc}") from exc


@dataclass(frozen=True)
class NoiseSpec:
    """Per-label max boundary displacement in voxels, plus the flip seed."""

    budgets: dict[int, int]
    seed: int = 0

    def __post_init__(self):
        table = UncertaintyTable(self.budgets)  # same shape, same validation
        object.__setattr__(self, "budgets", table.per_label_uncertainty)

    def as_table(self) -> UncertaintyTable:
        return UncertaintyTable(dict(self.budgets))

    @classmethod
    def from_json(cls, path) -> "NoiseSpec":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if "budgets" not in raw:
            raise ValidationError(f"{path}: noise spec needs a 'budgets' object")
        return cls(
            budgets={int(k): v for k, v in raw["budgets"].items()},
            seed=int(raw.get("seed", 0)),
        )


def parse_phantom_config(raw: dict, source="phantom spec") -> tuple[PhantomSpec, NoiseSpec | None]:
    """Build (PhantomSpec, optional NoiseSpec) from an already-parsed JSON object."""
    if not isinstance(raw, dict):
        raise ValidationError(f"{source}: phantom spec must be a JSON object")
    raw = dict(raw)
    noise_raw = raw.pop("noise", None)
    known = set(PhantomSpec.__dataclass_fields__)
    extra = set(raw) - known
    if extra:
        raise ValidationError(f"{source}: unknown phantom spec fields {sorted(extra)}")
    try:
        spec = PhantomSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})
    except TypeError as exc:
        raise ValidationError(f"{source}: bad phantom spec: {exc}") from exc
    noise = None
    if noise_raw is not None:
        if "budgets" not in noise_raw:
            raise ValidationError(f"{source}: noise object needs a 'budgets' map")
        noise = NoiseSpec(
            budgets={int(k): v for k, v in noise_raw["budgets"].items()},
            seed=int(noise_raw.get("seed", 0)),
        )
    return spec, noise


def load_phantom_config(path) -> tuple[PhantomSpec, NoiseSpec | None]:
    """Read a phantom spec JSON, with an optional embedded "noise" object."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return parse_phantom_config(raw, source=str(path))


def generate_phantom(spec: PhantomSpec) -> tuple[LabelVolume, ScalarMap]:
    """Clean nested-shell labels plus a simulated intensity map."""
    nx, ny, nz = spec.dims
    center = ((nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0)
    x, y, z = np.meshgrid(
        np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
    )
    dist = np.sqrt(
        (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    )
    labels = np.zeros((nx, ny, nz), dtype=np.uint16)
    for shell, radius in enumerate(spec.radii, start=1):
        labels[dist <= radius] = shell

    rng = np.random.default_rng(spec.seed)
    means = np.asarray(spec.intensity_means)[labels]
    noise = rng.normal(0.0, spec.intensity_sigma, size=labels.shape) if spec.intensity_sigma else 0.0
    intensity = means + noise

    meta = {"generator": GENERATOR_ID, "seed": spec.seed}
    geometry = spec.geometry
    label_vol = LabelVolume(geometry, labels.ravel(order="F"), spec.num_labels, meta=meta)
    intensity_map = ScalarMap(geometry, np.asarray(intensity, dtype=np.float64).ravel(order="F"), meta=meta)
    return label_vol, intensity_map


def inject_boundary_noise(clean: LabelVolume, noise: NoiseSpec) -> LabelVolume:
    """Flip labels toward the adjacent region inside the allowed boundary band.

    A voxel may flip only when its Euclidean distance to the nearest voxel of a
    different clean label is at most min(budget[own], budget[adjacent]); it
    then takes that nearest differing voxel's label with probability 1/2.  If
    the band is non-empty but the draw flips nothing, the lowest-index band
    voxel flips, so budgets >= 1 always produce noise.
    """
    budgets = noise.as_table().as_array(clean.num_labels)
    grid = clean.grid()
    meta = {"generator": GENERATOR_ID, "seed": noise.seed}
    if np.unique(clean.labels).size < 2:
        # no boundary anywhere; nothing to perturb
        return LabelVolume(clean.geometry, clean.labels.copy(), clean.num_labels, meta=meta)

    # nearest differing voxel (distance + its label), via per-label EDT
    dist_diff = np.full(grid.shape, np.inf)
    adjacent = np.zeros(grid.shape, dtype=np.uint16)
    for label in np.unique(clean.labels):
        region = grid == label
        dist, (ix, iy, iz) = ndimage.distance_transform_edt(
            region, sampling=(1.0, 1.0, 1.0), return_indices=True
        )
        dist_diff[region] = dist[region]
        adjacent[region] = grid[ix[region], iy[region], iz[region]]

    band = dist_diff <= np.minimum(budgets[grid], budgets[adjacent])

    noisy = clean.labels.copy()
    flat_adj = adjacent.ravel(order="F")
    band_idx = np.flatnonzero(band.ravel(order="F"))
    if band_idx.size:
        rng = np.random.default_rng(noise.seed)
        flips = rng.random(band_idx.size) < FLIP_PROBABILITY
        if not flips.any():
            flips[0] = True
        chosen = band_idx[flips]
        noisy[chosen] = flat_adj[chosen]

    return LabelVolume(clean.geometry, noisy, clean.num_labels, meta=meta)
