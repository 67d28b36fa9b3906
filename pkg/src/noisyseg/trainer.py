"""Desk-scale check that the corrected loss tracks the clean-label minimizer.

A per-voxel linear softmax classifier on five simple features (intensity,
normalized x/y/z, radius from center) stands in for the segmentation model;
the point under test is the loss, not the architecture.  Training is
deterministic full-batch gradient descent with backtracking step halving.

The demo pipeline mirrors the real one: smooth the noisy labels, estimate the
transition matrix from the smoothed volumes, then train with the corrected
loss, and compare against plain cross-entropy on the same noisy targets and
against a reference model trained on the clean labels.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError, ValidationError
from .loss import LOG_FLOOR, _combined_coefficients, _softmax_rows
from .volume import GridGeometry, LabelVolume, ProbVolume, ScalarMap

MAX_HALVINGS = 40


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray  # F x L
    bias: np.ndarray     # L

    def __post_init__(self):
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if weights.ndim != 2 or bias.ndim != 1 or weights.shape[1] != bias.size:
            raise ValidationError("weights must be F x L with a length-L bias")
        if not (np.isfinite(weights).all() and np.isfinite(bias).all()):
            raise ValidationError("model parameters must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)

    def params_vector(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])


@dataclass(frozen=True)
class TrainConfig:
    step: float = 1.0
    iterations: int = 200
    mode: str = "corrected"  # or "plain"
    reduction: str = "mean"
    lam: float = 1.0
    seed: int = 0
    gaussian_init: bool = False

    def __post_init__(self):
        if self.step <= 0:
            raise ValidationError("step size must be > 0")
        if self.iterations < 0:
            raise ValidationError("iteration budget must be >= 0")
        if self.mode not in ("plain", "corrected"):
            raise ValidationError(f"unknown training mode {self.mode!r}")


def featurize(intensity: ScalarMap, geometry: GridGeometry | None = None) -> np.ndarray:
    """N x 5 feature rows: intensity, x/y/z scaled to [-1, 1], radius from center."""
    geometry = intensity.geometry if geometry is None else geometry
    if geometry != intensity.geometry:
        raise ValidationError("intensity map does not match the requested geometry")
    nx, ny, nz = geometry.dims

    def axis_coord(n):
        return np.zeros(n) if n == 1 else 2.0 * np.arange(n) / (n - 1) - 1.0

    x, y, z = np.meshgrid(axis_coord(nx), axis_coord(ny), axis_coord(nz), indexing="ij")
    radius = np.sqrt(x * x + y * y + z * z)
    cols = [intensity.values]
    cols += [a.ravel(order="F") for a in (x, y, z, radius)]
    return np.stack(cols, axis=1)


def predict(model: LinearModel, features: np.ndarray, geometry: GridGeometry) -> ProbVolume:
    """Softmax of the affine map over the feature rows."""
    scores = features @ model.weights + model.bias
    probs = _softmax_rows(scores)
    return ProbVolume(geometry, probs, model.bias.size)


def train(
    features: np.ndarray,
    targets: ProbVolume,
    mask: ScalarMap,
    c: np.ndarray,
    config: TrainConfig,
) -> LinearModel:
    """Full-batch gradient descent on the corrected (or plain) loss.

    Plain mode replaces the correction matrix with the identity, which makes
    the loss the ordinary soft cross-entropy over every voxel.  Each iteration
    backtracks (halves the step) until the loss decreases; if no decrease is
    found the run stops early.  Divergence raises :class:`NumericalError`.
    """
    features = np.ascontiguousarray(features, dtype=np.float64)
    n, num_feat = features.shape
    if n != targets.geometry.num_voxels:
        raise ValidationError("feature rows do not match the target volume")
    if targets.geometry != mask.geometry:
        raise ValidationError("targets and mask must share geometry")
    if not mask.is_binary():
        raise ValidationError("mask must be binary")
    num_labels = targets.num_labels
    if config.mode == "plain":
        c = np.eye(num_labels)

    # the per-voxel class coefficients of the corrected loss never change
    # during training, so hoist them out of the iteration loop
    coeff = _combined_coefficients(targets, mask, np.asarray(c, dtype=np.float64))
    coeff_mass = coeff.sum(axis=1, keepdims=True)
    scale = 1.0 / n if config.reduction == "mean" else 1.0

    def loss_value(scores):
        p = _softmax_rows(scores)
        total = float((coeff * -np.log(np.maximum(p, LOG_FLOOR))).sum() * scale)
        if not np.isfinite(total):
            raise NumericalError(
                f"training loss diverged (total={total!r}) in mode {config.mode}"
            )
        return total, p

    if config.gaussian_init:
        rng = np.random.default_rng(config.seed)
        weights = rng.normal(0.0, 0.01, size=(num_feat, num_labels))
        bias = rng.normal(0.0, 0.01, size=num_labels)
    else:
        weights = np.zeros((num_feat, num_labels))
        bias = np.zeros(num_labels)

    current, p = loss_value(features @ weights + bias)
    for _ in range(config.iterations):
        grad_scores = (coeff_mass * p - coeff) * scale
        grad_w = features.T @ grad_scores
        grad_b = grad_scores.sum(axis=0)

        step = config.step
        accepted = False
        for _ in range(MAX_HALVINGS):
            trial_w = weights - step * grad_w
            trial_b = bias - step * grad_b
            trial_loss, trial_p = loss_value(features @ trial_w + trial_b)
            if trial_loss < current:
                weights, bias = trial_w, trial_b
                current, p = trial_loss, trial_p
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return LinearModel(weights, bias)


def one_hot_targets(labels: LabelVolume) -> ProbVolume:
    probs = np.eye(labels.num_labels)[labels.labels]
    return ProbVolume(labels.geometry, probs, labels.num_labels)


def run_noise_demo(
    phantom_spec,
    noise_spec,
    config: TrainConfig = TrainConfig(),
    num_seeds: int = 5,
    modes: tuple[str, ...] = ("corrected", "plain"),
    tau_override: float | None = None,
    threads: int | None = None,
) -> tuple[dict, dict]:
    """Train corrected vs plain models on noisy phantoms across seeds.

    Every seed regenerates the phantom and the injected noise, smooths the
    noisy labels, estimates the transition matrix from them, and trains one
    model per requested mode plus a clean-label reference.  Returns a results
    dict (per-seed metrics and mean gaps) and the first seed's predicted label
    volumes keyed by mode.
    """
    from .metrics import evaluate
    from .phantom import NoiseSpec, generate_phantom, inject_boundary_noise
    from .smoothing import smooth_labels
    from .transition import estimate_transition

    if num_seeds < 1:
        raise ValidationError("need at least one seed")
    per_seed = []
    first_preds: dict[str, LabelVolume] = {}
    for k in range(num_seeds):
        spec_k = replace(phantom_spec, seed=phantom_spec.seed + k)
        noise_k = NoiseSpec(budgets=dict(noise_spec.budgets), seed=noise_spec.seed + k)
        clean, intensity = generate_phantom(spec_k)
        noisy = inject_boundary_noise(clean, noise_k)
        smoothed = smooth_labels(noisy, noise_k.as_table(), tau_override=tau_override,
                                 threads=threads)
        tm = estimate_transition([(noisy, smoothed.smoothed, smoothed.mask)], lam=config.lam)

        features = featurize(intensity)
        geometry = clean.geometry
        zero_mask = ScalarMap(geometry, np.zeros(geometry.num_voxels))
        identity = np.eye(clean.num_labels)

        clean_model = train(features, one_hot_targets(clean), zero_mask, identity,
                            replace(config, mode="plain"))
        clean_params = clean_model.params_vector()

        entry = {"seed": k, "phantom_seed": spec_k.seed, "noise_seed": noise_k.seed}
        for mode in modes:
            c = tm.corrected if mode == "corrected" else identity
            model = train(features, smoothed.smoothed, smoothed.mask, c,
                          replace(config, mode=mode))
            pred = predict(model, features, geometry).argmax_labels()
            report = evaluate(pred, clean)
            entry[mode] = {
                "dsc_mean_vs_clean": report.aggregate["dsc"]["mean"],
                "param_distance_to_clean": float(
                    np.linalg.norm(model.params_vector() - clean_params)
                ),
            }
            if k == 0:
                first_preds[mode] = pred
        per_seed.append(entry)

    results = {"num_seeds": num_seeds, "modes": list(modes), "per_seed": per_seed}
    summary = {}
    for mode in modes:
        summary[mode] = {
            "mean_dsc_vs_clean": float(np.mean([e[mode]["dsc_mean_vs_clean"] for e in per_seed])),
            "mean_param_distance": float(
                np.mean([e[mode]["param_distance_to_clean"] for e in per_seed])
            ),
        }
    if "corrected" in summary and "plain" in summary:
        summary["gap"] = {
            "dsc_corrected_minus_plain": summary["corrected"]["mean_dsc_vs_clean"]
            - summary["plain"]["mean_dsc_vs_clean"],
            "param_distance_plain_minus_corrected": summary["plain"]["mean_param_distance"]
            - summary["corrected"]["mean_param_distance"],
        }
    results["summary"] = summary
    return results, first_preds
