"""Command-line interface: every pipeline stage as a subcommand.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 numerical failure.
Failures print a single machine-parsable JSON line on stderr with the stage
name.  All numeric parameters default to the published values (lambda = 1,
alpha = 0.1, R from the uncertainty table) and every run of the ``pipeline``
subcommand writes a manifest with per-stage wall-clock and output checksums.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError, ValidationError
from .loss import corrected_loss, corrected_loss_grad
from .metrics import directed_surface_stats, evaluate
from .phantom import (
    NoiseSpec,
    generate_phantom,
    inject_boundary_noise,
    load_phantom_config,
    parse_phantom_config,
)
from .smoothing import compute_mask, smooth_labels
from .trainer import TrainConfig, run_noise_demo
from .transition import (
    TRANSITION_CSV_VERSION,
    corrected_inverse,
    estimate_transition,
    load_transition,
    save_transition,
)
from .volume import (
    VOLUME_FORMAT_VERSION,
    LabelVolume,
    ProbVolume,
    ScalarMap,
    ScoreVolume,
    UncertaintyTable,
    read_volume,
    write_volume,
)

VERSION_LINE = (
    f"noisyseg {__version__} "
    f"volume-format={VOLUME_FORMAT_VERSION} transition-csv={TRANSITION_CSV_VERSION}"
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

GRAD_CHECK_TOL = 1e-5


def _write_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _volume_outputs(header_path) -> list[Path]:
    header_path = Path(header_path)
    return [header_path, header_path.with_suffix(".raw")]


def _expect(vol, cls, flag):
    if not isinstance(vol, cls):
        raise ValidationError(f"{flag}: expected a {cls.__name__}, got {type(vol).__name__}")
    return vol


# ---------------------------------------------------------------- subcommands

def cmd_phantom(args) -> dict:
    spec, noise = load_phantom_config(args.spec)
    if noise is None:
        raise ValidationError(
            f"{args.spec}: phantom spec must embed a 'noise' object "
            "(budgets drive both the injected noise and the implied uncertainty table)"
        )
    clean, intensity = generate_phantom(spec)
    noisy = inject_boundary_noise(clean, noise)
    prefix = Path(args.out_prefix)
    outputs = []
    for name, vol in (("clean", clean), ("noisy", noisy), ("intensity", intensity)):
        path = prefix.parent / f"{prefix.name}_{name}.json"
        write_volume(vol, path)
        outputs += _volume_outputs(path)
    table_path = prefix.parent / f"{prefix.name}_uncertainty.json"
    table_path.parent.mkdir(parents=True, exist_ok=True)
    noise.as_table().to_json(table_path)
    outputs.append(table_path)
    return {"outputs": outputs}


def cmd_smooth(args) -> dict:
    labels = _expect(read_volume(args.labels), LabelVolume, "--labels")
    table = UncertaintyTable.from_json(args.uncertainty)
    out = smooth_labels(labels, table, tau_override=args.tau_override, threads=args.threads)
    write_volume(out.smoothed, args.out_probs)
    write_volume(out.mask, args.out_mask)
    outputs = _volume_outputs(args.out_probs) + _volume_outputs(args.out_mask)
    if args.out_umap:
        write_volume(out.uncertainty_map, args.out_umap)
        outputs += _volume_outputs(args.out_umap)
    return {"outputs": outputs}


def cmd_mask(args) -> dict:
    labels = _expect(read_volume(args.labels), LabelVolume, "--labels")
    probs = _expect(read_volume(args.probs), ProbVolume, "--probs")
    write_volume(compute_mask(labels, probs), args.out)
    return {"outputs": _volume_outputs(args.out)}


def cmd_estimate_t(args) -> dict:
    with open(args.pairs, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if "pairs" not in manifest or not manifest["pairs"]:
        raise ValidationError(f"{args.pairs}: manifest needs a non-empty 'pairs' list")
    base = Path(args.pairs).parent
    triples = []
    for entry in manifest["pairs"]:
        labels = _expect(read_volume(base / entry["labels"]), LabelVolume, "pairs.labels")
        probs = _expect(read_volume(base / entry["probs"]), ProbVolume, "pairs.probs")
        mask = _expect(read_volume(base / entry["mask"]), ScalarMap, "pairs.mask")
        triples.append((labels, probs, mask))
    tm = estimate_transition(triples, lam=args.lam)
    save_transition(tm, args.out)
    return {"outputs": [Path(args.out)]}


def cmd_loss(args) -> dict:
    scores = _expect(read_volume(args.scores), ScoreVolume, "--scores")
    targets = _expect(read_volume(args.targets), ProbVolume, "--targets")
    mask = _expect(read_volume(args.mask), ScalarMap, "--mask")
    tm = load_transition(args.transition)
    lam = tm.lam if args.lam is None else args.lam
    c = corrected_inverse(tm.t, lam, transpose=not args.no_transpose)
    report = corrected_loss(scores, targets, mask, c, reduction=args.reduction)
    payload = report.to_dict() | {"reduction": args.reduction, "lambda": lam}
    print(json.dumps(payload, sort_keys=True))
    outputs = []
    if args.out:
        _write_json(payload, args.out)
        outputs.append(Path(args.out))
    return {"outputs": outputs}


def cmd_grad_check(args) -> dict:
    worst = _grad_check_suite(seed=args.seed, trials=args.trials)
    payload = {"max_relative_error": worst, "tolerance": GRAD_CHECK_TOL}
    print(json.dumps(payload, sort_keys=True))
    if worst > GRAD_CHECK_TOL:
        raise NumericalError(
            f"gradient check failed: max relative error {worst:.3g} > {GRAD_CHECK_TOL}"
        )
    return {"outputs": []}


def cmd_metrics(args) -> dict:
    pred = _expect(read_volume(args.pred), LabelVolume, "--pred")
    ref = _expect(read_volume(args.ref), LabelVolume, "--ref")
    labels = None
    if args.labels != "all":
        try:
            labels = [int(v) for v in args.labels.split(",") if v.strip() != ""]
        except ValueError as exc:
            raise ValidationError(f"--labels: expected 'all' or a csv list: {exc}") from exc
    report = evaluate(pred, ref, labels=labels)
    payload = report.to_dict()
    if args.directed:
        directed = {}
        for label, entry in report.per_label.items():
            if entry["present_in_pred"] and entry["present_in_ref"]:
                directed[str(label)] = directed_surface_stats(pred, ref, label)
        payload["directed"] = directed
    _write_json(payload, args.out)
    return {"outputs": [Path(args.out)]}


def cmd_train_demo(args) -> dict:
    spec, embedded_noise = load_phantom_config(args.phantom_spec)
    noise = NoiseSpec.from_json(args.noise) if args.noise else embedded_noise
    if noise is None:
        raise ValidationError("no noise spec: pass --noise or embed one in the phantom spec")
    modes = ("corrected", "plain") if args.mode == "both" else (args.mode,)
    config = TrainConfig(
        step=args.step, iterations=args.iterations, reduction=args.reduction, lam=args.lam
    )
    results, first_preds = run_noise_demo(
        spec, noise, config, num_seeds=args.seeds, modes=modes,
        tau_override=args.tau_override, threads=args.threads,
    )
    results["parameters"] = {
        "step": args.step, "iterations": args.iterations, "reduction": args.reduction,
        "lambda": args.lam, "seeds": args.seeds, "mode": args.mode,
    }
    _write_json(results, args.out)
    outputs = [Path(args.out)]
    if args.out_pred:
        mode = "corrected" if "corrected" in first_preds else modes[0]
        write_volume(first_preds[mode], args.out_pred)
        outputs += _volume_outputs(args.out_pred)
    return {"outputs": outputs}


def cmd_pipeline(args) -> dict:
    with open(args.spec, "r", encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValidationError(f"{args.spec}: pipeline spec must be a JSON object")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_cfg = config.pop("train", {})
    lam = float(config.pop("lambda", 1.0))
    tau_override = config.pop("tau_override", None)
    spec, noise = parse_phantom_config(config, source=str(args.spec))
    if noise is None:
        raise ValidationError(f"{args.spec}: pipeline spec must embed a 'noise' object")

    stages = []
    manifest_params = {
        "lambda": lam,
        "tau_override": tau_override,
        "alpha_standard_smoothing": 0.1,
        "seeds": train_cfg.get("seeds", 5),
        "threads": args.threads or 0,
        "spec": str(args.spec),
    }

    def record(name, t0, outputs):
        stages.append({
            "name": name,
            "seconds": round(time.perf_counter() - t0, 6),
            "outputs": [
                {"path": str(Path(p).relative_to(out_dir)), "sha256": _sha256(p)}
                for p in outputs
            ],
        })

    # stage 1: phantom
    t0 = time.perf_counter()
    clean, intensity = generate_phantom(spec)
    noisy = inject_boundary_noise(clean, noise)
    paths = {
        "clean": out_dir / "phantom_clean.json",
        "noisy": out_dir / "phantom_noisy.json",
        "intensity": out_dir / "phantom_intensity.json",
    }
    write_volume(clean, paths["clean"])
    write_volume(noisy, paths["noisy"])
    write_volume(intensity, paths["intensity"])
    table_path = out_dir / "uncertainty.json"
    noise.as_table().to_json(table_path)
    record("phantom", t0, sum((_volume_outputs(p) for p in paths.values()), [table_path]))

    # stage 2: smooth the noisy labels
    t0 = time.perf_counter()
    smoothed = smooth_labels(noisy, noise.as_table(), tau_override=tau_override,
                             threads=args.threads)
    probs_path = out_dir / "smoothed_probs.json"
    mask_path = out_dir / "smoothed_mask.json"
    write_volume(smoothed.smoothed, probs_path)
    write_volume(smoothed.mask, mask_path)
    record("smooth", t0, _volume_outputs(probs_path) + _volume_outputs(mask_path))

    # stage 3: transition matrix
    t0 = time.perf_counter()
    tm = estimate_transition([(noisy, smoothed.smoothed, smoothed.mask)], lam=lam)
    t_path = out_dir / "transition.csv"
    save_transition(tm, t_path)
    record("estimate-T", t0, [t_path])

    # stage 4: corrected-vs-plain training demo
    t0 = time.perf_counter()
    config_obj = TrainConfig(
        step=float(train_cfg.get("step", 32.0)),
        iterations=int(train_cfg.get("iterations", 800)),
        reduction=train_cfg.get("reduction", "mean"),
        lam=lam,
    )
    results, first_preds = run_noise_demo(
        spec, noise, config_obj, num_seeds=int(train_cfg.get("seeds", 5)),
        tau_override=tau_override, threads=args.threads,
    )
    results_path = out_dir / "train_results.json"
    _write_json(results, results_path)
    pred_path = out_dir / "pred_corrected.json"
    write_volume(first_preds["corrected"], pred_path)
    record("train-demo", t0, [results_path] + _volume_outputs(pred_path))

    # stage 5: metrics of the corrected model against the clean phantom
    t0 = time.perf_counter()
    report = evaluate(first_preds["corrected"], clean)
    metrics_path = out_dir / "metrics.json"
    _write_json(report.to_dict(), metrics_path)
    record("metrics", t0, [metrics_path])

    manifest = {
        "tool": "noisyseg",
        "version": __version__,
        "format_versions": {
            "volume": VOLUME_FORMAT_VERSION,
            "transition_csv": TRANSITION_CSV_VERSION,
        },
        "parameters": manifest_params,
        "stages": stages,
    }
    manifest_path = out_dir / "manifest.json"
    _write_json(manifest, manifest_path)
    print(json.dumps({"manifest": str(manifest_path)}))
    return {"outputs": [manifest_path]}


def _grad_check_suite(seed: int, trials: int) -> float:
    """Analytic gradient vs central differences over every score coordinate."""
    from .volume import GridGeometry

    rng = np.random.default_rng(seed)
    geometry = GridGeometry((3, 3, 3))
    n = geometry.num_voxels
    h = 1e-4
    worst = 0.0
    for _ in range(trials):
        for num_labels in (2, 4, 8):
            cols = rng.dirichlet(np.ones(num_labels), size=num_labels).T
            c = corrected_inverse(cols, 1.0)
            targets = ProbVolume(geometry, rng.dirichlet(np.ones(num_labels), size=n), num_labels)
            mask = ScalarMap(geometry, (rng.random(n) < 0.5).astype(np.float64))
            scores_arr = rng.normal(0.0, 2.0, size=(n, num_labels))
            scores = ScoreVolume(geometry, scores_arr, num_labels)
            analytic = corrected_loss_grad(scores, targets, mask, c)

            fd = np.zeros_like(scores_arr)
            for i in range(n):
                for l in range(num_labels):
                    bumped = scores_arr.copy()
                    bumped[i, l] += h
                    hi = corrected_loss(ScoreVolume(geometry, bumped, num_labels),
                                        targets, mask, c).total
                    bumped[i, l] -= 2 * h
                    lo = corrected_loss(ScoreVolume(geometry, bumped, num_labels),
                                        targets, mask, c).total
                    fd[i, l] = (hi - lo) / (2 * h)
            denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(fd)))
            worst = max(worst, float((np.abs(analytic - fd) / denom).max()))
    return worst


# ------------------------------------------------------------------- plumbing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisyseg",
        description="Noisy-annotation pipeline for multi-label 3D segmentation",
    )
    parser.add_argument("--version", action="version", version=VERSION_LINE)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=0,
                        help="worker threads for volume kernels (0 = auto)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common],
                       help="generate a nested-shell phantom (clean/noisy/intensity)")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("smooth", parents=[common],
                       help="spatially-varying label smoothing")
    p.add_argument("--labels", required=True)
    p.add_argument("--uncertainty", required=True)
    p.add_argument("--out-probs", required=True)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out-umap")
    p.add_argument("--tau-override", type=float, default=None)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("mask", parents=[common],
                       help="mask of voxels altered by smoothing")
    p.add_argument("--labels", required=True)
    p.add_argument("--probs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("estimate-T", parents=[common],
                       help="estimate the label transition matrix")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.set_defaults(func=cmd_estimate_t)

    p = sub.add_parser("loss", parents=[common],
                       help="evaluate the corrected loss on stored volumes")
    p.add_argument("--scores", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--transition", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--reduction", choices=("sum", "mean"), default="sum")
    p.add_argument("--no-transpose", action="store_true",
                   help="use (T + lambda I)^-1 instead of (T^T + lambda I)^-1")
    p.add_argument("--out")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("grad-check", parents=[common],
                       help="finite-difference check of the loss gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=2)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("metrics", parents=[common],
                       help="per-label DSC/HD95/ASSD report")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--labels", default="all")
    p.add_argument("--directed", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("train-demo", parents=[common],
                       help="corrected-vs-plain training comparison on phantoms")
    p.add_argument("--phantom-spec", required=True)
    p.add_argument("--noise")
    p.add_argument("--mode", choices=("corrected", "plain", "both"), default="both")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--iterations", type=int, default=800)
    p.add_argument("--step", type=float, default=32.0)
    p.add_argument("--reduction", choices=("sum", "mean"), default="mean")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--tau-override", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--out-pred")
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("pipeline", parents=[common],
                       help="phantom -> smooth -> estimate-T -> train-demo -> metrics")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except NumericalError as exc:
        _print_error(args.command, exc)
        return EXIT_NUMERICAL
    except (ValidationError, OSError, json.JSONDecodeError, KeyError) as exc:
        _print_error(args.command, exc)
        return EXIT_VALIDATION
    return EXIT_OK


def _print_error(stage, exc) -> None:
    line = json.dumps(
        {"error": str(exc), "stage": stage, "type": type(exc).__name__}, sort_keys=True
    )
    print(line, file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
