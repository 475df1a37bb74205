"""Command line entry points.

Subcommands cover the whole workflow: descriptor extraction, training,
forward prediction, leave-one-out evaluation, model-order sweeps, and
synthetic data generation. Every report embeds a manifest line so a result
file records how it was produced. Exit codes: 0 success, 2 usage error,
3 bad input data, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, containers, manifest as mf, pose
from .em import TrainingConfig, sweep_components, train
from .errors import (ContractError, DataError, DegenerateInputError,
                     HgllimError, IllConditionedModelError,
                     TrainingFailedError)
from .model import LatentSpec, OutputLayout, TrainingSet, derive_forward
from .parallel import resolve_workers
from .synthetic import GeneratorSpec, random_model, sample

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DEFAULT_SWEEP = (1, 5, 25, 50, 100)


def _load_targets_csv(path) -> tuple[tuple[str, ...], np.ndarray]:
    """Header names plus a float matrix from a plain targets CSV."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty targets file")
        rows = []
        bad = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [float(cell) for cell in row]
                if len(values) != len(header):
                    raise ValueError
                rows.append(values)
            except ValueError:
                bad.append(line_no)
        if bad:
            raise DataError(f"{path}: malformed rows at lines {bad}")
        if not rows:
            raise DataError(f"{path}: no data rows")
    return tuple(header), np.asarray(rows, dtype=np.float64)


def _write_targets_csv(path, names, values: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in np.atleast_2d(values):
            writer.writerow([repr(float(v)) for v in row])


def _parse_components_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ContractError(f"bad component list {text!r}")
    if not values or any(v < 1 for v in values):
        raise ContractError(f"bad component list {text!r}")
    return values


def _add_threads(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: HGLLIM_THREADS or "
                             "the CPU count)")


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def cmd_extract(args) -> int:
    samples, angle_names = pose.load_csv_dataset(args.dataset)
    extractor = pose.ImageFeatureExtractor(root=args.root)
    workers = resolve_workers(args.threads)
    from .hog import extract_batch
    items = [(extractor._load(s.image), s.box) for s in samples]
    features = extract_batch(items, workers=workers)
    containers.save_features(args.output, features)
    if args.targets is not None:
        _write_targets_csv(args.targets, angle_names,
                           np.vstack([s.angles for s in samples]))
    print(f"wrote {features.shape[0]} descriptors of dimension "
          f"{features.shape[1]} to {args.output}")
    return EXIT_OK


def _layout_for(variant: str, latent_dim: int,
                target_dim: int) -> OutputLayout:
    var = pose.resolve_variant(variant, latent_dim)
    n_angles = target_dim - (2 if var.with_shift else 0)
    if n_angles < 1:
        raise ContractError(
            f"{variant} needs at least {3 if var.with_shift else 1} target "
            f"columns, got {target_dim}")
    return OutputLayout(n_angles=n_angles, has_shift=var.with_shift)


def cmd_train(args) -> int:
    features = containers.load_features(args.features)
    names, targets = _load_targets_csv(args.targets)
    layout = _layout_for(args.variant, args.latent_dim, targets.shape[1])
    data = TrainingSet(features=features, targets=targets)
    cfg = TrainingConfig(n_components=args.components,
                         latent=LatentSpec(targets.shape[1], args.latent_dim),
                         max_iterations=args.max_iterations,
                         tolerance=args.tolerance, seed=args.seed)
    workers = resolve_workers(args.threads)
    started = time.perf_counter()
    result = train(data, cfg, workers=workers)
    seconds = time.perf_counter() - started
    containers.save_model(args.output, result.model, layout)
    record = mf.ExperimentManifest(
        command="train",
        dataset_hash=mf.hash_arrays(features, targets),
        tool_version=__version__, seconds=seconds,
        n_components=result.model.n_components,
        observed_dim=targets.shape[1], latent_dim=args.latent_dim,
        variant=args.variant, seed=args.seed,
        extra={"iterations": len(result.history),
               "converged": result.converged,
               "log_likelihood": result.history[-1].log_likelihood,
               "target_names": list(names)})
    Path(str(args.output) + ".manifest.json").write_text(
        record.to_json() + "\n", encoding="utf-8")
    print(f"trained {result.model.n_components} components in "
          f"{len(result.history)} iterations "
          f"(log-likelihood {result.history[-1].log_likelihood:.6g}); "
          f"model written to {args.output}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, layout = containers.load_model(args.model)
    features = containers.load_features(args.features)
    if features.shape[1] != model.maps.shape[1]:
        raise DataError(
            f"feature dimension {features.shape[1]} does not match the "
            f"model's {model.maps.shape[1]}")
    fwd = derive_forward(model)
    from .model import predict_mean
    predictions = np.vstack([predict_mean(fwd, row) for row in features])
    names = [f"angle_{i}" for i in range(layout.n_angles)]
    if layout.has_shift:
        names += ["shift_x", "shift_y"]
    names += [f"latent_{j}" for j in range(model.latent.latent_dim)]
    record = mf.ExperimentManifest(
        command="predict", dataset_hash=mf.hash_arrays(features),
        tool_version=__version__,
        n_components=model.n_components,
        observed_dim=model.latent.observed_dim,
        latent_dim=model.latent.latent_dim)
    mf.write_report_csv(args.output, names,
                        [[float(v) for v in row] for row in predictions],
                        record)
    print(f"wrote {predictions.shape[0]} predictions to {args.output}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    samples, angle_names = pose.load_csv_dataset(args.dataset)
    extractor = pose.ImageFeatureExtractor(root=args.root)
    workers = resolve_workers(args.threads)
    started = time.perf_counter()
    report = pose.evaluate_loo(
        samples, extractor, n_components=args.components,
        latent_dim=args.latent_dim, variant=args.variant,
        sigma_frac=args.sigma_frac, epsilon=args.epsilon,
        max_iters=args.box_iterations, seed=args.seed,
        max_iterations=args.max_iterations, workers=workers,
        angle_names=angle_names)
    seconds = time.perf_counter() - started
    record = mf.ExperimentManifest(
        command="evaluate",
        dataset_hash=mf.hash_files(args.dataset),
        tool_version=__version__, seconds=seconds,
        n_components=args.components, latent_dim=args.latent_dim,
        variant=args.variant, sigma_frac=args.sigma_frac,
        epsilon=args.epsilon, seed=args.seed,
        extra={"n_samples": report.n_samples, "n_folds": report.n_folds})
    mf.write_report_csv(args.output,
                        ["variant", "angle", "mae", "std", "rmse", "n"],
                        report.rows(), record)
    for row in report.rows():
        print(f"{row[0]} {row[1]}: mae {row[2]:.3f} std {row[3]:.3f} "
              f"rmse {row[4]:.3f} (n={row[5]})")
    return EXIT_OK


def cmd_bic_sweep(args) -> int:
    features = containers.load_features(args.features)
    names, targets = _load_targets_csv(args.targets)
    data = TrainingSet(features=features, targets=targets)
    base = TrainingConfig(n_components=1,
                          latent=LatentSpec(targets.shape[1],
                                            args.latent_dim),
                          max_iterations=args.max_iterations,
                          tolerance=args.tolerance, seed=args.seed)
    workers = resolve_workers(args.threads)
    components = _parse_components_list(args.components)
    records = sweep_components(data, base, components, workers=workers)
    rows = []
    best = None
    for rec in records:
        if rec.error is None:
            rows.append([rec.n_components, rec.bic.score,
                         rec.bic.normalized, rec.seconds, ""])
            if best is None or rec.bic.score < best[1]:
                best = (rec.n_components, rec.bic.score)
        else:
            rows.append([rec.n_components, "", "", rec.seconds, rec.error])
    record = mf.ExperimentManifest(
        command="bic-sweep", dataset_hash=mf.hash_arrays(features, targets),
        tool_version=__version__, latent_dim=args.latent_dim,
        seed=args.seed, extra={"components": components})
    mf.write_report_csv(args.output,
                        ["components", "bic", "bic_normalized", "seconds",
                         "error"], rows, record)
    for row in rows:
        label = (f"bic {row[1]:.3f}" if row[4] == "" else f"failed: {row[4]}")
        print(f"K={row[0]}: {label}")
    if best is not None:
        print(f"best: K={best[0]}")
    return EXIT_OK


def cmd_synth(args) -> int:
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = random_model(args.components, args.obs_dim, args.target_dim,
                         args.latent_dim, seed=args.seed,
                         noise_scale=args.noise_scale)
    draw = sample(GeneratorSpec(model=model, n_samples=args.samples,
                                seed=args.seed))
    layout = OutputLayout(n_angles=args.target_dim, has_shift=False)
    containers.save_model(out_dir / "model.hglm", model, layout)
    containers.save_features(out_dir / "features.hgfx", draw.training.features)
    target_names = [f"t_{i}" for i in range(args.target_dim)]
    _write_targets_csv(out_dir / "targets.csv", target_names,
                       draw.training.targets)
    truth_names = ["component"] + [f"w_{j}" for j in range(args.latent_dim)]
    truth = np.column_stack([draw.components.astype(np.float64),
                             draw.latents]) \
        if args.latent_dim else draw.components[:, None].astype(np.float64)
    _write_targets_csv(out_dir / "truth.csv", truth_names, truth)
    record = mf.ExperimentManifest(
        command="synth",
        dataset_hash=mf.hash_arrays(draw.training.features,
                                    draw.training.targets),
        tool_version=__version__, n_components=args.components,
        observed_dim=args.target_dim, latent_dim=args.latent_dim,
        seed=args.seed, extra={"n_samples": args.samples,
                               "feature_dim": args.obs_dim,
                               "noise_scale": args.noise_scale})
    (out_dir / "manifest.json").write_text(record.to_json() + "\n",
                                           encoding="utf-8")
    print(f"wrote {args.samples} synthetic samples to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hgllim",
        description="Mixture-of-affine-regressions pose estimation tools")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="compute descriptors for a dataset")
    p.add_argument("--dataset", required=True, help="annotation CSV")
    p.add_argument("--root", default=None, help="image directory")
    p.add_argument("--output", required=True, help="descriptor container")
    p.add_argument("--targets", default=None,
                   help="also write the angle targets to this CSV")
    _add_threads(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="fit a model to descriptors and targets")
    p.add_argument("--features", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--output", required=True, help="model container")
    p.add_argument("--components", type=int, required=True)
    p.add_argument("--latent-dim", type=int, default=0)
    p.add_argument("--variant", default="gllim_pose",
                   choices=sorted(pose.VARIANTS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=200)
    p.add_argument("--tolerance", type=float, default=1e-6)
    _add_threads(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="posterior-mean prediction")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--output", required=True, help="prediction CSV")
    _add_threads(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="leave-one-person-out evaluation")
    p.add_argument("--dataset", required=True, help="annotation CSV")
    p.add_argument("--root", default=None, help="image directory")
    p.add_argument("--output", required=True, help="report CSV")
    p.add_argument("--variant", default="hgllim_pose_bb",
                   choices=sorted(pose.VARIANTS))
    p.add_argument("--components", type=int, required=True)
    p.add_argument("--latent-dim", type=int, default=0)
    p.add_argument("--sigma-frac", type=float, default=pose.DEFAULT_SIGMA_FRAC)
    p.add_argument("--epsilon", type=float, default=pose.DEFAULT_EPSILON)
    p.add_argument("--box-iterations", type=int,
                   default=pose.DEFAULT_MAX_ITERS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=100)
    _add_threads(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bic-sweep", help="model-order selection sweep")
    p.add_argument("--features", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--output", required=True, help="sweep CSV")
    p.add_argument("--components",
                   default=",".join(str(k) for k in DEFAULT_SWEEP),
                   help="comma-separated component counts")
    p.add_argument("--latent-dim", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-6)
    _add_threads(p)
    p.set_defaults(func=cmd_bic_sweep)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--components", type=int, required=True)
    p.add_argument("--obs-dim", type=int, required=True,
                   help="feature dimension")
    p.add_argument("--target-dim", type=int, required=True)
    p.add_argument("--latent-dim", type=int, default=0)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-scale", type=float, default=0.1)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"hgllim: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, PermissionError) as exc:
        print(f"hgllim: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (IllConditionedModelError, DegenerateInputError,
            TrainingFailedError, HgllimError) as exc:
        print(f"hgllim: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
