"""Command-line front end: detect, tune, train, eval, bench, synth, fit-curve and serve."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections.abc import Callable, Sequence
from dataclasses import replace
from pathlib import Path

import numpy as np
from tqdm import tqdm

from lidar_proposals import __version__
from lidar_proposals.bench import benchmark, classifier_timing, write_timing_csv
from lidar_proposals.bev import render_bev
from lidar_proposals.classify import (
    ClassifierModel,
    TrainingConfig,
    load_model,
    load_samples,
    predict,
    save_model,
    save_samples,
    train,
)
from lidar_proposals.cluster import write_cluster_csv
from lidar_proposals.config import PipelineParams, load_params, save_params
from lidar_proposals.errors import ConfigError, ProposalError
from lidar_proposals.evaluation import (
    classification_metrics,
    recall_table,
    training_sweep,
    write_curves_csv,
    write_recall_csv,
    write_sweep_csv,
)
from lidar_proposals.filtering import write_proposals_csv
from lidar_proposals.ground import mean_gamma_sweep, write_gamma_csv
from lidar_proposals.ingest import (
    KittiFrame,
    discover_frames,
    load_velodyne,
    recover_rings,
    save_calibration,
    save_labels,
    save_velodyne,
)
from lidar_proposals.manifest import default_output_dir, write_manifest
from lidar_proposals.pipeline import (
    Frame,
    detect_frame,
    extract_training_samples,
    fit_curve,
    load_kitti_frame,
    synthetic_frames,
    warn_if_curve_missing,
    with_fitted_curve,
)
from lidar_proposals.scene import generate_scene, random_scene_spec, save_scene_spec, synthetic_calibration, to_sensor_frame
from lidar_proposals.tune import PsoConfig, pso_optimize, recall_objective, write_history_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FRAME_FAILURE = 1
EXIT_USAGE = 2

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(message)s"
GAMMA_OFFSETS = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)

_handlers: list[logging.Handler] = []


def setup_logging(output_dir: Path | None, verbose: int = 0) -> None:
    """Stream handler plus `run.log` under the output directory."""
    level = logging.DEBUG if verbose > 1 else logging.INFO if verbose == 1 else logging.WARNING
    root = logging.getLogger()
    while _handlers:
        handler = _handlers.pop()
        root.removeHandler(handler)
        handler.close()
    root.setLevel(logging.DEBUG)
    stream = logging.StreamHandler()
    stream.setLevel(level)
    _handlers.append(stream)
    if output_dir is not None:
        output_dir.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(output_dir / "run.log", encoding="utf-8")
        file_handler.setLevel(logging.DEBUG if verbose > 1 else logging.INFO)
        _handlers.append(file_handler)
    for handler in _handlers:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)


class FrameSource:
    """Frames from a KITTI split directory or freshly generated synthetic scenes."""

    def __init__(self, args: argparse.Namespace, params: PipelineParams) -> None:
        self.args = args
        self.params = params
        self.failures = 0
        self.paths: list[Path] = []

    def load(self) -> list[Frame]:
        args = self.args
        if args.data:
            kitti = discover_frames(args.data)[: args.limit or None]
            self.paths = [f.velodyne for f in kitti]
            frames = []
            for item in tqdm(kitti, desc="load", disable=args.verbose < 1):
                frame = self._load_one(item)
                if frame is not None:
                    frames.append(frame)
            return frames
        count = args.synthetic or 0
        if count < 1:
            raise ConfigError("give --data DIR or --synthetic N")
        specs = [random_scene_spec(args.seed + i) for i in range(count)]
        return synthetic_frames(specs, seed=args.seed)

    def _load_one(self, item: KittiFrame) -> Frame | None:
        try:
            return load_kitti_frame(item, self.params.n_rings)
        except (ProposalError, OSError) as exc:
            logger.warning("skipping %s: %s", item.velodyne.name, exc)
            self.failures += 1
            return None


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="YAML file of dotted-key parameters")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override one parameter")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None, help="pipeline thread count (default from config)")
    parser.add_argument("--output", type=Path, help="output directory (default: per-run directory in the user cache)")
    parser.add_argument("-v", "--verbose", action="count", default=0)


def _add_dataset(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--data", type=Path, help="KITTI object split directory (containing velodyne/)")
    source.add_argument("--synthetic", type=int, metavar="N", help="use N generated synthetic frames")
    parser.add_argument("--limit", type=int, default=0, help="use at most this many KITTI frames")


def _params(args: argparse.Namespace) -> PipelineParams:
    params = load_params(args.config, args.overrides)
    if args.threads is not None:
        params = replace(params, threads=args.threads)
    if getattr(args, "model", None):
        params = replace(params, model_path=str(args.model))
    return params


def _model(params: PipelineParams, required: bool) -> ClassifierModel | None:
    path = params.resolved_model_path()
    if path.is_file():
        return load_model(path)
    if required:
        raise FileNotFoundError(f"classifier model {path} not found (train one, pass --model, or use --no-classify)")
    return None


def cmd_detect(args: argparse.Namespace, params: PipelineParams, output: Path) -> int:
    if args.no_classify:
        params = replace(params, classify=False)
    model = _model(params, required=params.classify)
    inputs: list[Path] = []
    for item in args.inputs:
        inputs.extend(sorted(item.glob("*.bin")) if item.is_dir() else [item])
    write_manifest(output, "detect", params, args.seed, inputs)
    warn_if_curve_missing(params)

    failures = 0
    summary = []
    for path in tqdm(inputs, desc="detect", disable=args.verbose < 1):
        try:
            cloud = load_velodyne(path)
            if len(cloud) and params.clustering == "scan":
                cloud = recover_rings(cloud, params.n_rings)
            detections, result = detect_frame(cloud, params, model, seed=args.seed)
        except (ProposalError, OSError) as exc:
            logger.warning("failed on %s: %s", path.name, exc)
            failures += 1
            continue
        with (output / f"{path.stem}_detections.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "class", "probability", "x_min", "y_min", "z_min", "x_max", "y_max", "z_max", "points", "occluded"])
            for index, d in enumerate(detections):
                box = d.proposal.box
                probability = f"{d.prediction.probability:.4f}" if d.prediction else ""
                writer.writerow(
                    [index, d.label, probability, *(f"{v:.3f}" for v in (*box.lo, *box.hi)), d.proposal.point_count, int(d.proposal.occluded)]
                )
        if args.stages:
            result.grid.to_csv(output / f"{path.stem}_ground.csv")
            write_cluster_csv(output / f"{path.stem}_clusters.csv", [p.cluster for p in result.proposals])
            write_proposals_csv(output / f"{path.stem}_proposals.csv", result.proposals, result.kept)
        if args.bev:
            region = (params.ground.x_min, params.ground.x_min + params.ground.length, params.ground.y_min, params.ground.y_min + params.ground.width)
            render_bev(output / f"{path.stem}_bev.png", cloud, detections, region)
        t = result.timings
        summary.append([path.stem, len(cloud), len(result.proposals), len(detections), t.ground, t.cluster, t.filter, t.classify])

    with (output / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "points", "proposals", "detections", "ground_s", "cluster_s", "filter_s", "classify_s"])
        writer.writerows(row[:4] + [f"{v:.6f}" for v in row[4:]] for row in summary)
    logger.info("detect: %d frame(s), %d failed", len(summary), failures)
    return EXIT_FRAME_FAILURE if failures else EXIT_OK


def cmd_tune(args: argparse.Namespace, params: PipelineParams, output: Path) -> int:
    source = FrameSource(args, params)
    frames = source.load()
    params = with_fitted_curve(params, frames)
    write_manifest(output, "tune", params, args.seed, source.paths, particles=args.particles, generations=args.generations)
    cfg = PsoConfig(particles=args.particles, generations=args.generations, seed=args.seed, threads=params.threads)
    objective = recall_objective(frames, replace(params, threads=1), args.iou, filtering=not args.no_filter)
    result = pso_optimize(objective, cfg, progress=args.verbose >= 1)
    write_history_csv(output / "history.csv", result.history)
    h_d, v_d, d_o = (float(v) for v in result.best_position)
    save_params(output / "tuned.yaml", params.with_segmentation(h_d=h_d, v_d=v_d, d_o=d_o))
    print(f"best recall {result.best_fitness:.4f} at H_d={h_d:.3f} V_d={v_d:.3f} D_o={d_o:.3f}")
    return EXIT_FRAME_FAILURE if source.failures else EXIT_OK


def cmd_train(args: argparse.Namespace, params: PipelineParams, output: Path) -> int:
    failures = 0
    if args.samples:
        samples = [s for path in args.samples for s in load_samples(path)]
        inputs = list(args.samples)
    else:
        source = FrameSource(args, params)
        frames = source.load()
        params = with_fitted_curve(params, frames)
        failures = source.failures
        inputs = source.paths
        samples = extract_training_samples(frames, replace(params, classify=False), args.label_iou, threads=params.threads)
        save_samples(output / "samples.bin", samples)
    write_manifest(output, "train", params, args.seed, inputs, epochs=args.epochs)

    cfg = TrainingConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        augment=not args.no_augment,
        train_fraction=args.train_fraction,
    )
    if args.sweep_points or args.sweep_fractions:
        rows = training_sweep(samples, params.classifier, cfg, args.sweep_points or (), args.sweep_fractions or ())
        write_sweep_csv(output / "sweep.csv", rows)
        for r in rows:
            print(
                f"{r.parameter}={r.value:g}: best accuracy {r.best_accuracy:.4f}, "
                f"recent {r.recent_accuracy:.4f}, mAP {r.mean_average_precision:.4f}"
            )
        return EXIT_FRAME_FAILURE if failures else EXIT_OK
    model = ClassifierModel.initialize(params.classifier, seed=args.seed)
    history = train(model, samples, cfg, progress=args.verbose >= 1)
    model_path = args.model_out or output / "classifier.model"
    save_model(model_path, model)
    with (output / "training.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "train_accuracy", "validation_accuracy"])
        for e in history.epochs:
            validation = "" if e.validation_accuracy is None else f"{e.validation_accuracy:.4f}"
            writer.writerow([e.epoch, f"{e.loss:.6f}", f"{e.train_accuracy:.4f}", validation])
    print(
        f"trained {history.steps} steps; best accuracy {history.best_accuracy():.4f}, "
        f"last-50 mean {history.recent_mean_accuracy():.4f}; model at {model_path}"
    )
    return EXIT_FRAME_FAILURE if failures else EXIT_OK


def cmd_eval(args: argparse.Namespace, params: PipelineParams, output: Path) -> int:
    failures = 0
    inputs: list[Path] = list(args.samples or [])
    if args.data or args.synthetic:
        source = FrameSource(args, params)
        frames = source.load()
        params = with_fitted_curve(params, frames)
        failures = source.failures
        inputs += source.paths
        write_manifest(output, "eval", params, args.seed, inputs, iou=args.iou)
        rows = recall_table(frames, params, args.iou, threads=params.threads)
        write_recall_csv(output / "recall.csv", rows)
        for name, report in rows:
            print(f"{name:16s} recall {report.recall:.4f}  proposals/frame {report.proposal_count_mean:.1f}")
        gamma = mean_gamma_sweep([f.cloud for f in frames], params.ground, GAMMA_OFFSETS, seed=args.seed, threads=params.threads)
        write_gamma_csv(output / "gamma.csv", gamma)
    else:
        write_manifest(output, "eval", params, args.seed, inputs, iou=args.iou)
    if args.samples:
        model = _model(params, required=True)
        samples = [s for path in args.samples for s in load_samples(path)]
        predictions = predict(model, [s.points for s in samples], seed=args.seed)
        metrics = classification_metrics(np.array([p.probabilities for p in predictions]), [int(s.label) for s in samples])
        write_curves_csv(output / "curves.csv", metrics)
        print(f"accuracy {metrics.accuracy:.4f}  mAP {metrics.mean_average_precision:.4f}")
    elif not (args.data or args.synthetic):
        raise ConfigError("eval needs --data/--synthetic frames or --samples")
    return EXIT_FRAME_FAILURE if failures else EXIT_OK


def cmd_bench(args: argparse.Namespace, params: PipelineParams, output: Path) -> int:
    source = FrameSource(args, params)
    frames = source.load()
    params = with_fitted_curve(params, frames)
    threads = args.threads or 1
    write_manifest(output, "bench", params, args.seed, source.paths, threads=threads)
    model = _model(params, required=False) if params.classify else None
    reports = []
    for clustering in ("scan", "distance"):
        variant = replace(params, clustering=clustering)
        reports.append((clustering, benchmark(frames, variant, model, warmup=args.warmup, threads=threads)))
    write_timing_csv(output / "timing.csv", reports)
    for name, r in reports:
        print(f"{name:9s} segmentation {r.segmentation:.4f}s  filter {r.filter:.4f}s  classify {r.classify:.4f}s  total {r.total:.4f}s")
    if model is not None:
        with (output / "classifier_timing.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["points_per_proposal", "seconds_per_batch"])
            writer.writerows((n, f"{s:.6f}") for n, s in classifier_timing(model, seed=args.seed))
    return EXIT_FRAME_FAILURE if source.failures else EXIT_OK


def cmd_synth(args: argparse.Namespace, params: PipelineParams, output: Path) -> int:
    write_manifest(output, "synth", params, args.seed, frames=args.frames)
    calibration = synthetic_calibration()
    for index in tqdm(range(args.frames), desc="synth", disable=args.verbose < 1):
        spec = random_scene_spec(args.seed + index, n_objects=args.objects)
        scene = generate_scene(spec, args.seed + index)
        cloud, objects = to_sensor_frame(scene)
        stem = f"{index:06d}"
        save_velodyne(output / "velodyne" / f"{stem}.bin", cloud)
        save_labels(output / "label_2" / f"{stem}.txt", objects)
        save_calibration(output / "calib" / f"{stem}.txt", calibration)
        (output / "scenes").mkdir(parents=True, exist_ok=True)
        save_scene_spec(output / "scenes" / f"{stem}.yaml", spec)
    print(f"wrote {args.frames} frame(s) to {output}")
    return EXIT_OK


def cmd_fit_curve(args: argparse.Namespace, params: PipelineParams, output: Path) -> int:
    source = FrameSource(args, params)
    frames = source.load()
    write_manifest(output, "fit-curve", params, args.seed, source.paths, interval=args.interval)
    curve = fit_curve(frames, params, args.interval)
    curve.save(output / "curve.txt")
    save_params(output / "curve.yaml", replace(params, filter=replace(params.filter, curve=curve)))
    print(f"n_min(d) = {curve.a:.4f} * exp(-{curve.k:.5f} d) from {len(frames)} frame(s)")
    return EXIT_FRAME_FAILURE if source.failures else EXIT_OK


def cmd_serve(args: argparse.Namespace, params: PipelineParams, output: Path) -> int:
    from lidar_proposals.server import mcp

    mcp.run()
    return EXIT_OK


Command = Callable[[argparse.Namespace, PipelineParams, Path], int]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lidar-proposals", description="LiDAR object proposals and classification")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    detect = sub.add_parser("detect", help="detect objects in velodyne .bin files")
    detect.add_argument("inputs", nargs="+", type=Path, help=".bin files or directories of them")
    detect.add_argument("--model", type=Path)
    detect.add_argument("--no-classify", action="store_true")
    detect.add_argument("--bev", action="store_true", help="write a bird's-eye-view PNG per frame")
    detect.add_argument("--stages", action="store_true", help="also write ground grid, cluster and proposal CSVs per frame")
    detect.set_defaults(handler=cmd_detect)

    tune = sub.add_parser("tune", help="particle swarm search for H_d, V_d, D_o")
    _add_dataset(tune)
    tune.add_argument("--particles", type=int, default=50)
    tune.add_argument("--generations", type=int, default=1000)
    tune.add_argument("--iou", type=float, default=0.25)
    tune.add_argument("--no-filter", action="store_true", help="score recall before filtering")
    tune.set_defaults(handler=cmd_tune)

    train_cmd = sub.add_parser("train", help="train the proposal classifier")
    _add_dataset(train_cmd)
    train_cmd.add_argument("--samples", type=Path, nargs="+", help="training-set files (skip extraction)")
    train_cmd.add_argument("--label-iou", type=float, default=0.5)
    train_cmd.add_argument("--epochs", type=int, default=100)
    train_cmd.add_argument("--batch-size", type=int, default=32)
    train_cmd.add_argument("--train-fraction", type=float, default=0.8)
    train_cmd.add_argument("--no-augment", action="store_true")
    train_cmd.add_argument("--model-out", type=Path)
    train_cmd.add_argument("--sweep-points", type=int, nargs="+", metavar="N", help="retrain per points-per-proposal count")
    train_cmd.add_argument("--sweep-fractions", type=float, nargs="+", metavar="F", help="retrain per training-split fraction")
    train_cmd.set_defaults(handler=cmd_train)

    evaluate = sub.add_parser("eval", help="proposal recall and classifier metrics")
    _add_dataset(evaluate)
    evaluate.add_argument("--samples", type=Path, nargs="+", help="labelled samples for classifier metrics")
    evaluate.add_argument("--model", type=Path)
    evaluate.add_argument("--iou", type=float, default=0.25)
    evaluate.set_defaults(handler=cmd_eval)

    bench = sub.add_parser("bench", help="per-stage timing")
    _add_dataset(bench)
    bench.add_argument("--model", type=Path)
    bench.add_argument("--warmup", type=int, default=3)
    bench.set_defaults(handler=cmd_bench)

    synth = sub.add_parser("synth", help="write synthetic frames in KITTI layout")
    synth.add_argument("--frames", type=int, default=10)
    synth.add_argument("--objects", type=int, default=8)
    synth.set_defaults(handler=cmd_synth)

    fit = sub.add_parser("fit-curve", help="fit the minimum-points curve from labelled frames")
    _add_dataset(fit)
    fit.add_argument("--interval", type=float, default=0.5)
    fit.set_defaults(handler=cmd_fit_curve)

    serve = sub.add_parser("serve", help="run the MCP tool server over stdio")
    serve.set_defaults(handler=cmd_serve)

    for child in sub.choices.values():
        _add_common(child)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    output = args.output or default_output_dir(args.command)
    setup_logging(None if args.command == "serve" else output, args.verbose)
    try:
        params = _params(args)
        return args.handler(args, params, output)
    except (ConfigError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProposalError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FRAME_FAILURE
