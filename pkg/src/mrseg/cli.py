"""Command-line interface.

Data goes to files named by flags; progress and statistics go to stderr.
Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import formats
from .classifier import ClassifierModel, FixedPrediction, OracleClassifier, predict
from .cloud import PointCloud
from .config import DEFAULT_K, DEFAULT_SEED, DEFAULT_VOXEL_SIZE, PipelineConfig, read_config
from .crossval import cross_validate, render_report, report_json
from .features import FeatureMatrix, eigen_features
from .metrics import evaluate, format_table
from .pipeline import gather, load_stage2_models, run_pipeline, stage2_features, stage2_name, train_pipeline, train_single_stage
from .projection import closest_point_project, compose_final, voxel_project
from .subsample import SubsampleResult, voxel_subsample
from .synthetic import SceneParams, make_scene, scene_config

logger = logging.getLogger("mrseg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default; 2 is reserved for I/O
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- helpers -----------------------------------------------------------------

def _config(path: str, seed: Optional[int] = None) -> PipelineConfig:
    cfg = read_config(Path(path).read_text())
    if seed is not None and seed != cfg.classifier.seed:
        cfg = replace(cfg, classifier=replace(cfg.classifier, seed=seed))
    return cfg


def _seed(args) -> int:
    return DEFAULT_SEED if args.seed is None else args.seed


def _write_json(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _read_labels(path: str) -> np.ndarray:
    p = Path(path)
    if p.suffix.lower() == ".ply":
        labels = formats.read_ply(p.read_bytes()).labels
        if labels is None:
            raise UsageError(f"{path} carries no labels")
        return labels
    return formats.read_labels(p.read_text())


def _feature_table(cloud: PointCloud, feats: FeatureMatrix) -> str:
    cols = {a: cloud.positions[:, i] for i, a in enumerate("xyz")}
    cols.update({n: feats.values[:, j] for j, n in enumerate(feats.names)})
    return formats.write_table(cols)


def _read_feature_table(path: str) -> FeatureMatrix:
    names, values = formats.read_table(Path(path).read_text())
    keep = [j for j, n in enumerate(names) if n not in ("x", "y", "z")]
    if values.size == 0:
        values = np.empty((0, len(names)))
    return FeatureMatrix(values[:, keep], tuple(names[j] for j in keep))


def _merged_id(cfg: PipelineConfig, name: str) -> int:
    merged = cfg.merged
    for m in merged.concatenated_ids:
        if name in (merged.names[m], stage2_name(merged, m)):
            return m
    raise UsageError(f"{name!r} is not a concatenated class of the config")


def _pairs(values: Sequence[str], flag: str) -> dict[str, str]:
    out = {}
    for v in values or ():
        if "=" not in v:
            raise UsageError(f"{flag} expects NAME=FILE, got {v!r}")
        k, path = v.split("=", 1)
        out[k] = path
    return out


# -- subcommands -------------------------------------------------------------

def cmd_subsample(args) -> None:
    cloud = formats.read_cloud(args.input)
    sub = voxel_subsample(cloud, args.voxel)
    formats.write_cloud(sub.low_cloud, args.out)
    if args.map:
        doc = sub.to_json()
        doc["seed"] = _seed(args)
        _write_json(args.map, doc)
    logger.info("subsampled %d -> %d points (voxel %.4g m)", len(cloud), len(sub.low_cloud), args.voxel)


def cmd_features(args) -> None:
    cloud = formats.read_cloud(args.input)
    z_ref = args.z_ref
    if args.select:
        if not (args.labels and args.config):
            raise UsageError("--select needs --labels and --config")
        cfg = _config(args.config)
        initial = _read_labels(args.labels)
        if len(initial) != len(cloud):
            raise UsageError(f"{args.labels}: {len(initial)} labels for {len(cloud)} points")
        m = _merged_id(cfg, args.select)
        if z_ref is None:
            z_ref = float(cloud.positions[:, 2].min())
        cloud = cloud.subset(gather(initial, m))
        feats = stage2_features(cloud, args.k, z_ref, workers=args.threads)
        if feats is None:
            raise UsageError(f"only {len(cloud)} points labeled {args.select!r}; need at least 3")
    else:
        feats = eigen_features(cloud, min(args.k, len(cloud)), z_ref=z_ref, workers=args.threads)
    Path(args.out).write_text(_feature_table(cloud, feats))
    logger.info("wrote %d x %d feature table", len(feats), len(feats.names))


def cmd_train(args) -> None:
    cfg = _config(args.config, args.seed)
    clouds = [formats.read_cloud(p) for p in args.input]
    for p, c in zip(args.input, clouds):
        if c.labels is None:
            raise UsageError(f"{p} has no labels")
    models = train_pipeline(clouds, cfg)
    models.save(args.stage1_model, args.stage2_models, cfg.merged)
    if args.single_stage:
        Path(args.single_stage).write_text(train_single_stage(clouds, cfg).to_json())
    logger.info("trained stage one and %d stage-two models (seed %d)", len(models.stage2), cfg.classifier.seed)


def cmd_predict(args) -> None:
    model = ClassifierModel.from_json(Path(args.model).read_text())
    feats = _read_feature_table(args.features)
    pred = predict(model, feats)
    Path(args.out).write_text(formats.write_labels(pred.labels))
    if args.probabilities:
        cols = {f"p{c}": pred.probabilities[:, j] for j, c in enumerate(pred.class_ids)}
        Path(args.probabilities).write_text(formats.write_table(cols))


def _stage2_external(spec: str) -> FixedPrediction:
    path = Path(spec)
    if path.suffix.lower() == ".ply":
        partial = formats.read_ply(path.read_bytes())
        if partial.labels is None:
            raise UsageError(f"{spec} carries no labels")
        return FixedPrediction(partial.labels, positions=partial.positions)
    return FixedPrediction(formats.read_labels(path.read_text()))


def cmd_pipeline(args) -> None:
    cfg = _config(args.config, args.seed)
    cloud = formats.read_cloud(args.input)
    merged = cfg.merged
    if args.oracle:
        stage1 = OracleClassifier(merged.forward)
        stage2 = {m: OracleClassifier() for m in merged.concatenated_ids}
    else:
        if args.stage1_pred:
            stage1 = FixedPrediction(formats.read_labels(Path(args.stage1_pred).read_text()))
        elif args.stage1_model:
            stage1 = ClassifierModel.from_json(Path(args.stage1_model).read_text())
        else:
            raise UsageError("give --stage1-model, --stage1-pred or --oracle")
        stage2 = load_stage2_models(args.stage2_models, merged) if args.stage2_models else {}
        for name, path in _pairs(args.stage2_pred, "--stage2-pred").items():
            stage2[_merged_id(cfg, name)] = _stage2_external(path)
    result = run_pipeline(cloud, cfg, stage1, stage2, workers=args.threads)
    Path(args.out).write_text(formats.write_labels(result.labels))
    if args.initial:
        Path(args.initial).write_text(formats.write_labels(result.initial_full))
    stats = result.stats.to_dict()
    stats["seed"] = cfg.classifier.seed
    if args.stats:
        _write_json(args.stats, stats)
    print(json.dumps(stats["points"]), file=sys.stderr)


def cmd_project_voxel(args) -> None:
    doc = json.loads(Path(args.map).read_text())
    sub = SubsampleResult.from_json(doc)
    full = formats.read_cloud(args.input)
    labels = voxel_project(_read_labels(args.labels), sub, full)
    Path(args.out).write_text(formats.write_labels(labels))


def cmd_project_closest(args) -> None:
    source = formats.read_cloud(args.source)
    if args.source_labels:
        source = source.with_labels(_read_labels(args.source_labels))
    targets = formats.read_cloud(args.input)
    labels = closest_point_project(source, targets, workers=args.threads)
    Path(args.out).write_text(formats.write_labels(labels))


def cmd_project_compose(args) -> None:
    cfg = _config(args.config)
    initial = _read_labels(args.initial)
    stage2 = {_merged_id(cfg, k): _read_labels(v) for k, v in _pairs(args.stage2, "--stage2").items()}
    final, fallbacks = compose_final(initial, stage2, cfg.merged)
    Path(args.out).write_text(formats.write_labels(final))
    if fallbacks:
        logger.warning("%d points fell back to their base class", fallbacks)


def cmd_evaluate(args) -> None:
    cfg = _config(args.schema)
    truth = _read_labels(args.truth)
    pred = _read_labels(args.pred)
    names = cfg.schema.names
    if args.merged:
        merged = cfg.merged
        known = truth >= 0
        truth = truth.copy()
        truth[known] = merged.forward[truth[known]]
        names = merged.names
    report = evaluate(truth, pred, len(names), names)
    table = format_table([(Path(args.pred).stem, report)])
    if args.report:
        Path(args.report).write_text(table)
    else:
        sys.stdout.write(table)
    if args.json:
        _write_json(args.json, report.to_dict())


def cmd_crossval(args) -> None:
    cfg = _config(args.config, args.seed)
    if args.folds:
        if len(args.folds) != len(args.input):
            raise UsageError("--folds needs one fold id per input cloud")
        folds = list(args.folds)
    else:
        folds = []
        for p in args.input:
            key = p if p in cfg.folds else Path(p).name
            if key not in cfg.folds:
                raise UsageError(f"no fold assigned to {p} in the config")
            folds.append(cfg.folds[key])
    clouds = [formats.read_cloud(p) for p in args.input]
    result = cross_validate(clouds, folds, cfg, oracle=args.oracle, baseline=args.baseline,
                            workers=args.threads)
    out = Path(args.out_dir)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    for p, labels in zip(args.input, result.labels):
        (out / "labels" / f"{Path(p).stem}.txt").write_text(formats.write_labels(labels))
    text = render_report(result, cfg)
    (out / "report.txt").write_text(text)
    doc = report_json(result, cfg)
    doc["seed"] = cfg.classifier.seed
    _write_json(out / "report.json", doc)
    sys.stderr.write(text)


def cmd_synth(args) -> None:
    params = SceneParams(density=args.density, voxel_size=args.voxel)
    for i in range(args.count):
        cloud = make_scene(_seed(args) + i, params)
        path = Path(args.out_dir) / f"scene_{i}.ply"
        path.parent.mkdir(parents=True, exist_ok=True)
        formats.write_cloud(cloud, path)
        logger.info("wrote %s (%d points)", path, len(cloud))
    if args.config_out:
        cfg = scene_config(voxel_size=args.voxel,
                           folds={f"scene_{i}.ply": i % max(args.folds, 1) for i in range(args.count)})
        doc = cfg.to_dict()
        _write_json(args.config_out, doc)


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, metavar="N",
                        help="worker threads for neighbor queries (default: all cores); "
                             "results do not depend on N")
    common.add_argument("--seed", type=int, default=None,
                        help=f"random seed, echoed in outputs (default: config value, else {DEFAULT_SEED})")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    p = _Parser(prog="mrseg", description="Multi-resolution semantic segmentation of dense point clouds.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("subsample", parents=[common], help="keep one point per voxel")
    s.add_argument("--in", dest="input", required=True, help="input cloud (.ply or text)")
    s.add_argument("--voxel", type=float, default=DEFAULT_VOXEL_SIZE,
                   help=f"voxel edge length in meters (default {DEFAULT_VOXEL_SIZE}, an artifact choice)")
    s.add_argument("--out", required=True, help="low resolution cloud to write")
    s.add_argument("--map", help="JSON sidecar with grid origin, voxel size and representative indices")
    s.set_defaults(func=cmd_subsample)

    s = sub.add_parser("features", parents=[common], help="per-point eigenvalue features")
    s.add_argument("--in", dest="input", required=True, help="input cloud")
    s.add_argument("--k", type=int, default=DEFAULT_K, help=f"neighbors per point, itself included (default {DEFAULT_K})")
    s.add_argument("--z-ref", type=float, default=None,
                   help="elevation reference in meters (default: min z of the input cloud)")
    s.add_argument("--labels", help="stage-one label file over --in, for --select")
    s.add_argument("--select", help="only points whose stage-one label is this concatenated class")
    s.add_argument("--config", help="pipeline config JSON, for --select")
    s.add_argument("--out", required=True, help="feature table to write (text, one row per point)")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", parents=[common], help="train stage-one and stage-two models")
    s.add_argument("--config", required=True, help="pipeline config JSON")
    s.add_argument("--in", dest="input", nargs="+", required=True, help="labeled training clouds")
    s.add_argument("--stage1-model", required=True, help="stage-one model JSON to write")
    s.add_argument("--stage2-models", required=True, help="directory for stage-two model JSONs")
    s.add_argument("--single-stage", help="also train the single-resolution baseline model to this file")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="apply a model to a feature table")
    s.add_argument("--model", required=True, help="model JSON")
    s.add_argument("--features", required=True, help="feature table from 'features'")
    s.add_argument("--out", required=True, help="label file to write (one class id per line)")
    s.add_argument("--probabilities", help="optional table of class probabilities")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("pipeline", parents=[common], help="run both stages end to end")
    s.add_argument("--config", required=True, help="pipeline config JSON")
    s.add_argument("--in", dest="input", required=True, help="full resolution cloud")
    s.add_argument("--stage1-model", help="stage-one model JSON")
    s.add_argument("--stage2-models", help="directory of stage-two model JSONs")
    s.add_argument("--stage1-pred", help="external stage-one label file over the subsampled cloud")
    s.add_argument("--stage2-pred", action="append", metavar="CLASS=FILE",
                   help="external stage-two labels for a concatenated class: a label file aligned "
                        "with the gathered points, or a labeled .ply to project by closest point")
    s.add_argument("--oracle", action="store_true", help="use ground truth from --in in both stages")
    s.add_argument("--out", required=True, help="final label file")
    s.add_argument("--initial", help="also write the voxel-projected stage-one labels")
    s.add_argument("--stats", help="run statistics JSON (point counts, seconds, bytes)")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("project", help="label transfer")
    psub = s.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    q = psub.add_parser("voxel", parents=[common], help="low resolution labels onto the full cloud")
    q.add_argument("--map", required=True, help="subsample sidecar JSON")
    q.add_argument("--labels", required=True, help="label file over the low resolution cloud")
    q.add_argument("--in", dest="input", required=True, help="full resolution cloud the map was built from")
    q.add_argument("--out", required=True, help="label file to write")
    q.set_defaults(func=cmd_project_voxel)
    q = psub.add_parser("closest", parents=[common], help="nearest labeled point onto targets")
    q.add_argument("--source", required=True, help="labeled source cloud")
    q.add_argument("--source-labels", help="label file for --source, overriding its own labels")
    q.add_argument("--in", dest="input", required=True, help="target cloud")
    q.add_argument("--out", required=True, help="label file to write")
    q.set_defaults(func=cmd_project_closest)
    q = psub.add_parser("compose", parents=[common], help="merge stage-one and stage-two labels")
    q.add_argument("--config", required=True, help="pipeline config JSON")
    q.add_argument("--initial", required=True, help="stage-one labels over the full cloud")
    q.add_argument("--stage2", action="append", metavar="CLASS=FILE", default=[],
                   help="stage-two labels for the points of a concatenated class, in point order")
    q.add_argument("--out", required=True, help="final label file")
    q.set_defaults(func=cmd_project_compose)

    s = sub.add_parser("evaluate", parents=[common], help="OA, per-class IoU and mIoU")
    s.add_argument("--truth", required=True, help="ground truth labels (label file or labeled .ply)")
    s.add_argument("--pred", required=True, help="predicted labels")
    s.add_argument("--schema", required=True, help="pipeline config JSON naming the classes")
    s.add_argument("--merged", action="store_true", help="score in the merged (stage-one) class space")
    s.add_argument("--report", help="write the table here instead of stdout")
    s.add_argument("--json", help="also write the report as JSON")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("crossval", parents=[common], help="leave-one-fold-out evaluation")
    s.add_argument("--config", required=True, help="pipeline config JSON (its 'folds' assign clouds)")
    s.add_argument("--in", dest="input", nargs="+", required=True, help="labeled clouds")
    s.add_argument("--folds", type=int, nargs="+", help="fold id per input, overriding the config")
    s.add_argument("--baseline", action="store_true", help="also score the single-resolution baseline")
    s.add_argument("--oracle", action="store_true", help="oracle classifiers instead of training")
    s.add_argument("--out-dir", required=True, help="directory for labels/ and report.{txt,json}")
    s.set_defaults(func=cmd_crossval)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic labeled scenes")
    s.add_argument("--count", type=int, default=4, help="number of scenes")
    s.add_argument("--density", type=float, default=25_000.0, help="points per square meter")
    s.add_argument("--voxel", type=float, default=0.05, help="voxel size in meters the scene is laid out for")
    s.add_argument("--folds", type=int, default=4, help="folds in the emitted config")
    s.add_argument("--out-dir", required=True, help="directory for scene_<i>.ply")
    s.add_argument("--config-out", help="write a matching pipeline config JSON")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if hasattr(args, "threads") and args.threads < 1:
        print("mrseg: error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        args.func(args)
    except OSError as exc:
        print(f"mrseg: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, UsageError, KeyError) as exc:
        print(f"mrseg: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
