"""Leave-one-fold-out evaluation of the two-stage pipeline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .classifier import OracleClassifier
from .cloud import UNLABELED, PointCloud
from .config import PipelineConfig
from .metrics import EvalReport, evaluate, format_rows, format_table
from .pipeline import run_pipeline, run_single_stage, train_pipeline, train_single_stage

logger = logging.getLogger(__name__)


class CrossValError(ValueError):
    pass


@dataclass(eq=False)
class CrossValResult:
    folds: list[EvalReport]
    pooled: EvalReport
    labels: list[np.ndarray]
    initial: Optional[EvalReport] = None  # pooled stage-one report in the merged class space
    baseline_folds: list[EvalReport] = field(default_factory=list)
    baseline: Optional[EvalReport] = None
    unrecoverable: int = 0  # high-class points stage one sent to a non-concatenated class
    high_points: int = 0
    stage2_points: int = 0
    total_points: int = 0

    @property
    def fold_mean(self) -> dict[str, float]:
        return {"OA": float(np.mean([r.oa for r in self.folds])),
                "mIoU": float(np.mean([r.miou for r in self.folds]))}


def _check_folds(n_clouds: int, folds: Sequence[int]) -> list[int]:
    if len(folds) != n_clouds:
        raise CrossValError(f"{len(folds)} fold ids for {n_clouds} clouds")
    ids = sorted(set(folds))
    if len(ids) < 2:
        raise CrossValError("cross validation needs at least two folds")
    if ids != list(range(len(ids))):
        raise CrossValError("fold ids must form a contiguous range starting at 0")
    return ids


def cross_validate(
    clouds: Sequence[PointCloud],
    folds: Sequence[int],
    config: PipelineConfig,
    *,
    oracle: bool = False,
    baseline: bool = False,
    workers: int = 1,
) -> CrossValResult:
    """Train on all folds but one, test on the held-out fold, for every fold.

    The pooled report sums the fold confusion matrices before scoring.
    """
    fold_ids = _check_folds(len(clouds), folds)
    schema, merged = config.schema, config.merged
    k = len(schema)
    labels_out: list[Optional[np.ndarray]] = [None] * len(clouds)
    reports, base_reports, init_reports = [], [], []
    unrecoverable = high_points = stage2_points = total_points = 0
    high = np.asarray(schema.high_ids, dtype=np.int64)

    for f in fold_ids:
        test = [i for i, fid in enumerate(folds) if fid == f]
        train_set = [clouds[i] for i, fid in enumerate(folds) if fid != f]
        logger.info("fold %d: %d training clouds, %d test clouds", f, len(train_set), len(test))
        if oracle:
            stage1 = OracleClassifier(merged.forward)
            stage2 = {m: OracleClassifier() for m in merged.concatenated_ids}
        else:
            present = np.unique(np.concatenate([c.labels for c in train_set]))
            absent = sorted(set(range(k)) - set(present.tolist()))
            if absent:
                logger.warning("fold %d: training set lacks classes %s",
                               f, [schema.names[c] for c in absent])
            models = train_pipeline(train_set, config)
            stage1, stage2 = models.stage1, dict(models.stage2)
            base_model = train_single_stage(train_set, config) if baseline else None
        truth, pred, base_pred, init_truth, init_pred = [], [], [], [], []
        for i in test:
            cloud = clouds[i]
            res = run_pipeline(cloud, config, stage1, stage2, workers=workers)
            labels_out[i] = res.labels
            truth.append(cloud.labels)
            pred.append(res.labels)
            known = cloud.labels != UNLABELED
            merged_truth = np.full(len(cloud), UNLABELED, dtype=np.int64)
            merged_truth[known] = merged.forward[cloud.labels[known]]
            init_truth.append(merged_truth)
            init_pred.append(res.initial_full)
            is_high = np.isin(cloud.labels, high)
            cat = np.asarray(merged.concatenated, dtype=bool)[res.initial_full]
            unrecoverable += int(np.sum(is_high & ~cat))
            high_points += int(is_high.sum())
            stage2_points += res.stats.points["stage2_total"]
            total_points += len(cloud)
            if baseline and not oracle:
                base_pred.append(run_single_stage(cloud, config, base_model, workers=workers))
        reports.append(evaluate(np.concatenate(truth), np.concatenate(pred), k, schema.names))
        init_reports.append(evaluate(np.concatenate(init_truth), np.concatenate(init_pred),
                                     len(merged), merged.names))
        if base_pred:
            base_reports.append(evaluate(np.concatenate(truth), np.concatenate(base_pred),
                                         k, schema.names))

    pooled = reports[0]
    for r in reports[1:]:
        pooled = pooled + r
    init = init_reports[0]
    for r in init_reports[1:]:
        init = init + r
    base_pooled = None
    if base_reports:
        base_pooled = base_reports[0]
        for r in base_reports[1:]:
            base_pooled = base_pooled + r
    return CrossValResult(
        folds=reports, pooled=pooled, labels=labels_out, initial=init,
        baseline_folds=base_reports, baseline=base_pooled,
        unrecoverable=unrecoverable, high_points=high_points,
        stage2_points=stage2_points, total_points=total_points,
    )


def initial_row(report: EvalReport, config: PipelineConfig) -> list:
    """Stage-one IoUs laid out over the original classes; high classes are n/a."""
    merged = config.merged
    return [None if config.schema.is_high(c) else report.iou[int(merged.forward[c])]
            for c in range(len(config.schema))]


def render_report(result: CrossValResult, config: PipelineConfig) -> str:
    names = config.schema.names
    rows = []
    if result.baseline is not None:
        rows.append(("single-stage", result.baseline.oa, result.baseline.miou, result.baseline.iou))
    rows.append(("two-stage", result.pooled.oa, result.pooled.miou, result.pooled.iou))
    if result.initial is not None:
        rows.append(("two-stage (init)", result.initial.oa, result.initial.miou,
                     initial_row(result.initial, config)))
    text = ["pooled over folds", format_rows(names, rows), "per fold"]
    text.append(format_table([(f"fold {i}", r) for i, r in enumerate(result.folds)]))
    mean = result.fold_mean
    text.append(f"fold mean: OA {mean['OA']:.2f}  mIoU {mean['mIoU']:.2f}")
    if result.high_points:
        share = 100.0 * result.unrecoverable / result.high_points
        text.append(
            f"high-class points placed outside any concatenated class by stage one: "
            f"{result.unrecoverable} of {result.high_points} ({share:.2f}%); "
            f"stage two cannot recover these, so high-class recall is at most {100 - share:.2f}%")
    if result.total_points:
        text.append(f"full-resolution stage-two points: {result.stage2_points} of "
                    f"{result.total_points} ({100.0 * result.stage2_points / result.total_points:.2f}%)")
    return "\n".join(text) + "\n"


def report_json(result: CrossValResult, config: PipelineConfig) -> dict:
    doc = {
        "pooled": result.pooled.to_dict(),
        "folds": [r.to_dict() for r in result.folds],
        "fold_mean": {k: round(v, 2) for k, v in result.fold_mean.items()},
        "unrecoverable_high_points": result.unrecoverable,
        "high_points": result.high_points,
        "stage2_points": result.stage2_points,
        "total_points": result.total_points,
    }
    if result.initial is not None:
        doc["initial"] = result.initial.to_dict()
    if result.baseline is not None:
        doc["single_stage"] = result.baseline.to_dict()
        doc["single_stage_folds"] = [r.to_dict() for r in result.baseline_folds]
    return doc
