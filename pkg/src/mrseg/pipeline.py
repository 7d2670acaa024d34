"""Two-stage multi-resolution segmentation.

Stage one classifies a voxel-subsampled cloud over the merged class space,
where every high resolution class is folded into a low resolution
neighbor. Its labels are voxel-projected back to full resolution. Stage two
then re-segments, at full resolution, only the points that stage one put in
a concatenated class, each with its own model over that class's members.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import features as feats
from .classifier import Classifier, ClassifierModel, Prediction, train
from .cloud import UNLABELED, MergedSchema, PointCloud, relabel
from .config import PipelineConfig
from .features import FeatureMatrix, eigen_features
from .projection import closest_point_project, compose_final, voxel_project
from .subsample import SubsampleResult, voxel_subsample

logger = logging.getLogger(__name__)


class PipelineError(ValueError):
    pass


@dataclass
class PipelineModels:
    stage1: ClassifierModel
    stage2: dict[int, ClassifierModel] = field(default_factory=dict)

    def save(self, stage1_path: str | Path, stage2_dir: str | Path, merged: MergedSchema) -> None:
        Path(stage1_path).write_text(self.stage1.to_json())
        out = Path(stage2_dir)
        out.mkdir(parents=True, exist_ok=True)
        for m, model in sorted(self.stage2.items()):
            (out / f"{stage2_name(merged, m)}.json").write_text(model.to_json())

    @classmethod
    def load(cls, stage1_path: str | Path, stage2_dir: str | Path,
             merged: MergedSchema) -> "PipelineModels":
        stage1 = ClassifierModel.from_json(Path(stage1_path).read_text())
        return cls(stage1, load_stage2_models(stage2_dir, merged))


def load_stage2_models(stage2_dir: str | Path, merged: MergedSchema) -> dict[int, ClassifierModel]:
    """Models named ``<base class>.json`` in ``stage2_dir``; missing files are skipped."""
    out = {}
    for m in merged.concatenated_ids:
        path = Path(stage2_dir) / f"{stage2_name(merged, m)}.json"
        if path.exists():
            out[m] = ClassifierModel.from_json(path.read_text())
    return out


def stage2_name(merged: MergedSchema, m: int) -> str:
    """File stem for the second-stage model of concatenated class ``m``: its base class name."""
    return merged.source.names[merged.base[m]]


def _elapsed(t0: float) -> float:
    return round(time.perf_counter() - t0, 6)


def feature_working_set(n: int, k: int, n_features: int) -> int:
    """Rough peak bytes held while extracting features for ``n`` points."""
    chunk = min(n, feats._CHUNK)
    tree = n * (24 + 8 + 16)  # positions copy, index permutation, node overhead
    neighborhoods = chunk * (k + 1) * (8 + 8 + 24 + 24)  # ids, d2, gathered and centered coords
    return n * 24 + tree + neighborhoods + chunk * 9 * 8 * 2 + n * n_features * 8


@dataclass
class RunStats:
    points: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)
    working_set_bytes: dict = field(default_factory=dict)
    fallbacks: int = 0

    def to_dict(self) -> dict:
        return {
            "points": self.points,
            "seconds": self.seconds,
            "working_set_bytes": self.working_set_bytes,
            "fallback_points": self.fallbacks,
        }


@dataclass(eq=False)
class PipelineResult:
    labels: np.ndarray
    initial_full: np.ndarray
    initial_low: np.ndarray
    stage2: dict[int, np.ndarray]
    subsample: SubsampleResult
    stats: RunStats


def gather(initial_full: np.ndarray, m: int) -> np.ndarray:
    """Ascending indices of the points whose stage-one label is ``m``."""
    return np.flatnonzero(np.asarray(initial_full) == m)


def _labels_for(pred: Prediction, cloud: PointCloud, workers: int) -> np.ndarray:
    if pred.positions is None:
        labels = np.asarray(pred.labels, dtype=np.int64)
        if len(labels) != len(cloud):
            raise PipelineError(f"classifier returned {len(labels)} labels for {len(cloud)} points")
        return labels
    source = PointCloud(pred.positions, labels=pred.labels)
    return closest_point_project(source, cloud, workers=workers)


def stage2_features(subset: PointCloud, k: int, z_ref: float, workers: int = 1) -> Optional[FeatureMatrix]:
    """Full resolution features of a gathered subset; None when it is too small to describe."""
    if len(subset) < 3:
        return None
    return eigen_features(subset, min(k, len(subset)), z_ref=z_ref, workers=workers)


def run_pipeline(
    full_cloud: PointCloud,
    config: PipelineConfig,
    stage1: Classifier,
    stage2: Mapping[int, Classifier],
    workers: int = 1,
) -> PipelineResult:
    merged = config.merged
    stats = RunStats()
    n_full = len(full_cloud)
    stats.points["full"] = n_full

    t0 = time.perf_counter()
    sub = voxel_subsample(full_cloud, config.voxel_size)
    low = sub.low_cloud
    stats.seconds["subsample"] = _elapsed(t0)
    stats.points["low"] = len(low)
    stats.working_set_bytes["subsample"] = n_full * (24 + 24 + 8 + 8 + 8) + len(low) * 24

    t0 = time.perf_counter()
    low_feats = eigen_features(low, min(config.k, len(low)), workers=workers)
    stats.seconds["features_low"] = _elapsed(t0)
    stats.working_set_bytes["features_low"] = feature_working_set(
        len(low), config.k, len(low_feats.names))

    t0 = time.perf_counter()
    initial_low = _labels_for(stage1.classify(low, low_feats), low, workers)
    bad = (initial_low < 0) | (initial_low >= len(merged))
    if bad.any():
        raise PipelineError(f"stage-one label {int(initial_low[bad][0])} outside the merged schema")
    stats.seconds["stage1_predict"] = _elapsed(t0)

    t0 = time.perf_counter()
    initial_full = voxel_project(initial_low, sub, full_cloud)
    stats.seconds["voxel_project"] = _elapsed(t0)
    stats.working_set_bytes["voxel_project"] = n_full * (24 + 8 + 8) + len(low) * 24

    z_ref = float(full_cloud.positions[:, 2].min()) if n_full else 0.0
    stage2_labels: dict[int, np.ndarray] = {}
    per_class: dict[str, int] = {}
    feature_points = 0
    t_feat = t_pred = 0.0
    peak = 0
    for m in merged.concatenated_ids:
        where = gather(initial_full, m)
        name = merged.names[m]
        per_class[name] = int(len(where))
        if len(where) == 0:
            stage2_labels[m] = np.empty(0, dtype=np.int64)
            continue
        subset = full_cloud.subset(where)
        t0 = time.perf_counter()
        sub_feats = stage2_features(subset, config.k, z_ref, workers)
        t_feat += time.perf_counter() - t0
        if sub_feats is not None:
            feature_points += len(subset)
            peak = max(peak, feature_working_set(len(subset), config.k, len(sub_feats.names)))
        if m not in stage2:
            raise PipelineError(f"no second-stage classifier for {name!r}")
        t0 = time.perf_counter()
        if sub_feats is None:
            labels = np.full(len(subset), UNLABELED, dtype=np.int64)
        else:
            labels = _labels_for(stage2[m].classify(subset, sub_feats), subset, workers)
        t_pred += time.perf_counter() - t0
        stray = (labels != UNLABELED) & ~np.isin(labels, sorted(merged.members[m]))
        if stray.any():
            raise PipelineError(
                f"stage-two label {int(labels[stray][0])} is not a member of {name!r}")
        stage2_labels[m] = labels
    stats.points["stage2"] = per_class
    stats.points["stage2_total"] = int(sum(per_class.values()))
    stats.points["full_resolution_feature_points"] = int(feature_points)
    stats.points["stage2_fraction"] = (stats.points["stage2_total"] / n_full) if n_full else 0.0
    stats.seconds["features_stage2"] = round(t_feat, 6)
    stats.seconds["stage2_predict"] = round(t_pred, 6)
    stats.working_set_bytes["features_stage2"] = peak

    t0 = time.perf_counter()
    final, fallbacks = compose_final(initial_full, stage2_labels, merged)
    stats.seconds["compose"] = _elapsed(t0)
    stats.fallbacks = fallbacks
    if fallbacks:
        logger.warning("%d second-stage points fell back to their base class", fallbacks)
    return PipelineResult(final, initial_full, initial_low, stage2_labels, sub, stats)


def _stage1_training_rows(cloud: PointCloud, config: PipelineConfig) -> tuple[FeatureMatrix, np.ndarray]:
    merged_cloud = relabel(cloud, config.merged.forward)
    low = voxel_subsample(merged_cloud, config.voxel_size).low_cloud
    return eigen_features(low, min(config.k, len(low))), low.labels


def _concat(mats: Sequence[FeatureMatrix]) -> FeatureMatrix:
    names = mats[0].names
    if any(m.names != names for m in mats):
        raise PipelineError("training clouds disagree on feature columns (colors present in some only?)")
    return FeatureMatrix(np.vstack([m.values for m in mats]), names)


def train_pipeline(clouds: Sequence[PointCloud], config: PipelineConfig) -> PipelineModels:
    """Stage one on low-resolution merged labels; one stage-two model per concatenated
    class, trained on the full-resolution points whose true class is a member."""
    if not clouds:
        raise PipelineError("no training clouds")
    for c in clouds:
        if c.labels is None:
            raise PipelineError("training clouds must be labeled")
    merged = config.merged
    hp = config.classifier
    rows = [_stage1_training_rows(c, config) for c in clouds]
    stage1 = train(_concat([r[0] for r in rows]), np.concatenate([r[1] for r in rows]),
                   class_ids=range(len(merged)), learning_rate=hp.learning_rate,
                   epochs=hp.epochs, seed=hp.seed)
    stage2 = {}
    for m in merged.concatenated_ids:
        members = sorted(merged.members[m])
        mats, labs = [], []
        for c in clouds:
            where = np.flatnonzero(np.isin(c.labels, members))
            subset = c.subset(where)
            f = stage2_features(subset, config.k, float(c.positions[:, 2].min()))
            if f is not None:
                mats.append(f)
                labs.append(subset.labels)
        if not mats:
            raise PipelineError(f"concatenated class {merged.names[m]!r} has no training points")
        stage2[m] = train(_concat(mats), np.concatenate(labs), class_ids=members,
                          learning_rate=hp.learning_rate, epochs=hp.epochs, seed=hp.seed)
    return PipelineModels(stage1, stage2)


def classifiers_from(models: PipelineModels) -> tuple[Classifier, dict[int, Classifier]]:
    return models.stage1, dict(models.stage2)


# -- single-resolution comparison ------------------------------------------------

def train_single_stage(clouds: Sequence[PointCloud], config: PipelineConfig) -> ClassifierModel:
    """Baseline: one low-resolution model over the original class space."""
    mats, labs = [], []
    for c in clouds:
        low = voxel_subsample(c, config.voxel_size).low_cloud
        mats.append(eigen_features(low, min(config.k, len(low))))
        labs.append(low.labels)
    hp = config.classifier
    return train(_concat(mats), np.concatenate(labs), class_ids=range(len(config.schema)),
                 learning_rate=hp.learning_rate, epochs=hp.epochs, seed=hp.seed)


def run_single_stage(full_cloud: PointCloud, config: PipelineConfig, model: Classifier,
                     workers: int = 1) -> np.ndarray:
    """Classify the subsampled cloud and voxel-project the labels to full resolution."""
    sub = voxel_subsample(full_cloud, config.voxel_size)
    low = sub.low_cloud
    low_feats = eigen_features(low, min(config.k, len(low)), workers=workers)
    low_labels = _labels_for(model.classify(low, low_feats), low, workers)
    return voxel_project(low_labels, sub, full_cloud)
