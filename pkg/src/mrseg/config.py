"""JSON pipeline configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .cloud import ClassSchema, MergedSchema, MergeMap, Resolution, SchemaError, build_merged_schema

DEFAULT_VOXEL_SIZE = 0.03
DEFAULT_K = 14
DEFAULT_SEED = 42


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClassifierParams:
    learning_rate: float = 0.1
    epochs: int = 20
    seed: int = DEFAULT_SEED


@dataclass(frozen=True)
class PipelineConfig:
    schema: ClassSchema
    merge: MergeMap
    merged: MergedSchema
    voxel_size: float = DEFAULT_VOXEL_SIZE
    k: int = DEFAULT_K
    classifier: ClassifierParams = field(default_factory=ClassifierParams)
    folds: dict[str, int] = field(default_factory=dict)

    @property
    def n_folds(self) -> int:
        return len(set(self.folds.values()))

    def to_dict(self) -> dict[str, Any]:
        s = self.schema
        return {
            "classes": [{"name": n, "resolution": r.value} for n, r in zip(s.names, s.resolutions)],
            "merge": {s.names[h]: s.names[lo] for h, lo in sorted(self.merge.items())},
            "voxel_size": self.voxel_size,
            "k": self.k,
            "classifier": {
                "learning_rate": self.classifier.learning_rate,
                "epochs": self.classifier.epochs,
                "seed": self.classifier.seed,
            },
            "folds": dict(self.folds),
        }


def make_config(classes, merge, **kwargs) -> PipelineConfig:
    """Build a validated config from ``[(name, "high"|"low"), ...]`` and ``{high: low}`` names."""
    doc = {"classes": [{"name": n, "resolution": r} for n, r in classes], "merge": dict(merge)}
    doc.update(kwargs)
    return config_from_dict(doc)


def read_config(text: str) -> PipelineConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return config_from_dict(doc)


def _require(doc: dict, key: str) -> Any:
    if key not in doc:
        raise ConfigError(f"missing required field {key!r}")
    return doc[key]


def config_from_dict(doc: dict[str, Any]) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    raw_classes = _require(doc, "classes")
    if not isinstance(raw_classes, list) or not raw_classes:
        raise ConfigError("field 'classes' must be a non-empty list")
    pairs = []
    for i, entry in enumerate(raw_classes):
        if not isinstance(entry, dict) or "name" not in entry or "resolution" not in entry:
            raise ConfigError(f"classes[{i}] needs 'name' and 'resolution'")
        try:
            pairs.append((str(entry["name"]), Resolution(str(entry["resolution"]).lower())))
        except ValueError:
            raise ConfigError(
                f"class {entry['name']!r}: resolution must be 'high' or 'low'") from None
    try:
        schema = ClassSchema.from_pairs(pairs)
    except SchemaError as exc:
        raise ConfigError(str(exc)) from None

    raw_merge = doc.get("merge", {})
    if isinstance(raw_merge, list):
        try:
            raw_merge = {str(a): str(b) for a, b in raw_merge}
        except (TypeError, ValueError):
            raise ConfigError("field 'merge' must map high class names to low class names") from None
    if not isinstance(raw_merge, dict):
        raise ConfigError("field 'merge' must map high class names to low class names")
    for src, dst in raw_merge.items():
        for name in (src, dst):
            if name not in schema.names:
                raise ConfigError(f"merge references unknown class {name!r}")
        if not schema.is_high(schema.index(src)):
            raise ConfigError(f"merge source {src!r} is not a high resolution class")
        if schema.is_high(schema.index(dst)):
            raise ConfigError(f"merge target {dst!r} is a high resolution class")
    merge = MergeMap.from_names(schema, raw_merge)
    try:
        merged = build_merged_schema(schema, merge)
    except SchemaError as exc:
        raise ConfigError(str(exc)) from None

    voxel = doc.get("voxel_size", DEFAULT_VOXEL_SIZE)
    if not isinstance(voxel, (int, float)) or not voxel > 0:
        raise ConfigError(f"field 'voxel_size' must be > 0, got {voxel!r}")
    k = doc.get("k", DEFAULT_K)
    if not isinstance(k, int) or k < 3:
        raise ConfigError(f"field 'k' must be an integer >= 3, got {k!r}")

    raw_clf = doc.get("classifier", {})
    if not isinstance(raw_clf, dict):
        raise ConfigError("field 'classifier' must be an object")
    clf = ClassifierParams(
        learning_rate=float(raw_clf.get("learning_rate", ClassifierParams.learning_rate)),
        epochs=int(raw_clf.get("epochs", ClassifierParams.epochs)),
        seed=int(raw_clf.get("seed", ClassifierParams.seed)),
    )
    if not clf.learning_rate > 0:
        raise ConfigError("field 'classifier.learning_rate' must be > 0")
    if clf.epochs < 0:
        raise ConfigError("field 'classifier.epochs' must be >= 0")

    folds = doc.get("folds", {})
    if not isinstance(folds, dict) or not all(isinstance(v, int) for v in folds.values()):
        raise ConfigError("field 'folds' must map cloud files to integer fold ids")
    if folds and sorted(set(folds.values())) != list(range(len(set(folds.values())))):
        raise ConfigError("field 'folds': fold ids must form a contiguous range starting at 0")

    return PipelineConfig(schema, merge, merged, float(voxel), k, clf, dict(folds))
