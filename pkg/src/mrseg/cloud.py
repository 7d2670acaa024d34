"""Point cloud container, class schemas and merge maps."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

#: Label value for points without ground truth. Never a schema class.
UNLABELED = -1


class Resolution(str, enum.Enum):
    HIGH = "high"
    LOW = "low"


class SchemaError(ValueError):
    """Raised when a schema or merge map violates its invariants."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Columnar point store.

    ``positions`` is an ``(n, 3)`` float64 array in meters. ``colors`` holds
    uint8 RGB triples, ``labels`` int64 class ids (``UNLABELED`` allowed) and
    ``intensity`` a float per point. Arrays are copied and made read-only.
    """

    positions: np.ndarray
    colors: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    intensity: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(pos)
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain non-finite coordinates")
        object.__setattr__(self, "positions", _frozen(pos))
        if self.colors is not None:
            col = np.asarray(self.colors)
            if col.shape != (n, 3):
                raise ValueError(f"colors shape {col.shape} does not match {n} points")
            if col.size and (col.min() < 0 or col.max() > 255):
                raise ValueError("colors must lie in 0..255")
            object.__setattr__(self, "colors", _frozen(col.astype(np.uint8)))
        if self.labels is not None:
            lab = np.array(self.labels).reshape(-1)
            if lab.shape != (n,):
                raise ValueError(f"labels length {lab.shape[0]} does not match {n} points")
            if lab.size and not np.issubdtype(lab.dtype, np.integer):
                if not np.all(lab == np.round(lab)):
                    raise ValueError("labels must be integers")
            lab = lab.astype(np.int64)
            if lab.size and lab.min() < UNLABELED:
                raise ValueError("negative label other than the unlabeled sentinel")
            object.__setattr__(self, "labels", _frozen(lab))
        if self.intensity is not None:
            inten = np.array(self.intensity, dtype=np.float64).reshape(-1)
            if inten.shape != (n,):
                raise ValueError("intensity length does not match positions")
            object.__setattr__(self, "intensity", _frozen(inten))

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        for name in ("positions", "colors", "labels", "intensity"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True

    __hash__ = None  # type: ignore[assignment]

    def subset(self, index: np.ndarray) -> "PointCloud":
        """Return the points selected by ``index`` (integer or boolean mask)."""
        pick = lambda a: None if a is None else a[index]  # noqa: E731
        return PointCloud(
            self.positions[index],
            colors=pick(self.colors),
            labels=pick(self.labels),
            intensity=pick(self.intensity),
        )

    def with_labels(self, labels: Optional[np.ndarray]) -> "PointCloud":
        return PointCloud(self.positions, self.colors, labels, self.intensity)


def validate_cloud(cloud: PointCloud) -> None:
    """Re-check attribute lengths and finiteness; raises ValueError on failure."""
    n = len(cloud.positions)
    for name in ("colors", "labels", "intensity"):
        arr = getattr(cloud, name)
        if arr is not None and len(arr) != n:
            raise ValueError(f"{name} length {len(arr)} != {n}")
    if not np.all(np.isfinite(cloud.positions)):
        raise ValueError("non-finite coordinates")


@dataclass(frozen=True)
class ClassSchema:
    names: tuple[str, ...]
    resolutions: tuple[Resolution, ...]

    def __post_init__(self) -> None:
        names = tuple(self.names)
        res = tuple(Resolution(r) for r in self.resolutions)
        if len(names) != len(res):
            raise SchemaError("names and resolutions differ in length")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate class names: {', '.join(dup)}")
        if Resolution.LOW not in res:
            raise SchemaError("schema needs at least one low resolution class")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "resolutions", res)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[str, str | Resolution]]) -> "ClassSchema":
        return cls(tuple(p[0] for p in pairs), tuple(Resolution(p[1]) for p in pairs))

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown class {name!r}") from None

    def is_high(self, cid: int) -> bool:
        return self.resolutions[cid] is Resolution.HIGH

    @property
    def high_ids(self) -> list[int]:
        return [i for i, r in enumerate(self.resolutions) if r is Resolution.HIGH]

    @property
    def low_ids(self) -> list[int]:
        return [i for i, r in enumerate(self.resolutions) if r is Resolution.LOW]


class MergeMap(dict):
    """High class id -> Low class id. Validated with :meth:`check`."""

    @classmethod
    def from_names(cls, schema: ClassSchema, entries: Mapping[str, str]) -> "MergeMap":
        return cls({schema.index(h): schema.index(lo) for h, lo in entries.items()})

    def check(self, schema: ClassSchema) -> None:
        k = len(schema)
        for src, dst in self.items():
            for cid in (src, dst):
                if not (isinstance(cid, (int, np.integer)) and 0 <= cid < k):
                    raise SchemaError(f"merge references unknown class {cid!r}")
            if not schema.is_high(src):
                raise SchemaError(f"merge keyed on low resolution class {schema.names[src]!r}")
            if schema.is_high(dst):
                raise SchemaError(f"merge target {schema.names[dst]!r} is a high resolution class")
        missing = [schema.names[h] for h in schema.high_ids if h not in self]
        if missing:
            raise SchemaError(f"high resolution classes without merge target: {', '.join(missing)}")


@dataclass(frozen=True)
class MergedSchema:
    """Low-resolution class space used by the first segmentation.

    ``forward[c]`` is the merged id of original class ``c``; ``base[m]`` the
    original Low class merged id ``m`` stands for; ``members[m]`` the original
    ids folded into ``m`` (only the base for non-concatenated classes).
    """

    source: ClassSchema
    names: tuple[str, ...]
    forward: np.ndarray
    base: tuple[int, ...]
    members: tuple[frozenset[int], ...]
    concatenated: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.names)

    @property
    def concatenated_ids(self) -> list[int]:
        return [m for m, c in enumerate(self.concatenated) if c]

    def backward(self) -> np.ndarray:
        """Merged id -> base original id, as an index array."""
        return np.asarray(self.base, dtype=np.int64)


def build_merged_schema(schema: ClassSchema, merge: Mapping[int, int]) -> MergedSchema:
    merge = MergeMap(merge)
    merge.check(schema)
    low = schema.low_ids
    merged_of_low = {c: m for m, c in enumerate(low)}
    forward = np.empty(len(schema), dtype=np.int64)
    for c in low:
        forward[c] = merged_of_low[c]
    members: list[set[int]] = [{c} for c in low]
    for h, target in merge.items():
        m = merged_of_low[target]
        forward[h] = m
        members[m].add(h)
    concatenated = tuple(len(s) > 1 for s in members)
    names = tuple(
        schema.names[c] + ("'" if cat else "") for c, cat in zip(low, concatenated)
    )
    return MergedSchema(
        source=schema,
        names=names,
        forward=_frozen(forward),
        base=tuple(low),
        members=tuple(frozenset(s) for s in members),
        concatenated=concatenated,
    )


def relabel(cloud: PointCloud, forward: Mapping[int, int] | np.ndarray) -> PointCloud:
    """Map every label through ``forward``; unlabeled points stay unlabeled."""
    if cloud.labels is None:
        raise ValueError("cloud has no labels")
    labels = cloud.labels
    if isinstance(forward, np.ndarray):
        table = forward.astype(np.int64)
    else:
        size = max(forward) + 1 if forward else 0
        table = np.full(size, UNLABELED - 1, dtype=np.int64)
        for k, v in forward.items():
            table[k] = v
    known = labels != UNLABELED
    vals = labels[known]
    ok = vals < len(table)
    ok[ok] = table[vals[ok]] != UNLABELED - 1
    if not ok.all():
        raise ValueError(f"label {int(vals[~ok][0])} outside mapping domain")
    out = labels.copy()
    out[known] = table[vals]
    return cloud.with_labels(out)
