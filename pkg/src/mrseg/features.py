"""Per-point eigenvalue shape descriptors.

For each point the covariance of its ``k`` nearest neighbors (itself
included) is decomposed into eigenvalues ``l1 >= l2 >= l3``::

    linearity   = (l1 - l2) / l1
    planarity   = (l2 - l3) / l1
    scattering  = l3 / l1
    verticality = 1 - |e3 . z|

``e3`` being the eigenvector of the smallest eigenvalue, so horizontal
surfaces score 0 and vertical ones 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import PointCloud
from .spatial import NeighborIndex

SHAPE_FEATURES = ("linearity", "planarity", "scattering", "verticality")
COLOR_FEATURES = ("r", "g", "b")

#: Neighborhoods whose largest eigenvalue is below this (m^2) get zero features.
MIN_EIGENVALUE = 1e-12

_CHUNK = 65536


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # (n, f)
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] != len(self.names):
            raise ValueError("feature matrix shape does not match feature names")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self) -> int:
        return len(self.values)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def select(self, names: tuple[str, ...] | list[str]) -> "FeatureMatrix":
        missing = [n for n in names if n not in self.names]
        if missing:
            raise ValueError(f"missing features: {', '.join(missing)}")
        cols = [self.names.index(n) for n in names]
        return FeatureMatrix(self.values[:, cols], tuple(names))

    def subset(self, index: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(self.values[index], self.names)


def sorted_eigh(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending, clipped at 0) and column eigenvectors of 3x3 symmetric matrices.

    Eigenvector signs are fixed so the z component is nonnegative, falling
    back to x then y when z is zero.
    """
    w, v = np.linalg.eigh(cov)
    w = np.clip(w[..., ::-1], 0.0, None)
    v = v[..., ::-1].copy()
    comp = v[..., 2, :]
    sign = np.sign(comp)
    for axis in (0, 1):
        sign = np.where(sign == 0, np.sign(v[..., axis, :]), sign)
    sign[sign == 0] = 1.0
    v *= sign[..., None, :]
    return w, v


def shape_features(eigvals: np.ndarray, eigvecs: np.ndarray) -> np.ndarray:
    """``(n, 4)`` linearity, planarity, scattering, verticality from sorted eigen pairs."""
    l1, l2, l3 = eigvals[:, 0], eigvals[:, 1], eigvals[:, 2]
    out = np.zeros((len(eigvals), 4))
    ok = l1 >= MIN_EIGENVALUE
    inv = 1.0 / l1[ok]
    out[ok, 0] = (l1[ok] - l2[ok]) * inv
    out[ok, 1] = (l2[ok] - l3[ok]) * inv
    out[ok, 2] = l3[ok] * inv
    out[ok, 3] = 1.0 - np.abs(eigvecs[ok, 2, 2])
    return out


def neighborhood_covariance(positions: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    pts = positions[neighbors]  # (m, k, 3)
    centered = pts - pts.mean(axis=1, keepdims=True)
    return np.einsum("mki,mkj->mij", centered, centered) / neighbors.shape[1]


def eigen_features(
    cloud: PointCloud,
    k: int = 14,
    *,
    index: Optional[NeighborIndex] = None,
    z_ref: Optional[float] = None,
    workers: int = 1,
) -> FeatureMatrix:
    """Shape features, elevation above ``z_ref`` (default: the cloud's min z) and
    colors scaled to [0, 1] when present."""
    n = len(cloud)
    if k < 3:
        raise ValueError("neighborhood size k must be at least 3")
    if k > n:
        raise ValueError(f"k={k} exceeds cloud size {n}")
    if index is None:
        index = NeighborIndex(cloud.positions, workers=workers)
    pos = cloud.positions
    shape = np.empty((n, 4))
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        nbrs = index.knn_batch(pos[start:stop], k)
        w, v = sorted_eigh(neighborhood_covariance(pos, nbrs))
        shape[start:stop] = shape_features(w, v)
    z0 = pos[:, 2].min() if z_ref is None else z_ref
    cols = [shape, (pos[:, 2] - z0)[:, None]]
    names = list(SHAPE_FEATURES) + ["elevation"]
    if cloud.colors is not None:
        cols.append(cloud.colors.astype(np.float64) / 255.0)
        names += COLOR_FEATURES
    return FeatureMatrix(np.hstack(cols), tuple(names))
