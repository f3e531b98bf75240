"""Delay embedding of 1-D traces into point clouds, and cloud geometry."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .recommenders import SeriesTrace

EXACT_DIAMETER_MAX = 10_000
PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # shape (N, dim)
    tau: int = 1
    source_label: str = ""
    origin_len: int = 0

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def to_csv(self) -> str:
        header = ",".join("xyz"[: self.dim]) if self.dim <= 3 else ",".join(f"x{k}" for k in range(self.dim))
        rows = [",".join(f"{v:.17g}" for v in p) for p in self.points]
        return "\n".join([header, *rows]) + "\n"


def takens_embed(series: SeriesTrace | Sequence[float], dim: int = 2, tau: int = 1) -> PointCloud:
    """Point t is (y_t, y_{t+tau}, ..., y_{t+(dim-1)tau}), in series order.

    Failed (NaN) grid points of a trace are dropped before embedding.
    """
    if dim < 1 or tau < 1:
        raise ValueError("dim and tau must be >= 1")
    if isinstance(series, SeriesTrace):
        y, label = series.values(), series.label
    else:
        y, label = np.asarray(series, dtype=np.float64), ""
    span = (dim - 1) * tau
    if len(y) < span + 1:
        raise ValueError(f"series of length {len(y)} too short for dim={dim}, tau={tau}")
    count = len(y) - span
    pts = np.stack([y[k * tau : k * tau + count] for k in range(dim)], axis=1)
    return PointCloud(pts, tau, label, len(y))


@dataclass(frozen=True)
class CloudStats:
    diameter: float
    span: tuple[float, ...]
    centroid: tuple[float, ...]
    approximate: bool = False

    def to_json(self) -> str:
        d = {"diameter": self.diameter, "span": list(self.span), "centroid": list(self.centroid)}
        if self.approximate:
            d["approximate"] = True
        return json.dumps(d, sort_keys=True) + "\n"


def cloud_stats(cloud: PointCloud) -> CloudStats:
    """Exact diameter (max pairwise distance) up to EXACT_DIAMETER_MAX points.

    Larger clouds report the bounding-box diagonal, flagged approximate.
    """
    P = cloud.points
    if len(P) == 0:
        raise ValueError("empty point cloud")
    lo, hi = P.min(axis=0), P.max(axis=0)
    span = tuple(float(v) for v in hi - lo)
    centroid = tuple(float(v) for v in P.mean(axis=0))
    if len(P) > EXACT_DIAMETER_MAX:
        return CloudStats(float(np.linalg.norm(hi - lo)), span, centroid, approximate=True)
    best = 0.0
    for k in range(len(P) - 1):
        d2 = ((P[k + 1 :] - P[k]) ** 2).sum(axis=1)
        best = max(best, float(d2.max()))
    return CloudStats(math.sqrt(best), span, centroid)


def project_3d_to_2d(cloud: PointCloud, plane: str = "xy") -> PointCloud:
    if cloud.dim != 3:
        raise ValueError(f"projection needs a 3-D cloud, got dim={cloud.dim}")
    if plane not in PLANES:
        raise ValueError(f"unknown plane {plane!r}")
    return PointCloud(cloud.points[:, PLANES[plane]].copy(), cloud.tau, cloud.source_label, cloud.origin_len)
