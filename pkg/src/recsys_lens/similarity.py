"""Raw-cosine similarity matrices, similarity radii, DPP scores, and heatmap grids."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .data import RatingsDataset, popularity_order

log = logging.getLogger(__name__)

MODES = ("user_user", "item_item")
HEATMAP_CUTOFF = 4096
DET_CLAMP = 1e-12


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Symmetric sparse similarities; ``pairs`` holds (a, b) with a < b, sorted.

    Absent pairs have similarity 0. The diagonal is implicitly 1 for every
    entity flagged in ``active`` (it has at least one rating).
    """

    mode: str
    size: int
    pairs: dict[tuple[int, int], float]
    active: tuple[bool, ...]

    def get(self, a: int, b: int) -> float:
        if a == b:
            return 1.0 if self.active[a] else 0.0
        if a > b:
            a, b = b, a
        return self.pairs.get((a, b), 0.0)

    def neighbors(self) -> dict[int, dict[int, float]]:
        """Adjacency view: entity -> {other entity: similarity}."""
        rows: dict[int, dict[int, float]] = {}
        for (a, b), s in self.pairs.items():
            rows.setdefault(a, {})[b] = s
            rows.setdefault(b, {})[a] = s
        return rows

    def to_csv(self) -> str:
        lines = ["a,b,sim"]
        lines += [f"{a},{b},{s:.17g}" for (a, b), s in self.pairs.items()]
        return "\n".join(lines) + "\n"


def _rating_matrix(dataset: RatingsDataset, mode: str) -> sp.csr_matrix:
    if mode == "user_user":
        rows, cols, shape = dataset.users, dataset.items, (dataset.m, dataset.n)
    elif mode == "item_item":
        rows, cols, shape = dataset.items, dataset.users, (dataset.n, dataset.m)
    else:
        raise ValueError(f"unknown similarity mode {mode!r}; expected one of {MODES}")
    return sp.csr_matrix((dataset.ratings, (rows, cols)), shape=shape)


def similarity_matrix(dataset: RatingsDataset, mode: str = "user_user", min_support: int = 1) -> SimilarityMatrix:
    """Cosine over co-rated support, no mean-centering.

    sim(a, b) = sum_c R_ac R_bc / sqrt(sum_c R_ac^2 * sum_c R_bc^2), all sums
    over the items c rated by both a and b (users, for ``item_item``).
    Pairs with fewer than ``min_support`` shared ratings are absent.
    """
    if len(dataset) == 0:
        raise ValueError("similarity of an empty dataset")
    R = _rating_matrix(dataset, mode)
    B = R.copy()
    B.data = np.ones_like(B.data)
    R2 = R.multiply(R).tocsr()
    dot = sp.triu(R @ R.T, k=1).tocoo()
    support = (B @ B.T).tocsr()
    # norm_sq[a, b] = sum of R_ac^2 over items c that b also rated
    norm_sq = (R2 @ B.T).tocsr()
    active = tuple(bool(c) for c in np.diff(R.indptr) > 0)
    if dot.nnz == 0:
        return SimilarityMatrix(mode, R.shape[0], {}, active)
    a, b = dot.row.astype(np.int64), dot.col.astype(np.int64)
    order = np.lexsort((b, a))
    a, b, num = a[order], b[order], dot.data[order]
    sup = np.asarray(support[a, b]).ravel()
    na = np.asarray(norm_sq[a, b]).ravel()
    nb = np.asarray(norm_sq[b, a]).ravel()
    keep = (sup >= min_support) & (num > 0)
    sims = np.clip(num[keep] / np.sqrt(na[keep] * nb[keep]), 0.0, 1.0)
    pairs = {(int(x), int(y)): float(s) for x, y, s in zip(a[keep], b[keep], sims)}
    return SimilarityMatrix(mode, R.shape[0], pairs, active)


@dataclass(frozen=True, eq=False)
class RadiusVector:
    mode: str  # "user" or "item"
    radii: np.ndarray


def similarity_radius(sim: SimilarityMatrix) -> RadiusVector:
    """Per entity, the number of other entities with similarity > 0."""
    radii = np.zeros(sim.size, dtype=np.int64)
    for (a, b), s in sim.pairs.items():
        if s > 0:
            radii[a] += 1
            radii[b] += 1
    return RadiusVector("user" if sim.mode == "user_user" else "item", radii)


@dataclass(frozen=True)
class RadiusProfile:
    mode: str
    entities: tuple[int, ...]  # in popularity-rank order
    pairs: tuple[tuple[int, int], ...]  # (rank, radius)
    skewness: float  # max radius / median positive radius

    def to_csv(self, ids: Sequence[str] | None = None) -> str:
        lines = ["entity,popularity_rank,radius"]
        for e, (rank, r) in zip(self.entities, self.pairs):
            lines.append(f"{ids[e] if ids is not None else e},{rank},{r}")
        return "\n".join(lines) + "\n"


def radius_vs_popularity(dataset: RatingsDataset, radii: RadiusVector) -> RadiusProfile:
    counts = dataset.counts(radii.mode)
    if len(counts) != len(radii.radii):
        raise ValueError("radii were not computed from this dataset")
    order = popularity_order(counts)
    pairs = tuple((rank, int(radii.radii[e])) for rank, e in enumerate(order, start=1))
    pos = radii.radii[radii.radii > 0]
    skew = float(radii.radii.max() / np.median(pos)) if len(pos) else math.nan
    return RadiusProfile(radii.mode, tuple(int(e) for e in order), pairs, skew)


def determinant(M: np.ndarray) -> float:
    """Determinant by Gaussian elimination with partial pivoting."""
    A = np.array(M, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("determinant needs a square matrix")
    det = 1.0
    for col in range(n):
        p = col + int(np.argmax(np.abs(A[col:, col])))
        if A[p, col] == 0.0:
            return 0.0
        if p != col:
            A[[col, p]] = A[[p, col]]
            det = -det
        det *= A[col, col]
        below = A[col + 1 :, col] / A[col, col]
        A[col + 1 :, col:] -= np.outer(below, A[col, col:])
    return det


def selection_kernel(sim: SimilarityMatrix, selection: Sequence[int]) -> np.ndarray:
    sel = [int(e) for e in selection]
    k = len(sel)
    S = np.eye(k)
    for x in range(k):
        for y in range(x + 1, k):
            S[x, y] = S[y, x] = sim.get(sel[x], sel[y])
    return S


def dpp_diversity(sim: SimilarityMatrix, selection: Sequence[int]) -> float:
    """det of the selection's similarity submatrix (unit diagonal).

    1 for mutually dissimilar entities, 0 when two are perfectly similar.
    Values in (-1e-12, 0) are rounding noise and come back as 0.
    """
    sel = list(selection)
    if not sel:
        raise ValueError("selection must be non-empty")
    if len(set(sel)) != len(sel):
        raise ValueError("selection contains duplicate entities")
    if any(not 0 <= e < sim.size for e in sel):
        raise ValueError("selection index out of range")
    det = determinant(selection_kernel(sim, sel))
    if -DET_CLAMP < det < 0.0:
        return 0.0
    return det


@dataclass(frozen=True)
class HeatmapGrid:
    values: np.ndarray
    entities: tuple[int, ...]

    def to_csv(self) -> str:
        return "\n".join(",".join(f"{v:.6g}" for v in row) for row in self.values) + "\n"


def heatmap_data(
    sim: SimilarityMatrix,
    order: str = "by_index",
    counts: np.ndarray | None = None,
    *,
    cutoff: int = HEATMAP_CUTOFF,
    top_n: int | None = None,
) -> HeatmapGrid:
    """Dense similarity grid with unit diagonal.

    ``by_popularity`` orders entities by descending ``counts`` (ties by
    index). Matrices larger than ``cutoff`` need ``top_n``, which keeps the
    ``top_n`` most popular entities.
    """
    if order not in ("by_index", "by_popularity"):
        raise ValueError(f"unknown heatmap order {order!r}")
    if (order == "by_popularity" or top_n is not None) and counts is None:
        raise ValueError("popularity ordering needs rating counts")
    if sim.size > cutoff and top_n is None:
        raise ValueError(f"{sim.size} entities exceed the dense cutoff {cutoff}; pass top_n")
    if top_n is not None:
        ents = list(popularity_order(counts)[:top_n])
        if order == "by_index":
            ents.sort()
    elif order == "by_popularity":
        ents = list(popularity_order(counts))
    else:
        ents = list(range(sim.size))
    pos = {int(e): k for k, e in enumerate(ents)}
    grid = np.eye(len(ents))
    for (a, b), s in sim.pairs.items():
        if a in pos and b in pos:
            grid[pos[a], pos[b]] = grid[pos[b], pos[a]] = s
    return HeatmapGrid(grid, tuple(int(e) for e in ents))
