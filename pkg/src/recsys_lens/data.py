"""Rating-file ingestion, the canonical sparse dataset, and seeded splits."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .prng import SplitMix64

log = logging.getLogger(__name__)

FORMATS = ("movielens_dat", "movielens_tab", "comoda_csv")
DEFAULT_R_MIN = 1.0
DEFAULT_R_MAX = 5.0


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class IngestReport:
    lines: int = 0
    duplicates: int = 0
    malformed: int = 0
    out_of_range: int = 0

    def as_dict(self) -> dict:
        return {
            "lines": self.lines,
            "duplicates": self.duplicates,
            "malformed": self.malformed,
            "out_of_range": self.out_of_range,
        }


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RatingsDataset:
    """Sparse (user, item, rating, timestamp) triplets over dense indices.

    ``users``/``items``/``ratings``/``timestamps`` are parallel read-only
    arrays; a timestamp of -1 means "absent". ``user_ids``/``item_ids`` are
    the inverse of the index maps (external id of dense index).
    """

    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    r_min: float = DEFAULT_R_MIN
    r_max: float = DEFAULT_R_MAX
    report: IngestReport | None = field(default=None, compare=False)

    @classmethod
    def from_triplets(
        cls,
        triplets: Iterable[Sequence],
        *,
        m: int | None = None,
        n: int | None = None,
        r_min: float = DEFAULT_R_MIN,
        r_max: float = DEFAULT_R_MAX,
    ) -> "RatingsDataset":
        """Build from dense-index triplets ``(u, i, r[, ts])``; ids are str(index)."""
        rows = [tuple(t) for t in triplets]
        users = np.array([int(t[0]) for t in rows], dtype=np.int64)
        items = np.array([int(t[1]) for t in rows], dtype=np.int64)
        ratings = np.array([float(t[2]) for t in rows], dtype=np.float64)
        ts = np.array(
            [int(t[3]) if len(t) > 3 and t[3] is not None else -1 for t in rows],
            dtype=np.int64,
        )
        if m is None:
            m = int(users.max()) + 1 if len(rows) else 0
        if n is None:
            n = int(items.max()) + 1 if len(rows) else 0
        return cls(
            user_ids=tuple(str(u) for u in range(m)),
            item_ids=tuple(str(i) for i in range(n)),
            users=_readonly(users),
            items=_readonly(items),
            ratings=_readonly(ratings),
            timestamps=_readonly(ts),
            r_min=r_min,
            r_max=r_max,
        )

    @property
    def m(self) -> int:
        return len(self.user_ids)

    @property
    def n(self) -> int:
        return len(self.item_ids)

    def __len__(self) -> int:
        return len(self.ratings)

    @property
    def user_index_map(self) -> dict[str, int]:
        return {u: k for k, u in enumerate(self.user_ids)}

    @property
    def item_index_map(self) -> dict[str, int]:
        return {i: k for k, i in enumerate(self.item_ids)}

    def triplets(self) -> Iterator[tuple[int, int, float, int | None]]:
        for u, i, r, t in zip(self.users, self.items, self.ratings, self.timestamps):
            yield int(u), int(i), float(r), (int(t) if t >= 0 else None)

    def subset(self, positions: Sequence[int] | np.ndarray) -> "RatingsDataset":
        """Triplets at ``positions`` (in that order), sharing this dataset's id maps."""
        pos = np.asarray(positions, dtype=np.int64)
        return RatingsDataset(
            user_ids=self.user_ids,
            item_ids=self.item_ids,
            users=_readonly(self.users[pos].copy()),
            items=_readonly(self.items[pos].copy()),
            ratings=_readonly(self.ratings[pos].copy()),
            timestamps=_readonly(self.timestamps[pos].copy()),
            r_min=self.r_min,
            r_max=self.r_max,
        )

    def global_mean(self) -> float:
        if len(self) == 0:
            return (self.r_min + self.r_max) / 2.0
        return float(self.ratings.mean())

    def counts(self, axis: str = "item") -> np.ndarray:
        """Number of ratings per item (``axis='item'``) or per user."""
        if axis == "item":
            return np.bincount(self.items, minlength=self.n)
        if axis == "user":
            return np.bincount(self.users, minlength=self.m)
        raise ValueError(f"unknown axis {axis!r}")

    def to_canonical_csv(self) -> str:
        buf = io.StringIO()
        buf.write("user,item,rating,timestamp\n")
        for u, i, r, t in self.triplets():
            ts = "" if t is None else str(t)
            buf.write(f"{self.user_ids[u]},{self.item_ids[i]},{r:.1f},{ts}\n")
        return buf.getvalue()

    def write_canonical(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_canonical_csv())


def _fields(fmt: str, lines: Iterable[str]) -> Iterator[list[str] | None]:
    """Yield raw field lists per data line (None for blank lines)."""
    if fmt == "movielens_dat":
        for line in lines:
            line = line.strip()
            yield line.split("::") if line else None
    elif fmt == "movielens_tab":
        for line in lines:
            line = line.strip()
            yield line.split("\t") if line else None
    elif fmt == "comoda_csv":
        reader = csv.reader(lines)
        header = next(reader, None)
        keep_ts = (
            header is not None
            and len(header) > 3
            and header[3].strip().lower() == "timestamp"
        )
        for row in reader:
            if not row or all(not c.strip() for c in row):
                yield None
            elif keep_ts:
                yield [c.strip() for c in row[:4]]
            else:
                yield [c.strip() for c in row[:3]]
    else:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def parse_ratings(
    lines: Iterable[str],
    fmt: str,
    *,
    r_min: float = DEFAULT_R_MIN,
    r_max: float = DEFAULT_R_MAX,
    known_users: Sequence[str] = (),
    known_items: Sequence[str] = (),
) -> RatingsDataset:
    """Parse rating lines of the given format into a :class:`RatingsDataset`.

    Ids are mapped to dense indices in first-seen order, after any
    ``known_users``/``known_items``. A repeated (user, item) pair keeps the
    last rating at the first pair's position. Malformed and out-of-range
    lines are skipped and counted.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    umap: dict[str, int] = {u: k for k, u in enumerate(known_users)}
    imap: dict[str, int] = {i: k for k, i in enumerate(known_items)}
    cells: dict[tuple[int, int], tuple[float, int]] = {}
    n_lines = duplicates = malformed = out_of_range = 0
    for parts in _fields(fmt, lines):
        if parts is None:
            continue
        n_lines += 1
        if len(parts) < 3 or not parts[0] or not parts[1]:
            malformed += 1
            continue
        try:
            rating = float(parts[2])
            ts = int(parts[3]) if len(parts) > 3 and parts[3] != "" else -1
        except ValueError:
            malformed += 1
            continue
        if not math.isfinite(rating):
            malformed += 1
            continue
        if rating < r_min or rating > r_max:
            out_of_range += 1
            continue
        u = umap.setdefault(parts[0], len(umap))
        i = imap.setdefault(parts[1], len(imap))
        if (u, i) in cells:
            duplicates += 1
        cells[(u, i)] = (rating, ts)
    if duplicates:
        log.warning("%d duplicate (user, item) ratings; kept last occurrence", duplicates)
    if malformed or out_of_range:
        log.warning("skipped %d malformed and %d out-of-range lines", malformed, out_of_range)
    if not cells:
        raise IngestError(
            f"no valid triplets ({n_lines} lines, {malformed} malformed, "
            f"{out_of_range} out of range)"
        )
    keys = list(cells)
    vals = list(cells.values())
    return RatingsDataset(
        user_ids=tuple(umap),
        item_ids=tuple(imap),
        users=_readonly(np.array([k[0] for k in keys], dtype=np.int64)),
        items=_readonly(np.array([k[1] for k in keys], dtype=np.int64)),
        ratings=_readonly(np.array([v[0] for v in vals], dtype=np.float64)),
        timestamps=_readonly(np.array([v[1] for v in vals], dtype=np.int64)),
        r_min=r_min,
        r_max=r_max,
        report=IngestReport(n_lines, duplicates, malformed, out_of_range),
    )


def load_ratings(
    path: str | Path,
    fmt: str,
    *,
    r_min: float = DEFAULT_R_MIN,
    r_max: float = DEFAULT_R_MAX,
) -> RatingsDataset:
    """Read a rating file. MovieLens-1M ``.dat`` files are latin-1 encoded."""
    path = Path(path)
    try:
        with open(path, encoding="latin-1", newline="") as fh:
            return parse_ratings(fh, fmt, r_min=r_min, r_max=r_max)
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc


def load_pair(
    train_path: str | Path,
    test_path: str | Path,
    fmt: str,
    *,
    r_min: float = DEFAULT_R_MIN,
    r_max: float = DEFAULT_R_MAX,
) -> tuple[RatingsDataset, RatingsDataset]:
    """Load a train and a test file onto one shared pair of id maps."""
    train = load_ratings(train_path, fmt, r_min=r_min, r_max=r_max)
    try:
        with open(test_path, encoding="latin-1", newline="") as fh:
            test = parse_ratings(
                fh, fmt, r_min=r_min, r_max=r_max,
                known_users=train.user_ids, known_items=train.item_ids,
            )
    except OSError as exc:
        raise IngestError(f"cannot read {test_path}: {exc}") from exc
    train = RatingsDataset(
        test.user_ids, test.item_ids, train.users, train.items, train.ratings,
        train.timestamps, r_min, r_max, train.report,
    )
    return train, test


@dataclass(frozen=True, eq=False)
class SplitPair:
    train: RatingsDataset
    test: RatingsDataset
    seed: int
    ratio: float


def train_size(total: int, ratio: float) -> int:
    # round() absorbs float noise such as 0.7 * 10 = 7.000000000000001
    return math.ceil(round(ratio * total, 9))


def split(dataset: RatingsDataset, ratio: float, seed: int) -> SplitPair:
    """Shuffle triplet positions with SplitMix64 Fisher-Yates; first ceil(ratio*N) train.

    Train and test keep the shuffled order, so the same (dataset, ratio,
    seed) always produces byte-identical outputs.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    order = list(range(len(dataset)))
    SplitMix64(seed).shuffle(order)
    cut = train_size(len(order), ratio)
    return SplitPair(
        train=dataset.subset(order[:cut]),
        test=dataset.subset(order[cut:]),
        seed=seed,
        ratio=ratio,
    )


def popularity_curve(dataset: RatingsDataset, mode: str = "item") -> list[tuple]:
    """Rank/count pairs for log-log popularity plots.

    ``mode='item'`` (or ``'user'``): entities sorted by descending rating
    count, ties by ascending index, as ``(rank, count)`` with rank from 1;
    entities without ratings are omitted. ``mode='rating_value'``:
    ``(rating value, frequency)`` for each distinct value, ascending.
    """
    if len(dataset) == 0:
        raise ValueError("popularity curve of an empty dataset")
    if mode == "rating_value":
        values, freq = np.unique(dataset.ratings, return_counts=True)
        return [(float(v), int(f)) for v, f in zip(values, freq)]
    counts = dataset.counts(mode)
    order = popularity_order(counts)
    return [(rank, int(counts[e])) for rank, e in enumerate(order, start=1) if counts[e] > 0]


def popularity_order(counts: np.ndarray) -> np.ndarray:
    """Entity indices by descending count, ties by ascending index."""
    return np.lexsort((np.arange(len(counts)), -np.asarray(counts)))
