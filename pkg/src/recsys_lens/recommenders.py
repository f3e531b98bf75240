"""Matrix-factorization trainers, baseline predictors, and MAE evaluation.

All factor models start from U, V with entries uniform on (0, 1/sqrt(k)] so
every initial dot product lies in (0, 1]. Each SGD step samples one
training point with replacement and updates U_i and V_j from their
pre-step values.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import RatingsDataset
from .prng import counter_uniform

log = logging.getLogger(__name__)

DOT_FLOOR = 1e-6
ALGORITHMS = ("mf", "random", "zeromat", "dotmat", "dotmat_hybrid", "user_cf", "item_cf")
FIGURE_ROSTER = ("mf", "random", "zeromat", "dotmat", "dotmat_hybrid")
THREADS_ENV = "RECSYS_LENS_THREADS"


class TrainingDiverged(ArithmeticError):
    def __init__(self, algorithm: str, step: int) -> None:
        super().__init__(
            f"{algorithm} diverged at step {step} (non-finite parameters); "
            "try a smaller learning rate"
        )
        self.algorithm = algorithm
        self.step = step


class Predictor:
    """Anything that maps (user index, item index) to a rating estimate."""

    r_min: float = 1.0
    r_max: float = 5.0

    def predict(self, user: int, item: int) -> float:
        raise NotImplementedError

    def predict_many(self, users: Sequence[int], items: Sequence[int]) -> np.ndarray:
        return np.array([self.predict(int(u), int(i)) for u, i in zip(users, items)])

    def _clamp(self, x: float) -> float:
        return min(max(x, self.r_min), self.r_max)


def dotmat_f(x):
    """x**x, the DotMat transfer function."""
    return x**x


def dotmat_fprime(x):
    """d/dx x**x = x**x (ln x + 1)."""
    return x**x * (np.log(x) + 1.0)


@dataclass(eq=False)
class FactorModel(Predictor):
    U: np.ndarray
    V: np.ndarray
    algorithm: str = "mf"
    gamma: float = 0.01
    iterations: int = 0
    seed: int = 0
    lam: float = 0.0
    r_min: float = 1.0
    r_max: float = 5.0
    # ZeroMat only: min and max of U_i.V_j over all pairs, for rescaling
    scale: tuple[float, float] | None = None
    iters_pre: int = 0

    @property
    def k(self) -> int:
        return self.U.shape[1]

    def scores(self, users, items) -> np.ndarray:
        return np.einsum("ij,ij->i", self.U[np.asarray(users)], self.V[np.asarray(items)])

    def predict_many(self, users, items) -> np.ndarray:
        d = self.scores(users, items)
        if self.algorithm == "zeromat":
            lo, hi = self.scale if self.scale else (0.0, 0.0)
            if hi > lo:
                out = self.r_min + (d - lo) / (hi - lo) * (self.r_max - self.r_min)
            else:
                out = np.full_like(d, (self.r_min + self.r_max) / 2.0)
        elif self.algorithm == "dotmat":
            out = dotmat_f(np.clip(d, DOT_FLOOR, 1.0)) * self.r_max
        else:
            out = d
        return np.clip(out, self.r_min, self.r_max)

    def predict(self, user: int, item: int) -> float:
        return float(self.predict_many([user], [item])[0])

    def to_json(self) -> str:
        """JSON with reals at 17 significant digits (exact float round trip)."""

        def num(x: float) -> str:
            return format(float(x), ".17g")

        def mat(a: np.ndarray) -> str:
            return "[" + ",".join("[" + ",".join(num(x) for x in row) + "]" for row in a) + "]"

        scale = "null" if self.scale is None else f"[{num(self.scale[0])},{num(self.scale[1])}]"
        return (
            "{"
            f'"algorithm":{json.dumps(self.algorithm)},'
            f'"k":{self.k},'
            f'"gamma":{num(self.gamma)},'
            f'"lambda":{num(self.lam)},'
            f'"seed":{self.seed},'
            f'"iterations":{self.iterations},'
            f'"iters_pre":{self.iters_pre},'
            f'"r_min":{num(self.r_min)},'
            f'"r_max":{num(self.r_max)},'
            f'"scale":{scale},'
            f'"U":{mat(self.U)},'
            f'"V":{mat(self.V)}'
            "}\n"
        )

    @classmethod
    def from_json(cls, text: str) -> "FactorModel":
        d = json.loads(text)
        k = int(d["k"])
        return cls(
            U=np.array(d["U"], dtype=np.float64).reshape(-1, k),
            V=np.array(d["V"], dtype=np.float64).reshape(-1, k),
            algorithm=d["algorithm"],
            gamma=float(d["gamma"]),
            iterations=int(d["iterations"]),
            seed=int(d["seed"]),
            lam=float(d.get("lambda", 0.0)),
            r_min=float(d.get("r_min", 1.0)),
            r_max=float(d.get("r_max", 5.0)),
            scale=tuple(d["scale"]) if d.get("scale") else None,
            iters_pre=int(d.get("iters_pre", 0)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def init_factors(m: int, n: int, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """U (m x k), V (n x k) with entries uniform on (0, 1/sqrt(k)]."""
    if k < 1:
        raise ValueError("latent dimension k must be >= 1")
    c = 1.0 / math.sqrt(k)
    U = (1.0 - rng.random((m, k))) * c
    V = (1.0 - rng.random((n, k))) * c
    return U, V


def _draw(rng: np.random.Generator, high: int, size: int) -> np.ndarray:
    # size 0 must not advance the stream: hybrid phases rely on it
    if size <= 0:
        return np.empty(0, dtype=np.int64)
    return rng.integers(0, high, size=size)


def _check_params(k: int, gamma: float, iterations: int) -> None:
    if k < 1:
        raise ValueError("k must be >= 1")
    if gamma < 0 or not math.isfinite(gamma):
        raise ValueError("gamma must be a finite non-negative number")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")


def _require_data(train: RatingsDataset) -> None:
    if len(train) == 0:
        raise ValueError("training set is empty")


def _sgd_mf(U, V, train: RatingsDataset, gamma, lam, iterations, rng, algorithm="mf"):
    picks = _draw(rng, len(train), iterations)
    users, items, ratings = train.users, train.items, train.ratings
    for step, t in enumerate(picks):
        i, j = users[t], items[t]
        ui = U[i].copy()
        vj = V[j]
        e = ratings[t] - ui @ vj
        if not math.isfinite(e):
            raise TrainingDiverged(algorithm, step)
        U[i] = ui + gamma * (e * vj - lam * ui)
        V[j] = vj + gamma * (e * ui - lam * vj)
    if not (np.isfinite(U).all() and np.isfinite(V).all()):
        raise TrainingDiverged(algorithm, iterations)


def _sgd_dotmat(U, V, train: RatingsDataset, gamma, iterations, rng, algorithm="dotmat"):
    picks = _draw(rng, len(train), iterations)
    users, items = train.users, train.items
    targets = train.ratings / train.r_max
    for step, t in enumerate(picks):
        i, j = users[t], items[t]
        ui = U[i].copy()
        vj = V[j]
        d = ui @ vj
        if not math.isfinite(d):
            raise TrainingDiverged(algorithm, step)
        x = min(max(d, DOT_FLOOR), 1.0)
        fx = x**x
        e = fx - targets[t]
        if e == 0.0:
            continue
        g = gamma * math.copysign(1.0, e) * fx * (math.log(x) + 1.0)
        if d <= DOT_FLOOR and g > 0.0:
            # lower clamp active and the step would push U_i.V_j further below it
            continue
        U[i] = ui - g * vj
        V[j] = vj - g * ui
    if not (np.isfinite(U).all() and np.isfinite(V).all()):
        raise TrainingDiverged(algorithm, iterations)


def train_mf(
    train: RatingsDataset,
    k: int = 10,
    gamma: float = 0.01,
    lam: float = 0.01,
    iterations: int = 10_000,
    seed: int = 0,
) -> FactorModel:
    """Classic MF: SGD on squared error with L2 weight ``lam``."""
    _require_data(train)
    _check_params(k, gamma, iterations)
    rng = np.random.default_rng(seed)
    U, V = init_factors(train.m, train.n, k, rng)
    _sgd_mf(U, V, train, gamma, lam, iterations, rng)
    return FactorModel(U, V, "mf", gamma, iterations, seed, lam, train.r_min, train.r_max)


def train_zeromat(
    m: int,
    n: int,
    k: int = 10,
    gamma: float = 0.01,
    iterations: int = 10_000,
    seed: int = 0,
    *,
    r_min: float = 1.0,
    r_max: float = 5.0,
) -> FactorModel:
    """ZeroMat: SGD on the Zipf-prior likelihood, touching no rating data.

    Each step samples (i, j) uniformly over all user/item pairs and applies
    U_i += gamma (V_j / U_i.V_j - 2 U_i), V_j += gamma (U_i / V_j.U_i - 2 V_j).
    A dot product closer to 0 than DOT_FLOOR is replaced by +-DOT_FLOOR
    (sign kept) in the denominator.
    """
    if m < 1 or n < 1:
        raise ValueError("m and n must be >= 1")
    _check_params(k, gamma, iterations)
    rng = np.random.default_rng(seed)
    U, V = init_factors(m, n, k, rng)
    rows = _draw(rng, m, iterations)
    cols = _draw(rng, n, iterations)
    for step in range(iterations):
        i, j = rows[step], cols[step]
        ui = U[i].copy()
        vj = V[j]
        d = ui @ vj
        if not math.isfinite(d):
            raise TrainingDiverged("zeromat", step)
        if abs(d) < DOT_FLOOR:
            d = math.copysign(DOT_FLOOR, d)
        U[i] = ui + gamma * (vj / d - 2.0 * ui)
        V[j] = vj + gamma * (ui / d - 2.0 * vj)
    if not (np.isfinite(U).all() and np.isfinite(V).all()):
        raise TrainingDiverged("zeromat", iterations)
    return FactorModel(
        U, V, "zeromat", gamma, iterations, seed, 0.0, r_min, r_max, scale=_score_range(U, V)
    )


def _score_range(U: np.ndarray, V: np.ndarray, block: int = 1024) -> tuple[float, float]:
    lo, hi = math.inf, -math.inf
    for start in range(0, U.shape[0], block):
        s = U[start : start + block] @ V.T
        lo = min(lo, float(s.min()))
        hi = max(hi, float(s.max()))
    return lo, hi


def train_dotmat(
    train: RatingsDataset,
    k: int = 10,
    gamma: float = 0.01,
    iterations: int = 10_000,
    seed: int = 0,
) -> FactorModel:
    """DotMat: sign-subgradient SGD on |x**x - R/R_max| with x = clamp(U_i.V_j).

    x**x tends to 1 as x -> 0+, so high ratings pull the dot product toward
    the floor. Once U_i.V_j sits at or below DOT_FLOOR, steps that would
    lower it further are skipped (projected subgradient); without that the
    factors grow without bound.
    """
    _require_data(train)
    _check_params(k, gamma, iterations)
    rng = np.random.default_rng(seed)
    U, V = init_factors(train.m, train.n, k, rng)
    _sgd_dotmat(U, V, train, gamma, iterations, rng)
    return FactorModel(U, V, "dotmat", gamma, iterations, seed, 0.0, train.r_min, train.r_max)


def train_dotmat_hybrid(
    train: RatingsDataset,
    k: int = 10,
    gamma: float = 0.01,
    lam: float = 0.01,
    iters_pre: int = 10_000,
    iters_main: int = 10_000,
    seed: int = 0,
) -> FactorModel:
    """DotMat warm start followed by classic MF on the same factors.

    Both phases share one generator: initialization, then ``iters_pre``
    DotMat draws, then ``iters_main`` MF draws. With ``iters_pre=0`` the
    result equals :func:`train_mf`; with ``iters_main=0`` it equals
    :func:`train_dotmat` (up to the ``algorithm`` tag).
    """
    _require_data(train)
    _check_params(k, gamma, iters_pre)
    _check_params(k, gamma, iters_main)
    rng = np.random.default_rng(seed)
    U, V = init_factors(train.m, train.n, k, rng)
    _sgd_dotmat(U, V, train, gamma, iters_pre, rng, "dotmat_hybrid")
    if iters_main == 0:
        algo = "dotmat"
    else:
        algo = "mf"
        _sgd_mf(U, V, train, gamma, lam, iters_main, rng, "dotmat_hybrid")
    model = FactorModel(U, V, algo, gamma, iters_pre + iters_main, seed, lam, train.r_min, train.r_max)
    model.iters_pre = iters_pre
    return model


@dataclass(frozen=True)
class RandomPlacement(Predictor):
    """Uniform rating on [r_min, r_max], a pure function of (seed, user, item)."""

    seed: int = 0
    r_min: float = 1.0
    r_max: float = 5.0

    def predict(self, user: int, item: int) -> float:
        u = counter_uniform(self.seed, user, item)
        return self.r_min + u * (self.r_max - self.r_min)


def predict_random(seed: int, r_min: float = 1.0, r_max: float = 5.0) -> RandomPlacement:
    return RandomPlacement(seed, r_min, r_max)


@dataclass(frozen=True)
class CFPrediction:
    value: float
    cold: bool = False
    neighbors: int = 0


class NeighborhoodCF(Predictor):
    """User- or item-based CF over raw-cosine similarities.

    For ``user_based``, the neighbors of user u for item j are the users who
    rated j and have positive similarity to u; the ``K`` most similar
    (ties by lower index) vote with similarity weights. ``item_based`` is
    the mirror image. No neighbor gives the global training mean.
    """

    def __init__(self, train: RatingsDataset, mode: str = "user_based", K: int = 20, sim=None) -> None:
        from .similarity import similarity_matrix

        if mode not in ("user_based", "item_based"):
            raise ValueError(f"unknown CF mode {mode!r}")
        if K < 1:
            raise ValueError("K must be >= 1")
        _require_data(train)
        self.mode = mode
        self.K = K
        self.r_min, self.r_max = train.r_min, train.r_max
        self.global_mean = train.global_mean()
        want = "user_user" if mode == "user_based" else "item_item"
        self.sim = sim if sim is not None else similarity_matrix(train, want)
        if self.sim.mode != want:
            raise ValueError(f"{mode} CF needs a {want} similarity matrix")
        self.rows = self.sim.neighbors()
        # raters[target] maps each entity that rated target to its rating
        self.raters: dict[int, dict[int, float]] = {}
        ent, tgt = (train.users, train.items) if mode == "user_based" else (train.items, train.users)
        for e, t, r in zip(ent.tolist(), tgt.tolist(), train.ratings.tolist()):
            self.raters.setdefault(t, {})[e] = r
        self.size = self.sim.size
        self.other = train.n if mode == "user_based" else train.m

    def explain(self, user: int, item: int) -> CFPrediction:
        entity, target = (user, item) if self.mode == "user_based" else (item, user)
        if not (0 <= entity < self.size and 0 <= target < self.other):
            return CFPrediction(self._clamp(self.global_mean), cold=True)
        row = self.rows.get(entity, {})
        cands = [(row[e], e, r) for e, r in self.raters.get(target, {}).items() if e != entity and e in row]
        if not cands:
            return CFPrediction(self._clamp(self.global_mean))
        cands.sort(key=lambda c: (-c[0], c[1]))
        top = cands[: self.K]
        num = math.fsum(s * r for s, _, r in top)
        den = math.fsum(s for s, _, _ in top)
        return CFPrediction(self._clamp(num / den), neighbors=len(top))

    def predict(self, user: int, item: int) -> float:
        return self.explain(user, item).value


def cf_predict(train: RatingsDataset, mode: str, K: int, user: int, item: int) -> CFPrediction:
    return NeighborhoodCF(train, mode, K).explain(user, item)


def evaluate_mae(predictor: Predictor, test: RatingsDataset) -> float:
    """Mean absolute error over the test triplets (exactly rounded sum)."""
    if len(test) == 0:
        raise ValueError("test set is empty")
    pred = predictor.predict_many(test.users, test.items)
    return math.fsum(np.abs(pred - test.ratings).tolist()) / len(test)


@dataclass
class TrainConfig:
    k: int = 10
    gamma: float = 0.02
    lam: float = 0.01
    iterations: int = 50_000
    iters_pre: int = 20_000
    neighbors: int = 20
    seed: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def train_algorithm(algorithm: str, train: RatingsDataset | None, cfg: TrainConfig, *, m=None, n=None) -> Predictor:
    """Dispatch one training run; ``train`` may be None only for ZeroMat and random."""
    r_min = train.r_min if train is not None else 1.0
    r_max = train.r_max if train is not None else 5.0
    if algorithm == "random":
        return predict_random(cfg.seed, r_min, r_max)
    if algorithm == "zeromat":
        m = train.m if m is None else m
        n = train.n if n is None else n
        return train_zeromat(m, n, cfg.k, cfg.gamma, cfg.iterations, cfg.seed, r_min=r_min, r_max=r_max)
    if train is None:
        raise ValueError(f"{algorithm} requires training data")
    if algorithm == "mf":
        return train_mf(train, cfg.k, cfg.gamma, cfg.lam, cfg.iterations, cfg.seed)
    if algorithm == "dotmat":
        return train_dotmat(train, cfg.k, cfg.gamma, cfg.iterations, cfg.seed)
    if algorithm == "dotmat_hybrid":
        return train_dotmat_hybrid(train, cfg.k, cfg.gamma, cfg.lam, cfg.iters_pre, cfg.iterations, cfg.seed)
    if algorithm in ("user_cf", "item_cf"):
        mode = "user_based" if algorithm == "user_cf" else "item_based"
        return NeighborhoodCF(train, mode, cfg.neighbors)
    raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")


@dataclass
class SeriesTrace:
    """MAE per grid value; failed grid points hold NaN and an entry in ``failures``."""

    label: str
    xs: list[float]
    ys: list[float]
    failures: dict[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.xs) != len(self.ys) or not self.xs:
            raise ValueError("trace needs equal, non-zero numbers of xs and ys")

    def values(self) -> np.ndarray:
        """The finite MAE values in grid order (failed points dropped)."""
        y = np.asarray(self.ys, dtype=np.float64)
        return y[np.isfinite(y)]

    def to_csv(self) -> str:
        lines = ["x,mae"]
        for x, y in zip(self.xs, self.ys):
            lines.append(f"{float(x)!r}," + (f"{float(y)!r}" if math.isfinite(y) else ""))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, label: str = "") -> "SeriesTrace":
        rows = [ln.split(",") for ln in text.strip().splitlines()[1:]]
        xs = [float(r[0]) for r in rows]
        ys = [float(r[1]) if len(r) > 1 and r[1] else math.nan for r in rows]
        failures = {k: "missing" for k, y in enumerate(ys) if not math.isfinite(y)}
        return cls(label, xs, ys, failures)

    @classmethod
    def from_values(cls, ys: Sequence[float], label: str = "") -> "SeriesTrace":
        return cls(label, [float(k) for k in range(len(ys))], [float(y) for y in ys])


def thread_count(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get(THREADS_ENV)
    return max(1, int(env)) if env else 1


def mae_grid(
    algorithm: str,
    train: RatingsDataset,
    test: RatingsDataset,
    grid: Sequence[float],
    cfg: TrainConfig | None = None,
    mode: str = "rate",
    threads: int | None = None,
) -> SeriesTrace:
    """Train once per grid value and record test MAE.

    ``mode='rate'`` sets gamma to each grid value; ``mode='steps'`` sets the
    iteration count (the MF phase for the hybrid). Grid point g runs with
    seed ``cfg.seed + g``; results are collected in grid order, so the
    trace does not depend on the thread count.
    """
    if not grid:
        raise ValueError("grid must be non-empty")
    if mode not in ("rate", "steps"):
        raise ValueError(f"unknown grid mode {mode!r}")
    cfg = cfg or TrainConfig()

    def point(idx: int) -> tuple[float, str | None]:
        x = grid[idx]
        if mode == "rate":
            c = replace(cfg, gamma=float(x), seed=cfg.seed + idx)
        else:
            c = replace(cfg, iterations=int(x), seed=cfg.seed + idx)
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                return evaluate_mae(train_algorithm(algorithm, train, c), test), None
        except (TrainingDiverged, FloatingPointError, OverflowError) as exc:
            log.warning("grid point %d (x=%g) failed: %s", idx, x, exc)
            return math.nan, str(exc)

    n = thread_count(threads)
    if n == 1:
        results = [point(k) for k in range(len(grid))]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(point, range(len(grid))))
    failures = {k: msg for k, (_, msg) in enumerate(results) if msg is not None}
    return SeriesTrace(algorithm, [float(x) for x in grid], [y for y, _ in results], failures)
