"""Seeded synthetic Zipf rating data bundled as the reference mini-dataset.

Item popularity and user activity both follow Zipf laws over rank, and the
rating values themselves are Zipf over value rank (5 stars most common,
then 4, ...). A rank-2 latent taste model decides which rating a given
(user, item) pair receives, so the data carries structure that matrix
factorization and neighborhood methods can pick up.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .data import RatingsDataset, load_ratings, parse_ratings

MINI_SEED = 20220401
MINI_USERS = 100
MINI_ITEMS = 240
MINI_NAME = "mini"


def zipf_weights(n: int, exponent: float = 1.0) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** exponent
    return w / w.sum()


def generate(
    seed: int = MINI_SEED,
    n_users: int = MINI_USERS,
    n_items: int = MINI_ITEMS,
    mean_activity: float = 20.0,
) -> str:
    """Return the mini-dataset as canonical CSV text."""
    rng = np.random.default_rng(seed)
    item_p = zipf_weights(n_items, 1.0)
    # user activity: Zipf over user rank, rescaled to the requested mean, at least 3
    act = zipf_weights(n_users, 0.6) * mean_activity * n_users
    act = np.clip(np.round(act), 3, n_items).astype(int)
    user_perm = rng.permutation(n_users)
    item_perm = rng.permutation(n_items)

    taste_u = rng.normal(size=(n_users, 2))
    taste_i = rng.normal(size=(n_items, 2))
    # rating values 5,4,3,2,1 with Zipf probabilities over value rank
    value_p = zipf_weights(5, 1.0)
    cut = np.cumsum(value_p)[:-1]

    lines = ["user,item,rating,timestamp"]
    t0 = 1_000_000_000
    for rank in range(n_users):
        u = int(user_perm[rank])
        chosen = rng.choice(n_items, size=int(act[rank]), replace=False, p=item_p)
        chosen.sort()
        score = taste_i[chosen] @ taste_u[u] + 0.5 * rng.normal(size=len(chosen))
        # map score quantiles of the standard normal-ish spread onto the value law
        q = 1.0 / (1.0 + np.exp(-score))
        vals = 5 - np.searchsorted(cut, 1.0 - q)
        for item_rank, v in zip(chosen, vals):
            ts = t0 + int(rng.integers(0, 86_400 * 365))
            lines.append(f"u{u + 1},i{int(item_perm[item_rank]) + 1},{float(v):.1f},{ts}")
    return "\n".join(lines) + "\n"


def mini_path() -> Path:
    return Path(str(resources.files("recsys_lens").joinpath("data", "mini.csv")))


def load_mini() -> RatingsDataset:
    return load_ratings(mini_path(), "comoda_csv")


def generated_mini() -> RatingsDataset:
    return parse_ratings(generate().splitlines(keepends=True), "comoda_csv")
