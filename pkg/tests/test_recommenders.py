import inspect
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recsys_lens.data import RatingsDataset, split
from recsys_lens.recommenders import (
    DOT_FLOOR,
    FactorModel,
    NeighborhoodCF,
    Predictor,
    SeriesTrace,
    TrainConfig,
    TrainingDiverged,
    _sgd_dotmat,
    _sgd_mf,
    dotmat_f,
    dotmat_fprime,
    evaluate_mae,
    mae_grid,
    predict_random,
    train_algorithm,
    train_dotmat,
    train_dotmat_hybrid,
    train_mf,
    train_zeromat,
)

from conftest import rank_k_dataset


class _Fixed(Predictor):
    def __init__(self, values, r_min=1.0, r_max=5.0):
        self.values = values
        self.r_min, self.r_max = r_min, r_max

    def predict(self, user, item):
        return self.values[(user, item)]


class _Const(Predictor):
    def __init__(self, c):
        self.c = c
        self.r_min, self.r_max = 1.0, 5.0

    def predict(self, user, item):
        return self.c


def train_mae(model, ds):
    return evaluate_mae(model, ds)


# --- classic MF --------------------------------------------------------------


def test_mf_single_step_by_hand():
    ds = RatingsDataset.from_triplets([(0, 0, 4.0)])
    U, V = np.array([[1.0]]), np.array([[1.0]])
    _sgd_mf(U, V, ds, 0.1, 0.0, 1, np.random.default_rng(0))
    # e = 4 - 1 = 3; U = 1 + 0.1 * 3 * 1 = 1.3, V reads the pre-step U
    assert U[0, 0] == pytest.approx(1.3, abs=1e-15)
    assert V[0, 0] == pytest.approx(1.3, abs=1e-15)


def test_mf_zero_iterations_is_initialization():
    ds, _ = rank_k_dataset(5, 6)
    m0 = train_mf(ds, k=3, iterations=0, seed=4)
    rng = np.random.default_rng(4)
    U0 = (1.0 - rng.random((5, 3))) * (1.0 / math.sqrt(3))
    V0 = (1.0 - rng.random((6, 3))) * (1.0 / math.sqrt(3))
    assert np.array_equal(m0.U, U0) and np.array_equal(m0.V, V0)
    assert (m0.U > 0).all() and (m0.U <= 1 / math.sqrt(3)).all()


def test_mf_rank1_improves():
    ds, _ = rank_k_dataset(12, 12, k=1, seed=2)
    before = train_mae(train_mf(ds, k=1, gamma=0.01, iterations=0), ds)
    after = train_mae(train_mf(ds, k=1, gamma=0.01, iterations=10_000), ds)
    assert after < before


def test_mf_divergence_reports_step():
    ds, _ = rank_k_dataset(6, 6)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDiverged) as exc:
            train_mf(ds, k=2, gamma=50.0, iterations=1000)
    assert exc.value.step < 1000
    assert "step" in str(exc.value)


def test_mf_rejects_bad_params():
    ds, _ = rank_k_dataset(3, 3)
    with pytest.raises(ValueError):
        train_mf(ds, k=0)
    with pytest.raises(ValueError):
        train_mf(ds, gamma=-1.0)
    with pytest.raises(ValueError):
        train_mf(ds, iterations=-1)


def test_predictions_are_clamped(mini):
    model = train_mf(mini, k=4, gamma=0.02, iterations=2000)
    pred = model.predict_many(mini.users, mini.items)
    assert (pred >= mini.r_min).all() and (pred <= mini.r_max).all()


# --- ZeroMat -----------------------------------------------------------------


def test_zeromat_signature_admits_no_ratings():
    params = inspect.signature(train_zeromat).parameters
    assert "train" not in params and "dataset" not in params
    model = train_zeromat(4, 5, k=2, iterations=50, seed=1)
    assert model.U.shape == (4, 2) and model.V.shape == (5, 2)


def test_zeromat_single_step_by_hand():
    # replicate one step with hand-set factors
    U, V = np.array([[1.0]]), np.array([[1.0]])
    gamma = 0.1
    d = float(U[0] @ V[0])
    u_new = U[0] + gamma * (V[0] / d - 2 * U[0])
    v_new = V[0] + gamma * (U[0] / d - 2 * V[0])
    assert u_new[0] == pytest.approx(0.9) and v_new[0] == pytest.approx(0.9)
    # and the trainer applies the same rule: with m=n=1 every step hits (0, 0)
    model = train_zeromat(1, 1, k=1, gamma=gamma, iterations=1, seed=3)
    rng = np.random.default_rng(3)
    u0 = (1.0 - rng.random()) * 1.0
    v0 = (1.0 - rng.random()) * 1.0
    d0 = u0 * v0
    assert model.U[0, 0] == pytest.approx(u0 + gamma * (v0 / d0 - 2 * u0), rel=1e-14)
    assert model.V[0, 0] == pytest.approx(v0 + gamma * (u0 / d0 - 2 * v0), rel=1e-14)


def test_zeromat_gamma_zero_is_identity():
    a = train_zeromat(6, 7, k=3, gamma=0.0, iterations=500, seed=9)
    b = train_zeromat(6, 7, k=3, gamma=0.0, iterations=0, seed=9)
    assert np.array_equal(a.U, b.U) and np.array_equal(a.V, b.V)


def test_zeromat_predictions_in_range():
    model = train_zeromat(20, 30, k=4, gamma=0.01, iterations=2000, seed=0)
    users = np.repeat(np.arange(20), 30)
    items = np.tile(np.arange(30), 20)
    pred = model.predict_many(users, items)
    assert pred.min() == pytest.approx(1.0) and pred.max() == pytest.approx(5.0)


# --- DotMat ------------------------------------------------------------------


def test_dotmat_f_at_one():
    assert dotmat_f(1.0) == 1.0 and dotmat_fprime(1.0) == 1.0


def test_dotmat_f_at_half():
    assert dotmat_f(0.5) == pytest.approx(0.7071067811865476, rel=1e-15)
    assert dotmat_fprime(0.5) == pytest.approx(0.7071067811865476 * (math.log(0.5) + 1), rel=1e-15)
    assert dotmat_fprime(0.5) == pytest.approx(0.2169, abs=1e-4)


@pytest.mark.parametrize("x", [0.1, 0.3, 0.5, 0.9])
def test_dotmat_fprime_matches_central_difference(x):
    h = 1e-6
    fd = (dotmat_f(x + h) - dotmat_f(x - h)) / (2 * h)
    assert abs(dotmat_fprime(x) - fd) <= 1e-6 * abs(fd)


def test_dotmat_zero_error_step_is_a_no_op():
    # target R / R_max = 1 = f(1): U.V = 1 is exactly on the kink
    ds = RatingsDataset.from_triplets([(0, 0, 5.0)])
    U, V = np.array([[1.0]]), np.array([[1.0]])
    _sgd_dotmat(U, V, ds, 0.5, 10, np.random.default_rng(0))
    assert U[0, 0] == 1.0 and V[0, 0] == 1.0


def test_dotmat_stays_bounded(mini):
    model = train_dotmat(mini, k=10, gamma=0.02, iterations=20_000, seed=0)
    assert np.isfinite(model.U).all() and np.abs(model.U).max() < 10


def test_dotmat_floor_step_skipped():
    # target 1 = R_max/R_max; f(DOT_FLOOR) is just below 1, so the subgradient
    # would push U.V further below the floor
    ds = RatingsDataset.from_triplets([(0, 0, 5.0)])
    U, V = np.array([[1e-7]]), np.array([[1e-7]])
    _sgd_dotmat(U, V, ds, 0.1, 5, np.random.default_rng(0))
    assert U[0, 0] == 1e-7 and V[0, 0] == 1e-7


def test_dotmat_below_floor_moves_up_for_lower_targets():
    ds = RatingsDataset.from_triplets([(0, 0, 4.0)])
    U, V = np.array([[1e-7]]), np.array([[1e-7]])
    _sgd_dotmat(U, V, ds, 0.1, 1, np.random.default_rng(0))
    assert U[0, 0] * V[0, 0] > 1e-14
    assert DOT_FLOOR == 1e-6


# --- hybrid ------------------------------------------------------------------


def test_hybrid_without_pre_phase_is_mf(mini):
    h = train_dotmat_hybrid(mini, k=4, gamma=0.02, lam=0.01, iters_pre=0, iters_main=800, seed=5)
    m = train_mf(mini, k=4, gamma=0.02, lam=0.01, iterations=800, seed=5)
    assert np.array_equal(h.U, m.U) and np.array_equal(h.V, m.V)


def test_hybrid_without_main_phase_is_dotmat(mini):
    h = train_dotmat_hybrid(mini, k=4, gamma=0.02, iters_pre=800, iters_main=0, seed=5)
    d = train_dotmat(mini, k=4, gamma=0.02, iterations=800, seed=5)
    assert np.array_equal(h.U, d.U) and np.array_equal(h.V, d.V)
    assert np.array_equal(h.predict_many(mini.users, mini.items), d.predict_many(mini.users, mini.items))


def test_hybrid_refines_rank1():
    ds, _ = rank_k_dataset(10, 10, k=1, seed=3)
    pre = train_dotmat_hybrid(ds, k=1, gamma=0.01, iters_pre=3000, iters_main=0, seed=1)
    full = train_dotmat_hybrid(ds, k=1, gamma=0.01, iters_pre=3000, iters_main=10_000, seed=1)
    assert train_mae(full, ds) <= train_mae(pre, ds) + 1e-9


# --- random placement ----------------------------------------------------------


def test_random_placement_deterministic_and_in_range():
    p = predict_random(11)
    assert p.predict(3, 4) == p.predict(3, 4)
    assert predict_random(11).predict(3, 4) == p.predict(3, 4)
    vals = np.array([p.predict(u, i) for u in range(100) for i in range(100)])
    assert (vals >= 1.0).all() and (vals <= 5.0).all()
    assert abs(vals.mean() - 3.0) < 0.1
    assert predict_random(12).predict(3, 4) != p.predict(3, 4)


# --- neighborhood CF ---------------------------------------------------------


def test_cf_single_neighbor():
    ds = RatingsDataset.from_triplets([(0, 0, 3.0), (1, 0, 3.0), (1, 1, 4.0)])
    cf = NeighborhoodCF(ds, "user_based", K=5)
    out = cf.explain(0, 1)
    assert out.value == 4.0 and out.neighbors == 1


def test_cf_no_neighbor_gives_global_mean():
    ds = RatingsDataset.from_triplets([(0, 0, 3.0), (1, 1, 4.0), (2, 2, 2.0)])
    cf = NeighborhoodCF(ds, "user_based", K=5)
    assert cf.predict(0, 1) == pytest.approx(3.0)
    cold = cf.explain(99, 0)
    assert cold.cold and cold.value == pytest.approx(3.0)


def test_cf_weighted_mean_by_hand():
    from recsys_lens.similarity import SimilarityMatrix

    ds = RatingsDataset.from_triplets([(0, 0, 3.0), (1, 1, 5.0), (2, 1, 2.0)], m=3, n=2)
    sim = SimilarityMatrix("user_user", 3, {(0, 1): 0.8, (0, 2): 0.4}, (True, True, True))
    cf = NeighborhoodCF(ds, "user_based", K=5, sim=sim)
    assert cf.predict(0, 1) == pytest.approx((0.8 * 5 + 0.4 * 2) / 1.2)
    assert cf.predict(0, 1) == pytest.approx(4.0)
    # K=1 keeps only the most similar neighbor
    assert NeighborhoodCF(ds, "user_based", K=1, sim=sim).predict(0, 1) == 5.0


def test_item_cf_mirrors_user_cf():
    trip = [(0, 0, 4.0), (0, 1, 2.0), (1, 0, 5.0), (1, 1, 1.0), (2, 0, 3.0)]
    ds = RatingsDataset.from_triplets(trip)
    flipped = RatingsDataset.from_triplets([(i, u, r) for u, i, r in trip])
    assert NeighborhoodCF(ds, "item_based").predict(2, 1) == pytest.approx(
        NeighborhoodCF(flipped, "user_based").predict(1, 2)
    )


# --- MAE ---------------------------------------------------------------------


def test_mae_perfect_predictor(mini):
    values = {(u, i): r for u, i, r, _ in mini.triplets()}
    assert evaluate_mae(_Fixed(values), mini) == 0.0


def test_mae_by_hand():
    test = RatingsDataset.from_triplets([(0, 0, 4.0), (1, 1, 2.0)])
    assert evaluate_mae(_Fixed({(0, 0): 3.0, (1, 1): 4.0}), test) == 1.5


def test_mae_extreme():
    test = RatingsDataset.from_triplets([(u, u, 1.0) for u in range(7)])
    assert evaluate_mae(_Const(5.0), test) == 4.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1.0, 5.0), min_size=2, max_size=40), st.randoms(use_true_random=False))
def test_mae_permutation_invariant(ratings, rnd):
    trip = [(k, k, r) for k, r in enumerate(ratings)]
    shuffled = list(trip)
    rnd.shuffle(shuffled)
    p = predict_random(0)
    a = evaluate_mae(p, RatingsDataset.from_triplets(trip))
    # same (user, item, rating) cells, different storage order
    b_ds = RatingsDataset.from_triplets(shuffled)
    inv_u = {v: int(k) for k, v in b_ds.user_index_map.items()}
    vals = {(u, i): p.predict(inv_u[u], inv_u[u]) for u, i in zip(b_ds.users.tolist(), b_ds.items.tolist())}
    b = evaluate_mae(_Fixed(vals), b_ds)
    assert a == b


# --- grid --------------------------------------------------------------------


def test_grid_single_point(mini):
    pair = split(mini, 0.8, 0)
    tr = mae_grid("random", pair.train, pair.test, [0.01])
    assert len(tr.xs) == len(tr.ys) == 1


def test_grid_random_five_points(mini):
    pair = split(mini, 0.8, 0)
    tr = mae_grid("random", pair.train, pair.test, [0.01, 0.02, 0.03, 0.04, 0.05])
    ys = tr.values()
    assert len(ys) == 5 and np.isfinite(ys).all()
    assert ((ys >= 0) & (ys <= 4.0)).all()


def test_grid_memorizing_cf_on_train_equals_test():
    # every user is its own only rater, identical copies give exact recall
    trip = [(u, i, float(1 + (u + i) % 5)) for u in range(4) for i in range(3)]
    ds = RatingsDataset.from_triplets(trip + [(u + 4, i, r) for u, i, r in trip])
    tr = mae_grid("user_cf", ds, ds, [1, 2, 3], TrainConfig(neighbors=1), mode="steps")
    # each user has an exact twin with similarity 1 that rated every item alike
    assert tr.values().tolist() == [0.0, 0.0, 0.0]


def test_grid_threads_do_not_change_trace(mini):
    pair = split(mini, 0.8, 0)
    cfg = TrainConfig(k=4, iterations=1500)
    a = mae_grid("mf", pair.train, pair.test, [0.005, 0.01, 0.02], cfg, threads=1)
    b = mae_grid("mf", pair.train, pair.test, [0.005, 0.01, 0.02], cfg, threads=3)
    assert a.to_csv() == b.to_csv()


def test_grid_records_divergence(mini):
    pair = split(mini, 0.8, 0)
    tr = mae_grid("mf", pair.train, pair.test, [0.01, 80.0], TrainConfig(k=4, iterations=3000))
    assert math.isfinite(tr.ys[0]) and math.isnan(tr.ys[1])
    assert 1 in tr.failures
    assert tr.to_csv().splitlines()[2].endswith(",")


def test_trace_csv_round_trip():
    tr = SeriesTrace("x", [0.1, 0.2, 0.3], [1.5, math.nan, 0.25])
    back = SeriesTrace.from_csv(tr.to_csv())
    assert back.xs == tr.xs
    assert back.ys[0] == 1.5 and math.isnan(back.ys[1]) and back.ys[2] == 0.25


# --- model files -------------------------------------------------------------


def test_model_json_round_trip(mini):
    model = train_mf(mini, k=3, iterations=500, seed=2)
    back = FactorModel.from_json(model.to_json())
    assert np.array_equal(back.U, model.U) and np.array_equal(back.V, model.V)
    assert back.to_json() == model.to_json()
    assert json.loads(model.to_json())["algorithm"] == "mf"


def test_reruns_are_byte_identical(mini):
    for algo in ("mf", "zeromat", "dotmat", "dotmat_hybrid"):
        cfg = TrainConfig(k=3, iterations=400, iters_pre=200, seed=8)
        a = train_algorithm(algo, mini, cfg)
        b = train_algorithm(algo, mini, cfg)
        assert a.to_json() == b.to_json()


def test_train_algorithm_requires_data_for_mf():
    with pytest.raises(ValueError):
        train_algorithm("mf", None, TrainConfig())
    z = train_algorithm("zeromat", None, TrainConfig(iterations=10), m=3, n=4)
    assert z.U.shape == (3, 10)
    with pytest.raises(ValueError):
        train_algorithm("svd", None, TrainConfig())
