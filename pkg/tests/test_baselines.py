import math

import numpy as np
import pytest

from cisrec import baselines
from cisrec.baselines import BMFModel, BPRModel
from cisrec.config import BMFConfig, BPRConfig
from cisrec.dataset import ImplicitDataset, to_implicit
from cisrec.errors import ConfigError, ContractError, UnknownItemError
from cisrec.synthetic import planted_partition


def _bpr(rng, users=3, items=5, dim=2):
    return BPRModel(rng.normal(size=(users, dim)), rng.normal(size=(items, dim)), rng.normal(size=items))


# BPR 샘플링
def test_sample_triple_forced():
    train = ImplicitDataset([(0, 0)], 1, 2)
    for seed in range(5):
        assert baselines.bpr_sample_triple(train, seed) == (0, 0, 1)


def test_sample_triple_negative_never_selected(planted_data):
    rng = np.random.default_rng(0)
    for _ in range(300):
        u, i, j = baselines.bpr_sample_triple(planted_data, rng)
        assert i in planted_data.user_items[u]
        assert j not in planted_data.user_items[u]


def test_sample_triple_without_negatives():
    train = ImplicitDataset([(0, 0), (0, 1)], 1, 2)
    with pytest.raises(ContractError):
        baselines.bpr_sample_triple(train, 0)


def test_sample_triple_skips_saturated_user():
    train = ImplicitDataset([(0, 0), (0, 1), (1, 0)], 2, 2)
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert baselines.bpr_sample_triple(train, rng) == (1, 0, 1)


def test_sample_triple_picks_pairs_uniformly():
    # u0 의 pair 3 개, u1 의 pair 1 개 -> u0 비율은 3/4 근처
    train = ImplicitDataset([(0, 0), (0, 1), (0, 2), (1, 0)], 2, 5)
    rng = np.random.default_rng(5)
    users = [baselines.bpr_sample_triple(train, rng)[0] for _ in range(4000)]
    assert users.count(0) / 4000 == pytest.approx(0.75, abs=0.03)


# BPR 기울기
def test_zero_params_coefficient_is_half():
    model = BPRModel(np.zeros((1, 2)), np.zeros((2, 2)), np.zeros(2))
    assert baselines.bpr_objective(model, (0, 0, 1)) == pytest.approx(math.log(0.5))
    _, _, _, g_ci, g_cj = baselines.bpr_gradients(model, (0, 0, 1))
    assert g_ci == pytest.approx(0.5)
    assert g_cj == pytest.approx(-0.5)


def test_bpr_gradients_match_finite_differences(rng):
    model = _bpr(rng)
    triple = (2, 1, 4)
    g_user, g_i, g_j, g_ci, g_cj = baselines.bpr_gradients(model, triple)
    eps = 1e-6

    def numeric(array, index):
        up, down = model.copy(), model.copy()
        getattr(up, array)[index] += eps
        getattr(down, array)[index] -= eps
        return (baselines.bpr_objective(up, triple) - baselines.bpr_objective(down, triple)) / (2 * eps)

    for d in range(model.dim):
        assert g_user[d] == pytest.approx(numeric("user_factors", (2, d)), rel=1e-5, abs=1e-8)
        assert g_i[d] == pytest.approx(numeric("item_factors", (1, d)), rel=1e-5, abs=1e-8)
        assert g_j[d] == pytest.approx(numeric("item_factors", (4, d)), rel=1e-5, abs=1e-8)
    assert g_ci == pytest.approx(numeric("item_bias", 1), rel=1e-5, abs=1e-8)
    assert g_cj == pytest.approx(numeric("item_bias", 4), rel=1e-5, abs=1e-8)


def test_bpr_gradients_without_bias(rng):
    model = _bpr(rng)
    model.use_bias = False
    *_, g_ci, g_cj = baselines.bpr_gradients(model, (0, 1, 2))
    assert g_ci == 0.0 and g_cj == 0.0


def test_bpr_step_leaves_other_params(rng):
    model = _bpr(rng)
    before = model.copy()
    baselines.bpr_step(model, (1, 0, 3), 0.1, 0.01)
    assert np.array_equal(model.user_factors[[0, 2]], before.user_factors[[0, 2]])
    assert np.array_equal(model.item_factors[[1, 2, 4]], before.item_factors[[1, 2, 4]])
    assert np.array_equal(model.item_bias[[1, 2, 4]], before.item_bias[[1, 2, 4]])
    assert baselines.bpr_objective(model, (1, 0, 3)) > baselines.bpr_objective(before, (1, 0, 3))


# BPR 학습
def test_train_bpr_zero_rate_is_identity(planted_data):
    config = BPRConfig(learning_rate=0.0, samples_per_pair=2)
    start = baselines.init_bpr(planted_data.n_users, planted_data.n_items, 3, config)
    trained = baselines.train_bpr(planted_data, config, dim=3)
    assert np.array_equal(trained.user_factors, start.user_factors)
    assert np.array_equal(trained.item_factors, start.item_factors)


def test_train_bpr_no_triples_returns_init(planted_data):
    config = BPRConfig(seed=4)
    trained = baselines.train_bpr(planted_data, config, dim=3, n_triples=0)
    start = baselines.init_bpr(planted_data.n_users, planted_data.n_items, 3, config)
    assert np.array_equal(trained.item_factors, start.item_factors)


def test_train_bpr_callback(planted_data):
    steps = []
    baselines.train_bpr(
        planted_data, BPRConfig(eval_every=10), dim=2, n_triples=35, callback=lambda step, _: steps.append(step)
    )
    assert steps == [10, 20, 30, 35]


def test_train_bpr_learns_group_preference():
    # 유저는 자기 그룹 아이템을 전부 고르고 다른 그룹은 하나도 고르지 않음
    planted = planted_partition(n_groups=2, users_per_group=10, items_per_group=4, picks_per_user=4, seed=0)
    data = to_implicit(planted.ratings, 4.0)
    config = BPRConfig(learning_rate=0.1, seed=1)
    model = baselines.train_bpr(data, config, dim=2, n_triples=20_000)

    triples = [
        (u, int(i), j)
        for u in range(data.n_users)
        for i in data.user_items[u]
        for j in range(data.n_items)
        if j not in data.user_items[u]
    ]
    assert baselines.bpr_auc(model, triples) > 0.9


def test_bpr_auc_empty():
    model = BPRModel(np.zeros((1, 1)), np.zeros((2, 1)), np.zeros(2))
    assert baselines.bpr_auc(model, []) == 0.0


# BMF
def _dense_rows(fixed, observed, alpha, reg):
    """가중 최소제곱을 밀집 행렬로 직접 풂"""
    out = []
    for obs in observed:
        target = np.zeros(len(fixed))
        target[obs] = 1.0
        weight = np.ones(len(fixed))
        weight[obs] = 1.0 + alpha
        a = fixed.T @ (weight[:, None] * fixed) + reg * np.eye(fixed.shape[1])
        out.append(np.linalg.solve(a, fixed.T @ (weight * target)))
    return np.array(out)


def test_solve_rows_matches_dense_solution(rng):
    fixed = rng.normal(size=(10, 3))
    observed = [np.sort(rng.choice(10, size=k, replace=False)) for k in (0, 1, 4, 10, 3)]
    got = baselines.solve_rows(fixed, observed, alpha=2.0, reg=0.1)
    assert np.allclose(got, _dense_rows(fixed, observed, 2.0, 0.1))


def test_solve_rows_threads_agree(rng):
    fixed = rng.normal(size=(10, 3))
    observed = [np.sort(rng.choice(10, size=3, replace=False)) for _ in range(9)]
    single = baselines.solve_rows(fixed, observed, alpha=5.0, reg=0.1)
    assert np.array_equal(single, baselines.solve_rows(fixed, observed, alpha=5.0, reg=0.1, threads=3))


def test_solve_rows_alpha_zero_is_ridge(rng):
    fixed = rng.normal(size=(6, 2))
    observed = [np.array([0, 2])]
    got = baselines.solve_rows(fixed, observed, alpha=0.0, reg=0.5)
    target = np.array([1.0, 0, 1.0, 0, 0, 0])
    expected = np.linalg.solve(fixed.T @ fixed + 0.5 * np.eye(2), fixed.T @ target)
    assert np.allclose(got[0], expected)


def test_bmf_objective_matches_dense(rng, tiny):
    model = BMFModel(rng.normal(size=(3, 2)), rng.normal(size=(4, 2)), alpha=3.0, reg=0.2)
    dense = tiny.binary_matrix().toarray()
    weights = 1.0 + 3.0 * dense
    expected = np.sum(weights * (dense - model.user_factors @ model.item_factors.T) ** 2)
    expected += 0.2 * (np.sum(model.user_factors ** 2) + np.sum(model.item_factors ** 2))
    assert baselines.bmf_objective(model, tiny) == pytest.approx(expected)


def test_train_bmf_trace_never_increases(planted_data):
    model = baselines.train_bmf(planted_data, BMFConfig(max_sweeps=8, tol=0.0), dim=3)
    trace = model.trace
    assert len(trace) == 1 + 2 * 8
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(trace, trace[1:]))


def test_train_bmf_single_cell_exact_fit():
    train = ImplicitDataset([(0, 0)], 1, 1)
    model = baselines.train_bmf(train, BMFConfig(reg=0.0, alpha=1.0, max_sweeps=5), dim=1)
    assert (model.user_factors @ model.item_factors.T).item() == pytest.approx(1.0)
    assert model.trace[-1] == pytest.approx(0.0, abs=1e-12)


def test_train_bmf_zero_sweeps(tiny):
    model = baselines.train_bmf(tiny, BMFConfig(max_sweeps=0), dim=2)
    assert len(model.trace) == 1


def test_bmf_rejects_negative_alpha():
    with pytest.raises(ConfigError):
        BMFConfig(alpha=-1.0)
    with pytest.raises(ContractError):
        BMFModel(np.zeros((1, 1)), np.zeros((1, 1)), alpha=-1.0, reg=0.1)


def test_score(rng):
    model = _bpr(rng)
    expected = model.user_factors[1] @ model.item_factors[2] + model.item_bias[2]
    assert baselines.score(model, 1, 2) == pytest.approx(expected)
    bmf = BMFModel(model.user_factors, model.item_factors, alpha=1.0, reg=0.1)
    assert baselines.score(bmf, 1, 2) == pytest.approx(model.user_factors[1] @ model.item_factors[2])
    with pytest.raises(UnknownItemError):
        baselines.score(model, 0, 5)
