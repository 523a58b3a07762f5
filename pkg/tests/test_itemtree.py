import math

import numpy as np
import pytest
from scipy.special import softmax

from cisrec import cis, itemtree
from cisrec.cis import FlatModel
from cisrec.errors import ContractError, TreeFormatError, UnknownItemError
from cisrec.itemtree import ItemCode, ItemTree


def _four_then_two():
    """루트 아래 자식 4개, 4번째 자식 아래 잎 2개"""
    parent = [-1, 0, 0, 0, 0, 4, 4]
    children = [[1, 2, 3, 4], [], [], [], [5, 6], [], []]
    leaf_item = [-1, 0, 1, 2, -1, 3, 4]
    return ItemTree(4, 2, parent, children, leaf_item)


# 생성
def test_random_balanced_four_items():
    tree = itemtree.random_balanced(4, arity=2, dim=3, seed=0)
    assert tree.code_lengths().tolist() == [2, 2, 2, 2]
    assert itemtree.validate(tree) == []


def test_random_balanced_single_item():
    tree = itemtree.random_balanced(1, arity=2, dim=3, seed=0)
    assert itemtree.code_of(tree, 0) == ItemCode((1,))
    assert itemtree.validate(tree) == []


def test_random_balanced_depth_spread():
    tree = itemtree.random_balanced(10677, arity=2, dim=2, seed=1)
    lengths = tree.code_lengths()
    assert lengths.max() == 14
    assert lengths.min() == 13


@pytest.mark.parametrize("n_items,arity", [(5, 2), (7, 3), (26, 5), (100, 3), (513, 2), (1000, 5)])
def test_random_balanced_is_left_packed(n_items, arity):
    tree = itemtree.random_balanced(n_items, arity=arity, dim=2, seed=4)
    height = 1
    while arity ** height < n_items:
        height += 1
    codes = sorted(itemtree.code_of(tree, i).digits for i in range(n_items))
    lengths = [len(c) for c in codes]
    assert max(lengths) == height
    assert min(lengths) >= height - 1
    # 왼쪽에서 오른쪽으로 읽으면 깊은 잎이 먼저 나옴
    assert lengths == sorted(lengths, reverse=True)
    for node in tree.internal_nodes():
        assert len(tree.children[node]) >= 2
    assert itemtree.validate(tree) == []


def test_complete_layout_small():
    parent, children, leaf_item = itemtree.complete_layout([10, 11, 12, 13, 14], 2)
    tree = ItemTree(2, 1, parent, children, [-1 if x < 0 else x - 10 for x in leaf_item])
    assert sorted(len(tree.codes[i]) for i in range(5)) == [2, 2, 2, 3, 3]
    assert tree.codes[3].digits == (1, 1, 1)
    assert tree.codes[4].digits == (1, 1, 2)
    assert tree.codes[0].digits == (1, 2)


def test_random_balanced_depends_on_seed():
    a = itemtree.random_balanced(16, arity=3, dim=2, seed=1)
    b = itemtree.random_balanced(16, arity=3, dim=2, seed=1)
    c = itemtree.random_balanced(16, arity=3, dim=2, seed=2)
    assert a.codes == b.codes
    assert a.codes != c.codes


def test_random_balanced_rejects_empty():
    with pytest.raises(ContractError):
        itemtree.random_balanced(0, arity=2, dim=2, seed=0)


# 조회
def test_code_and_path():
    tree = _four_then_two()
    assert itemtree.code_of(tree, 3) == ItemCode((4, 1))
    assert itemtree.path_of(tree, 3) == (0, 4, 5)
    assert itemtree.code_of(tree, 1).digits == (2,)


def test_code_path_duality():
    tree = itemtree.random_balanced(37, arity=3, dim=2, seed=5)
    for item in range(37):
        code = itemtree.code_of(tree, item)
        path = itemtree.path_of(tree, item)
        assert len(path) == len(code) + 1
        for j, d in enumerate(code):
            assert tree.children[path[j]][d - 1] == path[j + 1]
        assert tree.leaf_item[path[-1]] == item


def test_unknown_item():
    tree = _four_then_two()
    with pytest.raises(UnknownItemError):
        itemtree.code_of(tree, 99)
    with pytest.raises(UnknownItemError):
        itemtree.path_of(tree, -1)


# 확률
def test_child_prob_uniform():
    tree = itemtree.random_balanced(4, arity=2, dim=2, seed=0, init_scale=0.0)
    assert itemtree.child_prob(tree, 0, np.array([0.3, -1.0]), 1) == pytest.approx(0.5)


def test_child_prob_softmax():
    tree = itemtree.random_balanced(2, arity=2, dim=2, seed=0, init_scale=0.0)
    first = tree.children[0][0]
    tree.factors[first] = [1.0, 0.0]
    p = itemtree.child_prob(tree, 0, np.array([1.0, 0.0]), 1)
    assert p == pytest.approx(math.e / (math.e + 1), abs=1e-12)
    assert p == pytest.approx(0.73106, abs=1e-5)


def test_child_prob_on_leaf():
    tree = _four_then_two()
    with pytest.raises(ContractError):
        itemtree.child_prob(tree, 1, np.zeros(2), 1)
    with pytest.raises(ContractError):
        itemtree.child_prob(tree, 0, np.zeros(2), 5)


def test_item_prob_uniform():
    tree = itemtree.random_balanced(4, arity=2, dim=2, seed=0, init_scale=0.0)
    for item in range(4):
        assert itemtree.item_prob(tree, np.array([2.0, 1.0]), item) == pytest.approx(0.25)


@pytest.mark.parametrize("seed", range(50))
def test_depth_one_equals_flat_model(seed):
    rng = np.random.default_rng(seed)
    n_items, dim = int(rng.integers(1, 40)), int(rng.integers(1, 6))
    flat = FlatModel(rng.normal(size=(1, dim)), rng.normal(size=(n_items, dim)), rng.normal(size=n_items))
    tree = itemtree.depth_one(n_items, dim, flat.item_factors, flat.item_bias)
    user = flat.user_factors[0]
    expected = np.array([cis.flat_prob(flat, 0, i) for i in range(n_items)])
    assert np.max(np.abs(itemtree.full_distribution(tree, user) - expected)) < 1e-12
    for i in range(n_items):
        assert abs(itemtree.item_prob(tree, user, i) - expected[i]) < 1e-12
    assert np.max(np.abs(expected - softmax(flat.item_factors @ user + flat.item_bias))) < 1e-12


@pytest.mark.parametrize("arity", [2, 3, 5])
@pytest.mark.parametrize("seed", range(40))
def test_distribution_is_normalized(seed, arity):
    rng = np.random.default_rng([seed, arity])
    n_items = int(rng.integers(2, 1025))
    tree = itemtree.random_balanced(n_items, arity=arity, dim=4, seed=seed, init_scale=1.0)
    tree.biases[:] = rng.normal(size=tree.n_nodes)
    user = rng.normal(size=4)
    assert abs(itemtree.full_distribution(tree, user).sum() - 1.0) < 1e-9
    if n_items <= 64:
        assert abs(sum(itemtree.item_prob(tree, user, i) for i in range(n_items)) - 1.0) < 1e-9


def test_full_distribution_matches_item_prob(rng):
    tree = itemtree.random_balanced(100, arity=3, dim=4, seed=2, init_scale=1.0)
    tree.biases[:] = rng.normal(size=tree.n_nodes)
    user = rng.normal(size=4)
    dist = itemtree.full_distribution(tree, user)
    per_item = np.array([itemtree.item_prob(tree, user, i) for i in range(100)])
    assert np.max(np.abs(dist - per_item)) < 1e-12


def test_count_biases_reproduce_frequencies():
    tree = itemtree.random_balanced(4, arity=2, dim=2, seed=3, init_scale=0.0)
    counts = np.array([1.0, 2.0, 3.0, 4.0])
    itemtree.init_biases_from_counts(tree, counts)
    assert np.allclose(itemtree.full_distribution(tree, np.ones(2)), counts / counts.sum())


# 직렬화
def test_serialize_restores_tree(rng):
    tree = itemtree.random_balanced(11, arity=3, dim=2, seed=4, init_scale=1.0)
    tree.biases[:] = rng.normal(size=tree.n_nodes)
    restored = itemtree.deserialize(itemtree.serialize(tree, {"config_hash": "x"}))
    assert restored.codes == tree.codes
    assert np.array_equal(restored.factors, tree.factors)
    assert np.array_equal(restored.biases, tree.biases)
    assert itemtree.serialize(restored, {"config_hash": "x"}) == itemtree.serialize(tree, {"config_hash": "x"})


def test_truncated_stream():
    data = itemtree.serialize(itemtree.random_balanced(5, arity=2, dim=2, seed=0))
    with pytest.raises(TreeFormatError):
        itemtree.deserialize(data[: len(data) // 2])


def test_bad_parameter_block_names_node():
    document = itemtree.to_document(itemtree.random_balanced(5, arity=2, dim=2, seed=0))
    document["nodes"][3]["params"] = "AAAA"
    with pytest.raises(TreeFormatError) as info:
        itemtree.from_document(document)
    assert info.value.offset == 3


def test_wrong_format_tag():
    with pytest.raises(TreeFormatError):
        itemtree.deserialize(b'{"format": "something-else"}')


# 검증
def test_validate_duplicate_item():
    tree = itemtree.random_balanced(6, arity=2, dim=2, seed=0)
    tree.leaf_item[tree.leaf_of[1]] = 0
    violations = itemtree.validate(tree)
    assert any("bijection" in v for v in violations)


def test_validate_code_table_mismatch():
    tree = itemtree.random_balanced(8, arity=2, dim=2, seed=0)
    digits = list(tree.codes[0].digits)
    digits[-1] = 2 if digits[-1] == 1 else 1
    tree.codes[0] = ItemCode(tuple(digits))
    violations = itemtree.validate(tree)
    assert any("disagrees with topology" in v for v in violations)


def test_validate_non_finite():
    tree = itemtree.random_balanced(4, arity=2, dim=2, seed=0)
    tree.factors[1, 0] = np.nan
    assert "non-finite node parameters" in itemtree.validate(tree)


def test_validate_too_many_children():
    tree = _four_then_two()
    tree.arity = 3
    assert any("allowed 2..3" in v for v in itemtree.validate(tree))
