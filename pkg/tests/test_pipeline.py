import os

import pytest

from cisrec import pipeline
from cisrec.config import load_config
from cisrec.dataset import SplitBundle, build_relevance, split, to_implicit
from cisrec.synthetic import planted_partition

ML10M_RATINGS = os.environ.get("CISREC_ML10M_RATINGS")


def _planted_bundle(seed, users_per_group=50):
    # 4 그룹을 2차원 유저 벡터로 구분해야 하는 데이터
    planted = planted_partition(
        n_groups=4, users_per_group=users_per_group, items_per_group=8,
        picks_per_user=5, dislikes_per_user=3, seed=seed,
    )
    full = to_implicit(planted.ratings, 4.0)
    train, valid, test = split(full, (0.8, 0.1, 0.1), seed)
    labels = build_relevance(planted.ratings, 4.0, 3.0).reindex(full)
    return SplitBundle(train, valid, test, labels)


def _config(root, seed, **overrides):
    values = {
        "output_dir": str(root),
        "model.dim": 2,
        "train.seed": seed,
        "treelearn.seed": seed,
        "split.seed": seed,
    }
    values.update(overrides)
    return load_config(overrides=values)


def _validation_map(config, bundle, kinds, protocol):
    paths = [pipeline.train_model(config, bundle, kind=kind)[1] for kind in kinds]
    on_valid = SplitBundle(bundle.train, bundle.valid, bundle.valid, bundle.labels)
    reports = pipeline.evaluate_models(config, on_valid, paths, [protocol])
    return {kind: report.map for kind, report in zip(kinds, reports)}


def test_learned_tree_beats_random_tree_on_validation(tmp_path):
    bundle = _planted_bundle(seed=0)
    scores = _validation_map(_config(tmp_path, 0), bundle, ["cis-random", "cis-learned"], "explicit")
    assert scores["cis-learned"] - scores["cis-random"] >= 0.05


@pytest.mark.slow
def test_learned_tree_wins_across_seeds(tmp_path):
    wins = 0
    for seed in range(5):
        bundle = _planted_bundle(seed, users_per_group=100)
        scores = _validation_map(
            _config(tmp_path / str(seed), seed), bundle, ["cis-random", "cis-learned"], "explicit"
        )
        wins += scores["cis-learned"] > scores["cis-random"]
    assert wins >= 4


# MovieLens-10M 500 명 샘플. CISREC_ML10M_RATINGS 에 ratings.dat 경로가 있어야 실행됩니다.
def _movielens_reports(root, seed, kinds):
    config = load_config(overrides={
        "output_dir": str(root),
        "data.ratings_path": ML10M_RATINGS,
        "data.max_users": 500,
        "split.seed": seed,
        "train.seed": seed,
        "treelearn.seed": seed,
        "bpr.seed": seed,
    })
    bundle = pipeline.prepare(config)
    paths = [pipeline.train_model(config, bundle, kind=kind)[1] for kind in kinds]
    reports = pipeline.evaluate_models(config, bundle, paths)
    return {(r.model, r.protocol): r.map for r in reports}


@pytest.mark.slow
@pytest.mark.skipif(not ML10M_RATINGS, reason="CISREC_ML10M_RATINGS is not set")
def test_movielens_learned_tree_beats_random(tmp_path):
    wins = 0
    for seed in range(5):
        scores = _movielens_reports(tmp_path / str(seed), seed, ["cis-random", "cis-learned"])
        wins += scores[("cis-learned", "explicit")] > scores[("cis-random", "explicit")]
    assert wins >= 4


@pytest.mark.slow
@pytest.mark.skipif(not ML10M_RATINGS, reason="CISREC_ML10M_RATINGS is not set")
def test_movielens_protocol_flips_bpr_and_bmf(tmp_path):
    flips = 0
    for seed in range(5):
        scores = _movielens_reports(tmp_path / str(seed), seed, ["bpr", "bmf"])
        explicit = scores[("bpr", "explicit")] >= scores[("bmf", "explicit")]
        unobserved = scores[("bmf", "all_unobserved")] > scores[("bpr", "all_unobserved")]
        flips += explicit and unobserved
    assert flips >= 4
