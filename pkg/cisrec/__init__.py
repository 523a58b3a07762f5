"""
cisrec
~~~~~~

암시적 피드백(implicit feedback)을 위한 협업 아이템 선택 모델.

유저가 아이템을 고르는 행위를 유저별 분포에서의 추출로 보고,
그 분포를 flat softmax 또는 아이템 트리 위의 계층적 softmax 로 모델링합니다.
트리는 랜덤 균형 트리로 시작하거나, 학습된 유저 벡터로 위에서 아래로 학습합니다.

기본적인 구성:

    >>> import cisrec
    >>> planted = cisrec.planted_partition(seed=0)
    >>> data = cisrec.to_implicit(planted.ratings, 4.0)
    >>> train, valid, test = cisrec.split(data, (0.8, 0.1, 0.1), seed=0)
    >>> tree = cisrec.random_balanced(data.n_items, arity=2, dim=8, seed=0)
    >>> model = cisrec.init_hier(train.n_users, tree, cisrec.TrainConfig(), train.item_counts)
    >>> model = cisrec.train_hier(model, train, cisrec.TrainConfig(epochs=5))

... 학습된 트리로 바꿔보죠.

    >>> tree = cisrec.learn_tree(train, model.user_factors)
    >>> model = cisrec.finetune(cisrec.HierModel(model.user_factors, tree), train, cisrec.TrainConfig())

명령줄에서는 ``cisrec prep`` / ``train`` / ``eval`` 을 쓰세요.

:license: MIT, see LICENSE for more details.

"""
from __future__ import annotations

from .baselines import BMFModel, BPRModel, train_bmf, train_bpr
from .cis import FlatModel, HierModel, finetune, init_flat, init_hier, topk, train_flat, train_hier
from .config import (
    BMFConfig,
    BPRConfig,
    ExperimentConfig,
    ModelKind,
    Protocol,
    TrainConfig,
    TreeInit,
    TreeLearnConfig,
    load_config,
)
from .dataset import ImplicitDataset, RatingRecord, RelevanceLabels, build_relevance, ingest_ratings, split, to_implicit
from .errors import CisError, ConfigError, ContractError, DataError, DivergenceError, ParseError, TreeFormatError
from .eval import MetricReport, build_protocol_all_unobserved, build_protocol_explicit, evaluate
from .itemtree import ItemTree, depth_one, random_balanced
from .synthetic import planted_partition
from .treelearn import learn_tree

__version__ = "0.1.0"
__all__ = [

    # data
    "RatingRecord",
    "ImplicitDataset",
    "RelevanceLabels",
    "ingest_ratings",
    "to_implicit",
    "split",
    "build_relevance",
    "planted_partition",

    # models
    "ItemTree",
    "random_balanced",
    "depth_one",
    "FlatModel",
    "HierModel",
    "BPRModel",
    "BMFModel",

    # training
    "init_flat",
    "init_hier",
    "train_flat",
    "train_hier",
    "finetune",
    "learn_tree",
    "train_bpr",
    "train_bmf",

    # evaluation
    "topk",
    "evaluate",
    "build_protocol_explicit",
    "build_protocol_all_unobserved",
    "MetricReport",

    # config
    "load_config",
    "ExperimentConfig",
    "TrainConfig",
    "TreeLearnConfig",
    "BPRConfig",
    "BMFConfig",
    "ModelKind",
    "Protocol",
    "TreeInit",

    # errors
    "CisError",
    "ConfigError",
    "ContractError",
    "DataError",
    "ParseError",
    "TreeFormatError",
    "DivergenceError",
]
