"""
cis
~~~

Collaborative Item Selection 모델.

- FlatModel:  모든 아이템에 대한 softmax, P(i|u) ∝ exp(U_u·V_i + c_i)
- HierModel:  아이템 트리 위의 연속된 자식 선택 (``itemtree`` 참고)

두 모델 모두 (user, item) pair 하나마다 파라미터를 갱신하는
확률적 경사 상승(SGA)으로 로그 우도를 최대화합니다. 미니배치는 없습니다.

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax, softmax

from . import itemtree
from .config import TrainConfig
from .dataset import ImplicitDataset
from .errors import ConfigError, ContractError, DivergenceError, UnknownItemError, UnknownUserError
from .itemtree import ItemTree
from .progress import EventKind, ProgressReporter, null_reporter

logger = logging.getLogger("cisrec.cis")

EpochCallback = Callable[[int, "Union[FlatModel, HierModel]", float], None]

UNSEEN_COUNT_FLOOR = itemtree.UNSEEN_COUNT_FLOOR


@dataclass
class FlatModel:
    """
    user_factors: U×D, item_factors: I×D, item_bias: I
    """

    user_factors: np.ndarray
    item_factors: np.ndarray
    item_bias: np.ndarray

    def __post_init__(self) -> None:
        self.user_factors = np.asarray(self.user_factors, dtype=np.float64)
        self.item_factors = np.asarray(self.item_factors, dtype=np.float64)
        self.item_bias = np.asarray(self.item_bias, dtype=np.float64)
        if self.user_factors.ndim != 2 or self.user_factors.shape[1] < 1:
            raise ConfigError("cisrec: user_factors must be a U×D matrix with D >= 1.")
        if self.item_factors.shape[1:] != self.user_factors.shape[1:]:
            raise ConfigError(
                f"cisrec: item dim {self.item_factors.shape[1:]} != user dim {self.user_factors.shape[1:]}."
            )
        if self.item_bias.shape != (self.item_factors.shape[0],):
            raise ConfigError("cisrec: item_bias must have one entry per item.")

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    def copy(self) -> "FlatModel":
        return FlatModel(self.user_factors.copy(), self.item_factors.copy(), self.item_bias.copy())

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.user_factors).all()
            and np.isfinite(self.item_factors).all()
            and np.isfinite(self.item_bias).all()
        )

    def scores(self, u: int) -> np.ndarray:
        """정규화되지 않은 점수 U_u·V_i + c_i (확률과 같은 순서)"""
        _check_user(self, u)
        return self.item_factors @ self.user_factors[u] + self.item_bias

    def score_items(self, u: int, items: np.ndarray) -> np.ndarray:
        return self.scores(u)[np.asarray(items, dtype=np.int64)]

    def distribution(self, u: int) -> np.ndarray:
        return softmax(self.scores(u))


@dataclass
class HierModel:
    """
    user_factors: U×D 와 노드 파라미터를 가진 ItemTree
    """

    user_factors: np.ndarray
    tree: ItemTree

    def __post_init__(self) -> None:
        self.user_factors = np.asarray(self.user_factors, dtype=np.float64)
        if self.user_factors.ndim != 2:
            raise ConfigError("cisrec: user_factors must be a U×D matrix.")
        if self.tree.dim != self.user_factors.shape[1]:
            raise ConfigError(
                f"cisrec: tree dim {self.tree.dim} != user factor dim {self.user_factors.shape[1]}."
            )

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.tree.item_count

    def copy(self) -> "HierModel":
        return HierModel(self.user_factors.copy(), self.tree.copy())

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.user_factors).all()
            and np.isfinite(self.tree.factors).all()
            and np.isfinite(self.tree.biases).all()
        )

    def distribution(self, u: int) -> np.ndarray:
        _check_user(self, u)
        return itemtree.full_distribution(self.tree, self.user_factors[u])

    def score_items(self, u: int, items: np.ndarray) -> np.ndarray:
        """후보 아이템의 선택 확률"""
        return self.distribution(u)[np.asarray(items, dtype=np.int64)]

    def item_prob(self, u: int, item: int) -> float:
        _check_user(self, u)
        return itemtree.item_prob(self.tree, self.user_factors[u], item)


Model = Union[FlatModel, HierModel]


def _check_user(model, u: int) -> None:
    if not isinstance(u, (int, np.integer)) or not 0 <= u < model.n_users:
        raise UnknownUserError(u)


def _check_item(model, i: int) -> None:
    if not isinstance(i, (int, np.integer)) or not 0 <= i < model.n_items:
        raise UnknownItemError(i)


def _pairs_of(data: Union[ImplicitDataset, np.ndarray, Sequence[Tuple[int, int]]]) -> np.ndarray:
    if isinstance(data, ImplicitDataset):
        return data.pairs
    return np.asarray(data, dtype=np.int64).reshape(-1, 2)


def log_count_bias(counts: np.ndarray) -> np.ndarray:
    """log 경험적 빈도 - 평균 (count 0 은 0.5 로 바닥)"""
    logs = np.log(np.maximum(np.asarray(counts, dtype=np.float64), UNSEEN_COUNT_FLOOR))
    return logs - logs.mean() if len(logs) else logs


def _init_rng(config: TrainConfig) -> np.random.Generator:
    return np.random.default_rng([config.seed, 0])


def _shuffle_rng(config: TrainConfig) -> np.random.Generator:
    return np.random.default_rng([config.seed, 1])


# ===================================================================================
# 초기화
def init_flat(
    n_users: int,
    n_items: int,
    dim: int,
    config: Optional[TrainConfig] = None,
    counts: Optional[np.ndarray] = None,
) -> FlatModel:
    config = config or TrainConfig()
    rng = _init_rng(config)
    users = rng.normal(0.0, config.user_init_scale, size=(n_users, dim))
    items = rng.normal(0.0, config.init_scale, size=(n_items, dim))
    bias = log_count_bias(counts) if counts is not None else np.zeros(n_items)
    return FlatModel(users, items, bias)


def init_hier(
    n_users: int,
    tree: ItemTree,
    config: Optional[TrainConfig] = None,
    counts: Optional[np.ndarray] = None,
) -> HierModel:
    config = config or TrainConfig()
    rng = _init_rng(config)
    users = rng.normal(0.0, config.user_init_scale, size=(n_users, tree.dim))
    tree = tree.copy()
    if counts is not None:
        itemtree.init_biases_from_counts(tree, counts)
    return HierModel(users, tree)


# ===================================================================================
# Flat 모델
def flat_prob(model: FlatModel, u: int, i: int) -> float:
    """max 를 빼서 계산한 exp(U_u·V_i + c_i) / Σ_k exp(U_u·V_k + c_k)"""
    _check_item(model, i)
    return float(softmax(model.scores(u))[i])


def flat_pair_gradients(model: FlatModel, u: int, i: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """
    log P(i|u) 의 기울기 (U_u, V, c) 와 log P(i|u) 값

    전체 softmax 를 정확히 계산하므로 pair 하나당 O(I·D) 입니다.
    """
    user = model.user_factors[u]
    scores = model.item_factors @ user + model.item_bias
    logp = log_softmax(scores)
    residual = -np.exp(logp)
    residual[i] += 1.0
    grad_user = model.item_factors.T @ residual
    grad_items = residual[:, None] * user[None, :]
    return grad_user, grad_items, residual, float(logp[i])


def _flat_step(model: FlatModel, u: int, i: int, lr: float, reg: float, freeze_users: bool) -> float:
    grad_user, grad_items, grad_bias, logp = flat_pair_gradients(model, u, i)
    model.item_factors += lr * (grad_items - reg * model.item_factors)
    model.item_bias += lr * (grad_bias - reg * model.item_bias)
    if not freeze_users:
        model.user_factors[u] += lr * (grad_user - reg * model.user_factors[u])
    return logp


def flat_loglik(model: FlatModel, pairs) -> float:
    total = 0.0
    for u, i in _pairs_of(pairs).tolist():
        total += float(log_softmax(model.scores(u))[i])
    return total


def train_flat(
    data: ImplicitDataset,
    config: TrainConfig,
    model: Optional[FlatModel] = None,
    dim: int = 25,
    callback: Optional[EpochCallback] = None,
    reporter: Optional[ProgressReporter] = None,
) -> FlatModel:
    """
    flat 모델을 pair 단위 SGA 로 학습합니다.

    model 을 넘기지 않으면 ``init_flat`` 으로 초기화합니다 (bias 는 log 빈도).
    넘긴 model 은 복사본에서 학습되므로 원본은 바뀌지 않습니다.

    Raises
    ------
    ContractError    학습 pair 가 없을 때
    DivergenceError  epoch 종료 시 유한하지 않은 파라미터
    """
    pairs = _pairs_of(data)
    if len(pairs) == 0:
        raise ContractError("cisrec: train_flat needs at least one training pair.")
    if model is None:
        model = init_flat(data.n_users, data.n_items, dim, config, data.item_counts)
    else:
        model = model.copy()
    reporter = reporter or null_reporter()
    rng = _shuffle_rng(config)

    for epoch in range(config.epochs):
        lr = config.rate(epoch)
        order = rng.permutation(len(pairs))
        loglik = 0.0
        for idx in order:
            u, i = pairs[idx]
            loglik += _flat_step(model, int(u), int(i), lr, config.reg, config.freeze_user_factors)
        if not model.is_finite():
            raise DivergenceError("non-finite parameter in flat model", stage="flat", epoch=epoch)
        logger.info("cisrec: flat epoch %d lr=%.4g train loglik=%.4f", epoch, lr, loglik)
        reporter.emit(EventKind.EPOCH, "flat", epoch=epoch, learning_rate=lr, train_loglik=loglik)
        if callback is not None:
            callback(epoch, model, loglik)
    return model


# ===================================================================================
# 계층 모델
def hier_pair_gradients(
    model: HierModel, u: int, i: int
) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray, np.ndarray]], float]:
    """
    log P(i|u) 의 기울기와 그 값

    Returns
    -------
    (grad_user, [(children, grad_Q, grad_b) per path node], log P(i|u))
    경로 위 노드들의 자식 집합만 건드리므로 pair 하나당 O(L_i · K · D).
    """
    tree = model.tree
    user = model.user_factors[u]
    ancestors, digits = tree.path_arrays(i)
    grad_user = np.zeros_like(user)
    node_grads: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    logp = 0.0
    for node, d in zip(ancestors.tolist(), digits.tolist()):
        kids = tree.child_array(node)
        q = tree.factors[kids]
        local = log_softmax(q @ user + tree.biases[kids])
        logp += float(local[d])
        residual = -np.exp(local)
        residual[d] += 1.0
        grad_user += q.T @ residual
        node_grads.append((kids, residual[:, None] * user[None, :], residual))
    return grad_user, node_grads, logp


def _hier_step(model: HierModel, u: int, i: int, lr: float, reg: float, freeze_users: bool) -> float:
    tree = model.tree
    grad_user, node_grads, logp = hier_pair_gradients(model, u, i)
    for kids, grad_q, grad_b in node_grads:
        tree.factors[kids] += lr * (grad_q - reg * tree.factors[kids])
        tree.biases[kids] += lr * (grad_b - reg * tree.biases[kids])
    if not freeze_users:
        model.user_factors[u] += lr * (grad_user - reg * model.user_factors[u])
    return logp


def hier_loglik(model: HierModel, pairs) -> float:
    """Σ log P(i|u). 빈 목록이면 0."""
    total = 0.0
    for u, i in _pairs_of(pairs).tolist():
        _check_user(model, u)
        total += itemtree.item_log_prob(model.tree, model.user_factors[u], i)
    return total


def train_hier(
    model: HierModel,
    data: ImplicitDataset,
    config: TrainConfig,
    callback: Optional[EpochCallback] = None,
    reporter: Optional[ProgressReporter] = None,
    stage: str = "hier",
) -> HierModel:
    """
    계층 모델을 pair 단위 SGA 로 학습합니다.
    pair (u, i) 마다 U_u 와 i 의 경로 위 노드들의 자식 Q, b 만 갱신합니다.
    ``config.freeze_user_factors`` 가 True 면 U 는 그대로입니다.
    """
    violations = itemtree.validate(model.tree)
    if violations:
        raise ContractError(f"cisrec: invalid tree: {violations[:3]}")
    pairs = _pairs_of(data)
    model = model.copy()
    reporter = reporter or null_reporter()
    rng = _shuffle_rng(config)

    for epoch in range(config.epochs):
        lr = config.rate(epoch)
        order = rng.permutation(len(pairs))
        loglik = 0.0
        for idx in order:
            u, i = pairs[idx]
            loglik += _hier_step(model, int(u), int(i), lr, config.reg, config.freeze_user_factors)
        if not model.is_finite():
            raise DivergenceError("non-finite parameter in hierarchical model", stage=stage, epoch=epoch)
        logger.info("cisrec: %s epoch %d lr=%.4g train loglik=%.4f", stage, epoch, lr, loglik)
        reporter.emit(EventKind.EPOCH, stage, epoch=epoch, learning_rate=lr, train_loglik=loglik)
        if callback is not None:
            callback(epoch, model, loglik)
    return model


def finetune(
    model: HierModel,
    data: ImplicitDataset,
    config: TrainConfig,
    callback: Optional[EpochCallback] = None,
    reporter: Optional[ProgressReporter] = None,
) -> HierModel:
    """
    트리 학습이 끝난 모델을 이어서 학습합니다. 유저 벡터는 항상 풀어 둡니다
    (트리 학습 동안에는 고정되어 있었음).
    """
    unfrozen = dataclasses.replace(config, freeze_user_factors=False)
    return train_hier(model, data, unfrozen, callback=callback, reporter=reporter, stage="finetune")


# ===================================================================================
# 추천
def topk(model: Model, u: int, candidates: Sequence[int], k: int) -> List[int]:
    """
    후보를 점수 내림차순(동점은 아이템 번호 오름차순)으로 정렬해 앞의 min(k, n) 개를 돌려줍니다.
    flat 은 정규화 전 점수, 계층 모델은 확률을 씁니다 (같은 순서).
    """
    if k < 1:
        raise ContractError("cisrec: topk needs k >= 1.")
    items = np.asarray(list(candidates), dtype=np.int64)
    if len(items) == 0:
        return []
    scores = model.score_items(u, items)
    order = np.lexsort((items, -scores))
    return items[order[:k]].tolist()
