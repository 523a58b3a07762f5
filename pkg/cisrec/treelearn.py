"""
treelearn
~~~~~~~~~

모델 기반 아이템 트리 학습기.

트리를 위에서 아래로 한 레벨씩 만듭니다. 각 레벨에서는 노드별로

1. 자식 노드 파라미터(Q, b) 적합 - 유저 벡터를 입력, 현재 digit 을 라벨로 하는
   K-way 다항 로지스틱 회귀
2. 아이템 digit 갱신 - ``R_i·Q_d + |U_i|·b_d + F̃(d)`` 의 argmax

를 번갈아 수행합니다. 아직 만들지 않은 아래 레벨의 기여는 노드 아래 아이템들의
count 기반 분포로 근사하며, 그 중 할당에 의존하는 부분이
``F̃ = -Σ_c Z_c ln Z_c`` (Z_c = 자식 c 에 배정된 아이템 count 합) 입니다.
F̃ 는 모든 아이템을 한 자식에 몰아넣는 퇴화 해를 벌점으로 막습니다.

유저 벡터는 랜덤 트리 CIS 모델에서 가져오며 트리 학습 내내 고정입니다.

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax, xlogy
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from . import codec
from .config import TreeInit, TreeLearnConfig
from .dataset import ImplicitDataset
from .errors import ContractError, DataError, DivergenceError, TreeFormatError
from .itemtree import ROOT, ItemTree
from .progress import EventKind, ProgressReporter, null_reporter

logger = logging.getLogger("cisrec.treelearn")

CHECKPOINT_FORMAT = "cisrec-treelearn-checkpoint"
LAPLACE = 1.0


# ===================================================================================
# 대리 표현 / F̃
@dataclass
class SurrogateReps:
    """
    vectors[i] = R_i = Σ_{u∈U_i} U_u, user_counts[i] = |U_i|
    ``items`` 에 없는 아이템의 행은 0 입니다.
    """

    vectors: np.ndarray
    user_counts: np.ndarray
    items: np.ndarray


def surrogate_reps(
    train: ImplicitDataset,
    user_factors: np.ndarray,
    items: Optional[Sequence[int]] = None,
) -> SurrogateReps:
    """
    아이템별 대리 표현을 정확히 합산합니다.

    Parameters
    ----------
    items:  계산할 아이템 (기본값: 인덱스 공간의 모든 아이템)

    Raises
    ------
    DataError  요청한 아이템 중 학습 유저가 없는 것이 있을 때
    """
    wanted = np.arange(train.n_items) if items is None else np.asarray(items, dtype=np.int64)
    vectors = np.zeros((train.n_items, user_factors.shape[1]))
    counts = np.zeros(train.n_items, dtype=np.int64)
    empty = []
    for i in wanted.tolist():
        users = train.item_users[i]
        if len(users) == 0:
            empty.append(i)
            continue
        vectors[i] = user_factors[users].sum(axis=0)
        counts[i] = len(users)
    if empty:
        raise DataError(f"cisrec: {len(empty)} item(s) have no training users, e.g. {empty[:5]}")
    return SurrogateReps(vectors, counts, wanted)


def ftilde(child_counts: Sequence[float], sign: int = -1) -> float:
    """
    F̃ = -Σ_c Z_c ln Z_c  (0·ln 0 := 0)

    ``sign=+1`` 은 디버그 비교용입니다.
    """
    z = np.asarray(child_counts, dtype=np.float64)
    if (z < 0).any():
        raise ContractError("cisrec: child counts must be non-negative.")
    return float(sign * xlogy(z, z).sum())


def count_distribution(counts: np.ndarray) -> np.ndarray:
    """노드 아래 아이템들의 count 기반 최적 분포 N_i / Σ N_m"""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return np.full(len(counts), 1.0 / max(len(counts), 1))
    return counts / total


# ===================================================================================
# 레벨 상태
@dataclass
class SweepRecord:
    round: int
    changed: int
    before: float
    after: float


@dataclass
class NodeState:
    """
    활성 노드 하나의 작업 상태

    digits 는 0-based 자식 슬롯 번호이고, 슬롯은 K 개가 항상 존재합니다
    (비어 있는 슬롯은 레벨이 끝날 때 버려집니다).
    """

    node: int
    items: np.ndarray
    digits: np.ndarray
    factors: np.ndarray
    biases: np.ndarray
    item_counts: np.ndarray
    child_counts: np.ndarray
    cached_ftilde: float
    sign: int
    seed: int
    obs_users: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    obs_pos: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    position: Dict[int, int] = field(default_factory=dict)
    sweeps: List[SweepRecord] = field(default_factory=list)
    fits: int = 0

    @property
    def arity(self) -> int:
        return len(self.child_counts)

    def child_items(self, c: int) -> np.ndarray:
        return self.items[self.digits == c]

    def labels(self) -> np.ndarray:
        return self.digits[self.obs_pos]

    def recompute_ftilde(self) -> float:
        z = np.zeros(self.arity)
        np.add.at(z, self.digits, self.item_counts)
        return ftilde(z, self.sign)

    def move(self, item: int, target: int) -> None:
        """아이템을 target 슬롯으로 옮기며 Z 와 F̃ 캐시를 상수 시간에 갱신합니다."""
        pos = self.position.get(int(item))
        if pos is None:
            raise ContractError(f"cisrec: item {item} is not under node {self.node}.")
        current = int(self.digits[pos])
        if current == target:
            return
        n = self.item_counts[pos]
        z = self.child_counts
        self.cached_ftilde += self.sign * (xlogy(z[current] - n, z[current] - n) - xlogy(z[current], z[current]))
        z[current] -= n
        self.cached_ftilde += self.sign * (xlogy(z[target] + n, z[target] + n) - xlogy(z[target], z[target]))
        z[target] += n
        self.digits[pos] = target


@dataclass
class LevelState:
    """
    한 레벨의 작업 상태: 활성 노드들과 공유(읽기 전용) 데이터
    """

    level: int
    nodes: List[NodeState]
    user_factors: np.ndarray
    reps: SurrogateReps
    item_counts: np.ndarray
    item_users: List[np.ndarray]
    config: TreeLearnConfig
    threads: int = 1


def node_seed(base: int, level: int, node: int, salt: int = 0) -> int:
    return int(np.random.SeedSequence([base, level, node, salt]).generate_state(1)[0])


def make_node_state(
    node: int,
    items: np.ndarray,
    digits: np.ndarray,
    arity: int,
    dim: int,
    item_counts: np.ndarray,
    item_users: List[np.ndarray],
    config: TreeLearnConfig,
    seed: int,
) -> NodeState:
    items = np.asarray(items, dtype=np.int64)
    digits = np.asarray(digits, dtype=np.int64).copy()
    if len(items) != len(digits):
        raise ContractError("cisrec: one digit per item is required.")
    if len(digits) and (digits.min() < 0 or digits.max() >= arity):
        raise ContractError("cisrec: digits must be in 0..K-1.")
    rng = np.random.default_rng([seed, 7])
    local_counts = np.asarray(item_counts, dtype=np.float64)[items]
    z = np.zeros(arity)
    np.add.at(z, digits, local_counts)
    users = [item_users[i] for i in items.tolist()]
    lengths = np.asarray([len(u) for u in users], dtype=np.int64)
    state = NodeState(
        node=node,
        items=items,
        digits=digits,
        factors=rng.normal(0.0, config.init_scale, size=(arity, dim)) if config.init_scale > 0 else np.zeros((arity, dim)),
        biases=np.zeros(arity),
        item_counts=local_counts,
        child_counts=z,
        cached_ftilde=ftilde(z, config.ftilde_sign),
        sign=config.ftilde_sign,
        seed=seed,
        obs_users=np.concatenate(users).astype(np.int64) if users else np.empty(0, dtype=np.int64),
        obs_pos=np.repeat(np.arange(len(items)), lengths),
        position={int(item): p for p, item in enumerate(items.tolist())},
    )
    return state


# ===================================================================================
# 초기 할당
def init_assign_random(items: Sequence[int], arity: int, seed: int) -> np.ndarray:
    """아이템을 K 개 자식에 균등 무작위로 배정 (0-based digit)"""
    return np.random.default_rng(seed).integers(0, arity, size=len(items))


def init_assign_cluster(
    items: Sequence[int],
    reps: SurrogateReps,
    arity: int,
    seed: int,
    max_iter: int = 50,
    mean: bool = True,
) -> np.ndarray:
    """
    대리 표현을 k-means(k-means++ 시드, 제곱 유클리드)로 K 개로 묶어 초기 digit 을 만듭니다.
    기본 입력은 평균 유저 벡터 R_i / |U_i| 이고, mean=False 면 R_i 그대로 씁니다.

    아이템이 K 개보다 적으면 아이템마다 자기 자식을 가집니다.
    학습 유저가 없는 아이템은 순서대로 돌아가며 배정합니다.
    """
    items = np.asarray(items, dtype=np.int64)
    n = len(items)
    if n < arity:
        return np.arange(n, dtype=np.int64)

    digits = np.zeros(n, dtype=np.int64)
    seen = reps.user_counts[items] > 0
    unseen = np.flatnonzero(~seen)
    digits[unseen] = np.arange(len(unseen)) % arity

    points = reps.vectors[items[seen]]
    if mean and len(points):
        points = points / reps.user_counts[items[seen]][:, None]
    if len(points) >= arity:
        with warnings.catch_warnings():
            # 같은 점들만 있으면 군집 수가 K 보다 적다는 경고가 납니다
            warnings.simplefilter("ignore", ConvergenceWarning)
            kmeans = KMeans(
                n_clusters=arity,
                init="k-means++",
                n_init=1,
                max_iter=max_iter,
                random_state=seed,
            )
            digits[seen] = kmeans.fit_predict(points)
    elif len(points):
        digits[seen] = np.arange(len(points))
    return digits


# ===================================================================================
# 노드 파라미터 적합
def node_loglik(user_factors: np.ndarray, ns: NodeState) -> float:
    """Σ_{i∈I(n)} Σ_{u∈U_i} log P(d^i | n, u) - 레벨 목적 함수의 첫 항"""
    if len(ns.obs_users) == 0:
        return 0.0
    logits = user_factors[ns.obs_users] @ ns.factors.T + ns.biases
    local = log_softmax(logits, axis=1)
    return float(local[np.arange(len(ns.obs_users)), ns.labels()].sum())


def node_gradients(user_factors: np.ndarray, ns: NodeState) -> Tuple[np.ndarray, np.ndarray]:
    """node_loglik 의 (Q, b) 기울기"""
    if len(ns.obs_users) == 0:
        return np.zeros_like(ns.factors), np.zeros_like(ns.biases)
    users = user_factors[ns.obs_users]
    probs = np.exp(log_softmax(users @ ns.factors.T + ns.biases, axis=1))
    residual = -probs
    residual[np.arange(len(users)), ns.labels()] += 1.0
    return residual.T @ users, residual.sum(axis=0)


def update_node_params(
    state: LevelState,
    ns: NodeState,
    config: Optional[TreeLearnConfig] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    노드의 자식 Q, b 를 SGD 로 적합합니다 (유저 벡터 고정).
    관측 (u, i) 마다 한 번씩 갱신하며 ``node_passes`` 번 반복합니다.

    Raises
    ------
    DivergenceError  파라미터가 유한하지 않게 되면 (노드 번호 포함)
    """
    config = config or state.config
    rng = np.random.default_rng([ns.seed, 11, ns.fits])
    ns.fits += 1
    users = state.user_factors
    labels = ns.labels()
    q, b = ns.factors, ns.biases
    for p in range(config.node_passes):
        lr = config.rate(p)
        for idx in rng.permutation(len(ns.obs_users)).tolist():
            user = users[ns.obs_users[idx]]
            local = log_softmax(q @ user + b)
            residual = -np.exp(local)
            residual[labels[idx]] += 1.0
            q += lr * (np.outer(residual, user) - config.reg * q)
            b += lr * (residual - config.reg * b)
        if not (np.isfinite(q).all() and np.isfinite(b).all()):
            raise DivergenceError("non-finite node parameters", stage="treelearn", node=ns.node)
    return q, b


# ===================================================================================
# digit 갱신
def digit_scores(state: LevelState, ns: NodeState, item: int) -> Tuple[np.ndarray, int]:
    """
    아이템을 잠시 빼낸 상태에서 후보 digit 별 ``R_i·Q_d + |U_i|·b_d + F̃(d)`` 와 현재 digit
    """
    pos = ns.position.get(int(item))
    if pos is None:
        raise ContractError(f"cisrec: item {item} is not under node {ns.node}.")
    current = int(ns.digits[pos])
    n = ns.item_counts[pos]
    z = ns.child_counts.copy()
    removed = ns.cached_ftilde + ns.sign * (xlogy(z[current] - n, z[current] - n) - xlogy(z[current], z[current]))
    z[current] -= n
    candidate_f = removed + ns.sign * (xlogy(z + n, z + n) - xlogy(z, z))
    fit = ns.factors @ state.reps.vectors[item] + state.reps.user_counts[item] * ns.biases
    return fit + candidate_f, current


def digit_update(state: LevelState, ns: NodeState, item: int) -> int:
    """
    아이템 하나의 digit 을 argmax 로 갱신하고 1-based digit 을 돌려줍니다.
    동점은 가장 작은 digit. 학습 관측이 없는 아이템은 움직이지 않습니다.
    """
    scores, current = digit_scores(state, ns, item)
    if ns.item_counts[ns.position[int(item)]] == 0 and state.reps.user_counts[item] == 0:
        return current + 1
    best = int(np.argmax(scores))
    ns.move(item, best)
    return best + 1


def proxy_objective(state: LevelState, ns: NodeState) -> float:
    """첫 항(현재 노드 파라미터) + F̃"""
    return node_loglik(state.user_factors, ns) + ns.cached_ftilde


def _sweep(state: LevelState, ns: NodeState) -> int:
    changed = 0
    for pos, item in enumerate(ns.items.tolist()):
        before = int(ns.digits[pos])
        if digit_update(state, ns, item) - 1 != before:
            changed += 1
    return changed


def _learn_node(state: LevelState, ns: NodeState, rounds: int) -> NodeState:
    if rounds <= 0:
        return ns
    movable = max(1, int(((ns.item_counts > 0) | (state.reps.user_counts[ns.items] > 0)).sum()))
    for r in range(rounds):
        update_node_params(state, ns)
        before = proxy_objective(state, ns)
        changed = _sweep(state, ns)
        after = proxy_objective(state, ns)
        ns.sweeps.append(SweepRecord(r, changed, before, after))
        logger.debug(
            "cisrec: level %d node %d round %d changed=%d proxy %.6f -> %.6f",
            state.level, ns.node, r, changed, before, after,
        )
        if changed < state.config.min_change_fraction * movable or changed == 0:
            break
    # 확정된 digit 에 맞춘 마지막 적합
    update_node_params(state, ns)
    return ns


def learn_level(state: LevelState, rounds: Optional[int] = None) -> LevelState:
    """
    레벨의 모든 활성 노드에서 파라미터 적합과 digit sweep 을 번갈아 수행합니다.

    노드끼리는 독립이므로 ``state.threads`` > 1 이면 병렬로 처리하고,
    결과는 노드 순서대로 합칩니다 (스레드 수와 무관하게 같은 결과).
    조기 종료(digit 변경 < min_change_fraction)는 노드별로 판단합니다.
    rounds = 0 이면 초기 상태를 그대로 돌려줍니다.
    """
    rounds = state.config.rounds if rounds is None else rounds
    if rounds <= 0 or not state.nodes:
        return state
    if state.threads > 1 and len(state.nodes) > 1:
        with ThreadPoolExecutor(max_workers=state.threads) as pool:
            list(pool.map(lambda ns: _learn_node(state, ns, rounds), state.nodes))
    else:
        for ns in state.nodes:
            _learn_node(state, ns, rounds)
    return state


# ===================================================================================
# 트리 빌더
class TreeBuilder:
    """
    레벨 단위로 자라는 부분 트리와 프런티어

    각 레벨이 끝나면 ``to_dict`` 로 체크포인트를 남길 수 있고,
    노드별 시드는 (seed, level, node) 에서 유도되므로 재개해도 같은 트리가 나옵니다.
    """

    def __init__(self, arity: int, dim: int, item_count: int) -> None:
        self.arity = arity
        self.dim = dim
        self.item_count = item_count
        self.parent: List[int] = [-1]
        self.children: List[List[int]] = [[]]
        self.leaf_item: List[int] = [-1]
        self.factors: List[np.ndarray] = [np.zeros(dim)]
        self.biases: List[float] = [0.0]
        # (노드, 아이템들, 연속 정체 횟수)
        self.frontier: List[Tuple[int, np.ndarray, int]] = []
        self.level = 0
        self.location = np.zeros(item_count, dtype=np.int64)
        self.history: List[Dict[str, float]] = []

        if item_count == 1:
            self.add_node(ROOT, np.zeros(dim), 0.0, item=0)
        elif item_count > 1:
            self.frontier.append((ROOT, np.arange(item_count, dtype=np.int64), 0))

    @property
    def done(self) -> bool:
        return not self.frontier

    def add_node(self, parent: int, q: np.ndarray, b: float, item: int = -1) -> int:
        index = len(self.parent)
        self.parent.append(parent)
        self.children.append([])
        self.children[parent].append(index)
        self.leaf_item.append(item)
        self.factors.append(np.array(q, dtype=np.float64))
        self.biases.append(float(b))
        if item >= 0:
            self.location[item] = index
        return index

    def build(self) -> ItemTree:
        if self.frontier:
            raise ContractError("cisrec: tree is not finished; frontier nodes remain.")
        return ItemTree(
            self.arity, self.dim, self.parent, self.children, self.leaf_item,
            np.vstack(self.factors), np.asarray(self.biases), self.item_count,
        )

    # 부분 모델 평가
    def _reach_logprob(self, node: int, user: np.ndarray) -> float:
        total = 0.0
        while self.parent[node] >= 0:
            owner = self.parent[node]
            kids = self.children[owner]
            logits = np.asarray([self.factors[k] @ user + self.biases[k] for k in kids])
            total += float(log_softmax(logits)[kids.index(node)])
            node = owner
        return total

    def partial_loglik(self, pairs: np.ndarray, user_factors: np.ndarray, item_counts: np.ndarray) -> float:
        """
        지금까지의 트리 + 프런티어 아래 count 분포(라플라스 평활)로 본 로그 우도
        """
        frontier_mass: Dict[int, Tuple[float, int]] = {
            node: (float(item_counts[items].sum()), len(items)) for node, items, _ in self.frontier
        }
        total = 0.0
        for u, i in np.asarray(pairs).reshape(-1, 2).tolist():
            node = int(self.location[i])
            total += self._reach_logprob(node, user_factors[u])
            if node in frontier_mass:
                mass, size = frontier_mass[node]
                total += float(np.log((item_counts[i] + LAPLACE) / (mass + LAPLACE * size)))
        return total

    # 체크포인트
    def to_dict(self) -> Dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "arity": self.arity,
            "dim": self.dim,
            "item_count": self.item_count,
            "level": self.level,
            "parent": list(self.parent),
            "children": [list(c) for c in self.children],
            "leaf_item": list(self.leaf_item),
            "factors": codec.encode_matrix(np.vstack(self.factors)),
            "biases": codec.encode_matrix(np.asarray(self.biases)),
            "frontier": [[node, items.tolist(), stalls] for node, items, stalls in self.frontier],
            "location": self.location.tolist(),
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, document: Dict) -> "TreeBuilder":
        if document.get("format") != CHECKPOINT_FORMAT:
            raise TreeFormatError("not a tree-learning checkpoint", 0)
        builder = cls.__new__(cls)
        builder.arity = int(document["arity"])
        builder.dim = int(document["dim"])
        builder.item_count = int(document["item_count"])
        builder.level = int(document["level"])
        builder.parent = list(document["parent"])
        builder.children = [list(c) for c in document["children"]]
        builder.leaf_item = list(document["leaf_item"])
        factors = codec.decode_matrix(document["factors"])
        builder.factors = [row.copy() for row in factors.reshape(len(builder.parent), builder.dim)]
        builder.biases = codec.decode_matrix(document["biases"]).tolist()
        builder.frontier = [
            (int(node), np.asarray(items, dtype=np.int64), int(stalls)) for node, items, stalls in document["frontier"]
        ]
        builder.location = np.asarray(document["location"], dtype=np.int64)
        builder.history = list(document.get("history", []))
        return builder

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(codec.dumps(self.to_dict()))
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TreeBuilder":
        return cls.from_dict(codec.loads(Path(path).read_bytes()))


def _forced_split(items: np.ndarray, reps: SurrogateReps, arity: int) -> List[np.ndarray]:
    """
    대리 표현의 첫 주성분 방향으로 정렬한 뒤 K 개의 연속 구간으로 나눕니다 (K=2 면 중앙값 분할).
    """
    counts = reps.user_counts[items].astype(np.float64)
    points = reps.vectors[items] / np.maximum(counts, 1.0)[:, None]
    centered = points - points.mean(axis=0)
    if np.allclose(centered, 0.0):
        projection = np.zeros(len(items))
    else:
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        projection = centered @ vt[0]
    order = np.lexsort((items, projection))
    return [items[part] for part in np.array_split(order, min(arity, len(items)))]


def _initial_digits(
    items: np.ndarray,
    reps: SurrogateReps,
    config: TreeLearnConfig,
    seed: int,
) -> np.ndarray:
    if config.init is TreeInit.CLUSTER:
        return init_assign_cluster(items, reps, config.arity, seed, config.kmeans_max_iter, config.cluster_mean)
    return init_assign_random(items, config.arity, seed)


def learn_tree(
    train: ImplicitDataset,
    user_factors: np.ndarray,
    arity: Optional[int] = None,
    config: Optional[TreeLearnConfig] = None,
    validation: Optional[ImplicitDataset] = None,
    reporter: Optional[ProgressReporter] = None,
    threads: int = 1,
    checkpoint: Optional[Union[str, Path]] = None,
    on_level: Optional[Callable[[TreeBuilder], None]] = None,
) -> ItemTree:
    """
    고정된 유저 벡터로 아이템 트리를 위에서 아래로 학습합니다.

    프런티어의 각 노드(아이템 2개 이상)에 대해 초기 할당 -> learn_level -> digit 확정 ->
    자식 노드 생성을 반복하고, 아이템이 1개인 노드는 잎이 됩니다. 결과 트리는
    학습 중 얻은 노드 파라미터를 그대로 가지고 있어 바로 finetune 할 수 있습니다.

    한 자식이 노드의 아이템을 모두 가져가면 다음 레벨에서 다른 시드로 다시 시도하고,
    ``max_stalls`` 번 연속이면 주성분 방향 중앙값 분할을 강제합니다 (경고 로그).

    Parameters
    ----------
    arity:       K (기본값: config.arity)
    validation:  레벨마다 부분 모델의 로그 우도를 계산할 pair
    checkpoint:  레벨마다 빌더 상태를 저장할 경로. 이미 있으면 그 상태에서 재개합니다.
    """
    config = config or TreeLearnConfig()
    if arity is not None and arity != config.arity:
        config = dataclasses.replace(config, arity=arity)
    reporter = reporter or null_reporter()
    user_factors = np.asarray(user_factors, dtype=np.float64)
    if user_factors.shape[0] != train.n_users:
        raise ContractError("cisrec: user_factors must have one row per training user.")
    dim = user_factors.shape[1]
    counts = train.item_counts
    seen = np.flatnonzero([len(u) > 0 for u in train.item_users])
    reps = surrogate_reps(train, user_factors, seen)
    reps.items = np.arange(train.n_items)

    builder: Optional[TreeBuilder] = None
    if checkpoint is not None and Path(checkpoint).exists():
        builder = TreeBuilder.load(checkpoint)
        if (builder.arity, builder.dim, builder.item_count) != (config.arity, dim, train.n_items):
            raise TreeFormatError("checkpoint does not match this run (arity/dim/items)", 0)
        logger.info("cisrec: resuming tree learning from %s at level %d", checkpoint, builder.level)
    if builder is None:
        builder = TreeBuilder(config.arity, dim, train.n_items)
        if validation is not None:
            base = builder.partial_loglik(validation.pairs, user_factors, counts)
            builder.history.append({"level": 0, "valid_loglik": base})
            logger.info("cisrec: level 0 validation loglik %.4f", base)

    while not builder.done:
        level = builder.level + 1
        nodes = [
            make_node_state(
                node, items,
                _initial_digits(items, reps, config, node_seed(config.seed, level, node, 1)),
                config.arity, dim, counts, train.item_users, config,
                node_seed(config.seed, level, node),
            )
            for node, items, _ in builder.frontier
        ]
        state = LevelState(level, nodes, user_factors, reps, counts, train.item_users, config, threads)
        learn_level(state)

        frontier: List[Tuple[int, np.ndarray, int]] = []
        forced = 0
        for (node, items, stalls), ns in zip(builder.frontier, state.nodes):
            groups = [(c, ns.child_items(c)) for c in range(config.arity)]
            groups = [(c, members) for c, members in groups if len(members)]
            if len(groups) == 1:
                stalls += 1
                if stalls < config.max_stalls:
                    frontier.append((node, items, stalls))
                    continue
                forced += 1
                logger.warning(
                    "cisrec: node %d (%d items) kept all items in one child for %d levels; forcing a median split",
                    node, len(items), stalls,
                )
                reporter.emit(EventKind.WARNING, "treelearn", level=level, node=node, forced_split=True)
                for c, members in enumerate(_forced_split(items, reps, config.arity)):
                    for item in members.tolist():
                        ns.move(item, c)
                update_node_params(state, ns)
                groups = [(c, ns.child_items(c)) for c in range(config.arity) if len(ns.child_items(c))]
            for c, members in groups:
                leaf_item = int(members[0]) if len(members) == 1 else -1
                child = builder.add_node(node, ns.factors[c], ns.biases[c], item=leaf_item)
                if leaf_item < 0:
                    for item in members.tolist():
                        builder.location[item] = child
                    frontier.append((child, members, 0))
        builder.frontier = frontier
        builder.level = level

        changed = sum(s.changed for ns in state.nodes for s in ns.sweeps)
        proxy = float(sum(proxy_objective(state, ns) for ns in state.nodes))
        record: Dict[str, float] = {
            "level": level,
            "nodes": len(state.nodes),
            "digits_changed": changed,
            "proxy_objective": proxy,
            "forced_splits": forced,
        }
        if validation is not None:
            record["valid_loglik"] = builder.partial_loglik(validation.pairs, user_factors, counts)
        builder.history.append(record)
        logger.info(
            "cisrec: level %d nodes=%d changed=%d proxy=%.4f%s",
            level, len(state.nodes), changed, proxy,
            f" valid_loglik={record['valid_loglik']:.4f}" if "valid_loglik" in record else "",
        )
        reporter.emit(EventKind.LEVEL, "treelearn", **record)
        if checkpoint is not None:
            builder.save(checkpoint)
        if on_level is not None:
            on_level(builder)

    tree = builder.build()
    lengths = tree.code_lengths()
    logger.info(
        "cisrec: learned tree with %d nodes, code length min=%d max=%d mean=%.2f",
        tree.n_nodes, lengths.min(), lengths.max(), lengths.mean(),
    )
    return tree
