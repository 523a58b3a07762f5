"""
itemtree
~~~~~~~~

아이템이 잎(leaf)에 하나씩 달린 K-ary 트리와 노드 파라미터, 그리고
트리 구조의 아이템 선택 확률을 다룹니다.

각 내부 노드에서 k 번째 자식을 고를 확률은 자식들의 점수
``U_u · Q_c + b_c`` 에 대한 softmax 이고, 아이템의 확률은 루트에서 그 아이템의
잎까지 내려가는 선택 확률들의 곱입니다.

노드 파라미터는 트리 단위 배열(``factors``: N×D, ``biases``: N)에 저장되고,
``TreeNode`` 는 그 배열을 들여다보는 읽기용 뷰입니다.

트리 파일 포맷 (UTF-8 JSON, 키 정렬, 공백 없음)::

    {
      "format": "cisrec-item-tree",
      "version": 1,
      "header": {"arity": K, "dim": D, "item_count": I},
      "nodes": [
        {"parent": -1, "children": [1, 2], "item": null, "params": "<base64>"},
        ...
      ],
      "meta": {...}            # 선택, 산출물 메타데이터
    }

``params`` 는 Q_n (D 개) 다음에 b_n (1 개)을 이어 붙인 little-endian float64 블록입니다.
노드 배열의 순서가 노드 번호이며 루트는 0 번입니다.

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from . import codec
from .errors import ContractError, TreeFormatError, UnknownItemError

logger = logging.getLogger("cisrec.itemtree")

ROOT = 0
FORMAT_NAME = "cisrec-item-tree"
FORMAT_VERSION = 1

DEFAULT_NODE_INIT_SCALE = 0.01
UNSEEN_COUNT_FLOOR = 0.5


@dataclass(frozen=True)
class ItemCode:
    """루트에서 잎까지의 자식 번호 열. 각 digit 은 1..K"""

    digits: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.digits)

    def __iter__(self) -> Iterator[int]:
        return iter(self.digits)

    def __getitem__(self, j: int) -> int:
        return self.digits[j]


@dataclass
class TreeNode:
    """노드 하나의 뷰. ``q`` 는 트리의 factors 배열 행을 그대로 가리킵니다."""

    index: int
    q: np.ndarray
    b: float
    children: Tuple[int, ...] = field(default_factory=tuple)
    item: Optional[int] = None
    parent: int = -1

    @property
    def is_leaf(self) -> bool:
        return not self.children


class ItemTree:
    """
    K-ary 아이템 트리

    Parameters
    ----------
    arity:      최대 자식 수 K (>= 2)
    dim:        노드 벡터 차원 D
    parent:     노드별 부모 번호 (루트는 -1)
    children:   노드별 자식 번호 목록 (순서가 곧 digit)
    leaf_item:  노드별 아이템 번호 (내부 노드는 -1)
    factors:    N×D 노드 벡터 Q
    biases:     N 노드 bias b
    item_count: 아이템 수 I (생략 시 잎의 수)
    """

    def __init__(
        self,
        arity: int,
        dim: int,
        parent: Sequence[int],
        children: Sequence[Sequence[int]],
        leaf_item: Sequence[int],
        factors: Optional[np.ndarray] = None,
        biases: Optional[np.ndarray] = None,
        item_count: Optional[int] = None,
    ) -> None:
        if arity < 2:
            raise ContractError("cisrec: tree arity must be >= 2.")
        if dim < 1:
            raise ContractError("cisrec: tree dim must be >= 1.")
        n_nodes = len(parent)
        self.arity = int(arity)
        self.dim = int(dim)
        self.parent = np.asarray(parent, dtype=np.int64)
        self.children: List[List[int]] = [list(map(int, c)) for c in children]
        self.leaf_item = np.asarray(leaf_item, dtype=np.int64)
        self.factors = (
            np.zeros((n_nodes, dim)) if factors is None else np.array(factors, dtype=np.float64)
        )
        self.biases = np.zeros(n_nodes) if biases is None else np.array(biases, dtype=np.float64)
        if len(self.children) != n_nodes or len(self.leaf_item) != n_nodes:
            raise ContractError("cisrec: parent, children and leaf_item must have one entry per node.")
        if self.factors.shape != (n_nodes, dim) or self.biases.shape != (n_nodes,):
            raise ContractError("cisrec: parameter arrays do not match node count / dim.")
        self.item_count = int(item_count) if item_count is not None else int((self.leaf_item >= 0).sum())
        self.reindex()

    # 구조 인덱스
    def reindex(self) -> None:
        """
        구조(topology)로부터 잎 매핑, 코드 테이블, 경로 캐시를 다시 만듭니다.
        구조를 직접 바꾼 뒤에는 반드시 호출해야 합니다.
        """
        self.leaf_of = np.full(self.item_count, -1, dtype=np.int64)
        self.codes: Dict[int, ItemCode] = {}
        self._paths: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        self._child_arrays = [np.asarray(c, dtype=np.int64) for c in self.children]

        order: List[int] = []
        seen = np.zeros(self.n_nodes, dtype=bool)
        stack: List[Tuple[int, Tuple[int, ...], Tuple[int, ...]]] = [(ROOT, (), ())]
        while stack:
            node, digits, ancestors = stack.pop()
            if node < 0 or node >= self.n_nodes or seen[node]:
                continue
            seen[node] = True
            order.append(node)
            item = int(self.leaf_item[node])
            if not self.children[node]:
                if 0 <= item < self.item_count and self.leaf_of[item] < 0 and digits:
                    self.leaf_of[item] = node
                    self.codes[item] = ItemCode(digits)
                    self._paths[item] = (
                        np.asarray(ancestors, dtype=np.int64),
                        np.asarray(digits, dtype=np.int64) - 1,
                    )
                continue
            for k in range(len(self.children[node]) - 1, -1, -1):
                stack.append((self.children[node][k], digits + (k + 1,), ancestors + (node,)))
        # 부모가 자식보다 먼저 오는 순서
        self._order = order

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @property
    def root(self) -> int:
        return ROOT

    def node(self, index: int) -> TreeNode:
        item = int(self.leaf_item[index])
        return TreeNode(
            index=index,
            q=self.factors[index],
            b=float(self.biases[index]),
            children=tuple(self.children[index]),
            item=item if item >= 0 else None,
            parent=int(self.parent[index]),
        )

    def is_leaf(self, index: int) -> bool:
        return not self.children[index]

    def child_array(self, index: int) -> np.ndarray:
        return self._child_arrays[index]

    def internal_nodes(self) -> List[int]:
        """부모가 자식보다 먼저 오는 순서의 내부 노드 목록"""
        return [n for n in self._order if self.children[n]]

    def path_arrays(self, item: int) -> Tuple[np.ndarray, np.ndarray]:
        """(n_0..n_{L-1}, 0-based digits) - 학습 루프용"""
        try:
            return self._paths[item]
        except KeyError:
            raise UnknownItemError(item) from None

    def code_lengths(self) -> np.ndarray:
        return np.asarray([len(self.codes[i]) for i in sorted(self.codes)], dtype=np.int64)

    def copy(self) -> "ItemTree":
        return ItemTree(
            self.arity, self.dim, self.parent.copy(), [list(c) for c in self.children],
            self.leaf_item.copy(), self.factors.copy(), self.biases.copy(), self.item_count,
        )

    def __repr__(self) -> str:
        lengths = self.code_lengths()
        depth = f"{lengths.min()}..{lengths.max()}" if len(lengths) else "-"
        return f"ItemTree(items={self.item_count}, nodes={self.n_nodes}, K={self.arity}, D={self.dim}, depth={depth})"


# ===================================================================================
# 생성
def _init_params(rng: np.random.Generator, n_nodes: int, dim: int, scale: float) -> Tuple[np.ndarray, np.ndarray]:
    factors = rng.normal(0.0, scale, size=(n_nodes, dim)) if scale > 0 else np.zeros((n_nodes, dim))
    factors[ROOT] = 0.0
    return factors, np.zeros(n_nodes)


def complete_layout(
    items: Sequence[int],
    arity: int,
) -> Tuple[List[int], List[List[int]], List[int]]:
    """
    아이템을 높이 h = ⌈log_K I⌉ 인 완전 K-ary 트리의 잎에 놓는 (parent, children, leaf_item) 구조.

    깊이 h-1 노드는 왼쪽부터 K 개씩 자식을 채우고 나머지는 잎이 됩니다 (left-packed).
    마지막으로 채워지는 노드의 자식은 항상 2 개 이상입니다.
    """
    items = [int(i) for i in items]
    n = len(items)
    parent: List[int] = [-1]
    children: List[List[int]] = [[]]
    leaf_item: List[int] = [-1]

    def add(owner: int, item: int = -1) -> int:
        index = len(parent)
        parent.append(owner)
        children.append([])
        children[owner].append(index)
        leaf_item.append(item)
        return index

    if n <= arity:
        for item in items:
            add(ROOT, item)
        return parent, children, leaf_item

    height = 1
    while arity ** height < n:
        height += 1
    width = arity ** (height - 1)
    # 깊이 h-1 노드 width 개 중 앞쪽 full 개는 잎 K 개, 그다음 하나는 rem+1 개를 가짐
    full, rem = divmod(n - width, arity - 1)
    slots = [arity] * full + ([rem + 1] if rem else [])
    slots += [1] * (width - len(slots))

    cursor = iter(items)
    level = [ROOT]
    for _ in range(height - 2):
        level = [add(owner) for owner in level for _ in range(arity)]
    owners = [owner for owner in level for _ in range(arity)]
    packed = []
    for owner, slot in zip(owners, slots):
        if slot == 1:
            add(owner, next(cursor))
        else:
            packed.append((add(owner), slot))
    for node, slot in packed:
        for _ in range(slot):
            add(node, next(cursor))
    return parent, children, leaf_item


def random_balanced(
    item_count: int,
    arity: int,
    dim: int,
    seed: int,
    init_scale: float = DEFAULT_NODE_INIT_SCALE,
) -> ItemTree:
    """
    아이템을 시드로 섞은 뒤 높이 ⌈log_K I⌉ 의 완전 트리 잎에 배치합니다.
    마지막 레벨은 왼쪽부터 채워지므로 코드 길이의 차이는 최대 1 입니다.
    """
    if item_count < 1:
        raise ContractError("cisrec: random_balanced needs item_count >= 1.")
    if arity < 2:
        raise ContractError("cisrec: random_balanced needs arity >= 2.")
    rng = np.random.default_rng(seed)
    items = rng.permutation(item_count)
    parent, children, leaf_item = complete_layout(items, arity)
    factors, biases = _init_params(rng, len(parent), dim, init_scale)
    tree = ItemTree(arity, dim, parent, children, leaf_item, factors, biases, item_count)
    logger.debug("cisrec: built random balanced tree %r", tree)
    return tree


def depth_one(
    item_count: int,
    dim: int,
    factors: Optional[np.ndarray] = None,
    biases: Optional[np.ndarray] = None,
) -> ItemTree:
    """
    루트 아래에 아이템 i 가 i+1 번째 잎으로 달린 1단 트리.
    ``factors`` / ``biases`` 는 아이템 순서의 잎 파라미터입니다 (flat 모델의 V, c).
    """
    if item_count < 1:
        raise ContractError("cisrec: depth_one needs item_count >= 1.")
    parent = [-1] + [ROOT] * item_count
    children = [list(range(1, item_count + 1))] + [[] for _ in range(item_count)]
    leaf_item = [-1] + list(range(item_count))
    node_factors = np.zeros((item_count + 1, dim))
    node_biases = np.zeros(item_count + 1)
    if factors is not None:
        node_factors[1:] = factors
    if biases is not None:
        node_biases[1:] = biases
    return ItemTree(max(2, item_count), dim, parent, children, leaf_item, node_factors, node_biases, item_count)


def subtree_counts(tree: ItemTree, counts: np.ndarray) -> np.ndarray:
    """노드별 서브트리 아래 아이템 count 합"""
    totals = np.zeros(tree.n_nodes, dtype=np.float64)
    for node in reversed(tree._order):
        item = tree.leaf_item[node]
        if not tree.children[node] and 0 <= item < len(counts):
            totals[node] = counts[item]
        elif tree.children[node]:
            totals[node] = totals[tree.child_array(node)].sum()
    return totals


def init_biases_from_counts(tree: ItemTree, counts: np.ndarray) -> ItemTree:
    """
    모든 노드의 bias 를 서브트리 count 의 log 에서 형제 평균을 뺀 값으로 둡니다.
    벡터가 0 이면 트리 확률이 경험적 아이템 빈도와 같아집니다.
    count 가 0 인 서브트리는 0.5 로 바닥을 깝니다.
    """
    totals = np.maximum(subtree_counts(tree, np.asarray(counts, dtype=np.float64)), UNSEEN_COUNT_FLOOR)
    for node in tree.internal_nodes():
        kids = tree.child_array(node)
        logs = np.log(totals[kids])
        tree.biases[kids] = logs - logs.mean()
    return tree


# ===================================================================================
# 조회
def code_of(tree: ItemTree, item: int) -> ItemCode:
    try:
        return tree.codes[item]
    except (KeyError, TypeError):
        raise UnknownItemError(item) from None


def path_of(tree: ItemTree, item: int) -> Tuple[int, ...]:
    """
    (n_0, n_1, ..., n_L). n_0 은 루트, n_L 은 아이템의 잎.
    부모 포인터를 따라 구조에서 직접 계산합니다.
    """
    if not isinstance(item, (int, np.integer)) or not 0 <= item < tree.item_count or tree.leaf_of[item] < 0:
        raise UnknownItemError(item)
    path = [int(tree.leaf_of[item])]
    while tree.parent[path[-1]] >= 0:
        path.append(int(tree.parent[path[-1]]))
    return tuple(reversed(path))


# ===================================================================================
# 확률
def child_logits(tree: ItemTree, node: int, user_vector: np.ndarray) -> np.ndarray:
    kids = tree.child_array(node)
    return tree.factors[kids] @ user_vector + tree.biases[kids]


def child_prob(tree: ItemTree, node: int, user_vector: np.ndarray, k: int) -> float:
    """
    내부 노드 ``node`` 에서 k 번째(1-based) 자식을 고를 확률
    """
    n_children = len(tree.children[node])
    if n_children == 0:
        raise ContractError(f"cisrec: node {node} is a leaf; child_prob needs an internal node.")
    if not 1 <= k <= n_children:
        raise ContractError(f"cisrec: child number {k} outside 1..{n_children}.")
    return float(softmax(child_logits(tree, node, user_vector))[k - 1])


def item_log_prob(tree: ItemTree, user_vector: np.ndarray, item: int) -> float:
    ancestors, digits = tree.path_arrays(item)
    total = 0.0
    for node, d in zip(ancestors.tolist(), digits.tolist()):
        total += float(log_softmax(child_logits(tree, node, user_vector))[d])
    return total


def item_prob(tree: ItemTree, user_vector: np.ndarray, item: int) -> float:
    """경로를 따라 log 확률을 더한 뒤 마지막에 exp (깊이 ~14 에서의 underflow 방지)"""
    return float(np.exp(item_log_prob(tree, user_vector, item)))


def full_log_distribution(tree: ItemTree, user_vector: np.ndarray) -> np.ndarray:
    logits = tree.factors @ user_vector + tree.biases
    node_logp = np.zeros(tree.n_nodes)
    for node in tree.internal_nodes():
        kids = tree.child_array(node)
        node_logp[kids] = node_logp[node] + log_softmax(logits[kids])
    out = np.full(tree.item_count, -np.inf)
    placed = tree.leaf_of >= 0
    out[placed] = node_logp[tree.leaf_of[placed]]
    return out


def full_distribution(tree: ItemTree, user_vector: np.ndarray) -> np.ndarray:
    """
    모든 아이템의 확률을 한 번의 순회로 계산합니다 (노드별 softmax 는 한 번씩).
    """
    return np.exp(full_log_distribution(tree, user_vector))


# ===================================================================================
# 직렬화
def to_document(tree: ItemTree, meta: Optional[Dict[str, str]] = None) -> Dict:
    nodes = []
    for n in range(tree.n_nodes):
        item = int(tree.leaf_item[n])
        nodes.append(
            {
                "parent": int(tree.parent[n]),
                "children": list(tree.children[n]),
                "item": item if item >= 0 else None,
                "params": codec.encode_block(np.append(tree.factors[n], tree.biases[n])),
            }
        )
    document = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "header": {"arity": tree.arity, "dim": tree.dim, "item_count": tree.item_count},
        "nodes": nodes,
    }
    if meta:
        document["meta"] = dict(meta)
    return document


def serialize(tree: ItemTree, meta: Optional[Dict[str, str]] = None) -> bytes:
    return codec.dumps(to_document(tree, meta))


def _int_field(value, name: str, offset: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TreeFormatError(f"{name} must be an integer", offset)
    return value


def from_document(document: Dict) -> ItemTree:
    if document.get("format") != FORMAT_NAME:
        raise TreeFormatError(f"not a {FORMAT_NAME} document", 0)
    if document.get("version") != FORMAT_VERSION:
        raise TreeFormatError(f"unsupported version {document.get('version')!r}", 0)
    header = document.get("header")
    if not isinstance(header, dict):
        raise TreeFormatError("missing header", 0)
    arity = _int_field(header.get("arity"), "header.arity", 0)
    dim = _int_field(header.get("dim"), "header.dim", 0)
    item_count = _int_field(header.get("item_count"), "header.item_count", 0)
    if arity < 2 or dim < 1 or item_count < 0:
        raise TreeFormatError("header values out of range", 0)

    nodes = document.get("nodes")
    if not isinstance(nodes, list) or not nodes:
        raise TreeFormatError("missing node array", 0)
    n_nodes = len(nodes)
    parent: List[int] = []
    children: List[List[int]] = []
    leaf_item: List[int] = []
    factors = np.zeros((n_nodes, dim))
    biases = np.zeros(n_nodes)
    for n, entry in enumerate(nodes):
        if not isinstance(entry, dict):
            raise TreeFormatError("node entry must be an object", n)
        p = _int_field(entry.get("parent"), "parent", n)
        kids = entry.get("children")
        if not isinstance(kids, list):
            raise TreeFormatError("children must be a list", n)
        kids = [_int_field(c, "child", n) for c in kids]
        if not -1 <= p < n_nodes or any(not 0 < c < n_nodes for c in kids):
            raise TreeFormatError("node reference out of range", n)
        item = entry.get("item")
        item = -1 if item is None else _int_field(item, "item", n)
        params = codec.decode_block(entry.get("params"), dim + 1, offset=n)
        parent.append(p)
        children.append(kids)
        leaf_item.append(item)
        factors[n] = params[:dim]
        biases[n] = params[dim]
    return ItemTree(arity, dim, parent, children, leaf_item, factors, biases, item_count)


def deserialize(data: bytes) -> ItemTree:
    """
    Raises
    ------
    TreeFormatError  잘리거나 형식이 맞지 않는 문서 (offset 포함)
    """
    return from_document(codec.loads(data))


# ===================================================================================
# 검증
def validate(tree: ItemTree) -> List[str]:
    """
    ItemTree 불변 조건을 검사합니다. 모두 만족하면 빈 리스트.
    위반은 예외가 아니라 데이터로 돌려줍니다.
    """
    violations: List[str] = []
    n_nodes = tree.n_nodes

    if tree.factors.shape != (n_nodes, tree.dim) or tree.biases.shape != (n_nodes,):
        violations.append("parameter arrays do not match node count / dim")
    elif not (np.isfinite(tree.factors).all() and np.isfinite(tree.biases).all()):
        violations.append("non-finite node parameters")

    if n_nodes == 0 or tree.parent[ROOT] != -1:
        violations.append("node 0 must be the root (parent -1)")

    # 구조: 부모 / 자식 일관성, 도달 가능성
    reached = np.zeros(n_nodes, dtype=int)
    stack = [ROOT] if n_nodes else []
    while stack:
        node = stack.pop()
        reached[node] += 1
        if reached[node] > 1:
            violations.append(f"node {node} reachable more than once")
            continue
        for child in tree.children[node]:
            if not 0 < child < n_nodes:
                violations.append(f"node {node} has out-of-range child {child}")
                continue
            if tree.parent[child] != node:
                violations.append(f"node {child} parent pointer {tree.parent[child]} != {node}")
            stack.append(child)
    unreachable = np.flatnonzero(reached == 0)
    if len(unreachable):
        violations.append(f"{len(unreachable)} node(s) unreachable from root, e.g. {unreachable[:5].tolist()}")

    # 노드 모양
    for node in range(n_nodes):
        n_children = len(tree.children[node])
        item = int(tree.leaf_item[node])
        if n_children == 0:
            if node == ROOT:
                violations.append("root has no children")
            elif not 0 <= item < tree.item_count:
                violations.append(f"leaf {node} holds no valid item ({item})")
        else:
            if item >= 0:
                violations.append(f"internal node {node} holds item {item}")
            single_item_root = node == ROOT and tree.item_count == 1 and n_children == 1
            if not single_item_root and not 2 <= n_children <= tree.arity:
                violations.append(f"internal node {node} has {n_children} children (allowed 2..{tree.arity})")

    # 잎 <-> 아이템 전단사
    holders: Dict[int, List[int]] = {}
    for node in range(n_nodes):
        if not tree.children[node] and tree.leaf_item[node] >= 0:
            holders.setdefault(int(tree.leaf_item[node]), []).append(node)
    for item, nodes in sorted(holders.items()):
        if len(nodes) > 1:
            violations.append(f"item {item} held by {len(nodes)} leaves {nodes} (bijection violated)")
    missing = sorted(set(range(tree.item_count)) - set(holders))
    if missing:
        violations.append(f"{len(missing)} item(s) have no leaf (bijection violated), e.g. {missing[:5]}")

    # 코드 테이블 <-> 구조
    for item in range(tree.item_count):
        code = tree.codes.get(item)
        if code is None:
            continue
        node = ROOT
        ok = len(code) >= 1
        for d in code:
            kids = tree.children[node] if 0 <= node < n_nodes else []
            if not 1 <= d <= len(kids) or d > tree.arity:
                ok = False
                break
            node = kids[d - 1]
        if not ok or tree.children[node] or tree.leaf_item[node] != item:
            violations.append(f"code table entry {code.digits} for item {item} disagrees with topology")
    return violations
