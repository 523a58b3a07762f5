"""
eval
~~~~

랭킹 평가: 두 가지 프로토콜로 유저별 후보 목록(RankingTask)을 만들고
MAP, EPR, Precision@k, Recall@k 를 계산합니다.

- explicit (A): 명시적으로 "관련 없음"이 알려진 아이템과 테스트 관련 아이템만 순위를 매깁니다.
- all_unobserved (B): 학습에서 선택하지 않은 모든 아이템이 후보이고,
  테스트에서 선택한 것만 관련 있다고 봅니다.

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import Protocol
from .dataset import ImplicitDataset, RelevanceLabels
from .errors import ContractError, DivergenceError

logger = logging.getLogger("cisrec.eval")

CUTOFFS = (1, 5, 10)
COLUMNS = (
    "model", "protocol", "MAP", "EPR",
    "P@1", "P@5", "P@10", "R@1", "R@5", "R@10",
    "users", "skipped",
)

Scorer = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RankingTask:
    """유저 한 명의 후보 아이템(정렬됨)과 그 중 관련 있는 아이템"""

    user: int
    candidates: np.ndarray
    relevant: np.ndarray

    def __post_init__(self) -> None:
        if len(self.candidates) < 1:
            raise ContractError(f"cisrec: task for user {self.user} has no candidates.")
        if not np.isin(self.relevant, self.candidates).all():
            raise ContractError(f"cisrec: task for user {self.user} has relevant items outside its candidates.")


class TaskSet(Sequence[RankingTask]):
    """
    프로토콜 하나의 작업 목록과 건너뛴 유저 수

    all_unobserved 는 후보가 아이템 거의 전부라서 작업을 꺼낼 때 만듭니다.
    """

    def __init__(
        self,
        protocol: Protocol,
        entries: List[Any],
        skipped: int,
        factory: Optional[Callable[[Any], RankingTask]] = None,
    ) -> None:
        self.protocol = Protocol(protocol)
        self._entries = entries
        self.skipped = skipped
        self._factory = factory

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return TaskSet(self.protocol, self._entries[index], self.skipped, self._factory)
        entry = self._entries[index]
        return self._factory(entry) if self._factory else entry

    def __repr__(self) -> str:
        return f"TaskSet(protocol={self.protocol.value}, tasks={len(self)}, skipped={self.skipped})"


# ===================================================================================
# 프로토콜
def build_protocol_explicit(
    labels: RelevanceLabels,
    test: ImplicitDataset,
    train: Optional[ImplicitDataset] = None,
) -> TaskSet:
    """
    테스트 유저마다 후보 = (테스트에서 관련 있는 아이템) ∪ (관련 없는 아이템).
    둘 중 하나라도 비면 건너뛰고 센 뒤 경고합니다.

    ``labels`` 는 밀집 인덱스로 바뀐 것이어야 합니다 (``RelevanceLabels.reindex``).
    ``train`` 을 주면 학습에서 선택한 아이템은 후보에서 뺍니다.
    """
    tasks: List[RankingTask] = []
    skipped = 0
    for u in np.unique(test.users).tolist():
        test_items = test.user_items[u]
        known = labels.relevant(u) if u in labels else frozenset()
        relevant = np.asarray(sorted(set(test_items.tolist()) & set(known)), dtype=np.int64)
        not_relevant = np.asarray(sorted(labels.not_relevant(u)) if u in labels else [], dtype=np.int64)
        if train is not None and u < train.n_users:
            seen = train.user_items[u]
            relevant = np.setdiff1d(relevant, seen)
            not_relevant = np.setdiff1d(not_relevant, seen)
        if len(relevant) == 0 or len(not_relevant) == 0:
            skipped += 1
            continue
        tasks.append(RankingTask(u, np.union1d(relevant, not_relevant), relevant))
    if skipped:
        logger.warning("cisrec: explicit protocol skipped %d user(s) lacking a relevant or not-relevant item", skipped)
    return TaskSet(Protocol.EXPLICIT, tasks, skipped)


def build_protocol_all_unobserved(train: ImplicitDataset, test: ImplicitDataset) -> TaskSet:
    """
    테스트 유저마다 후보 = 모든 아이템 − 학습 아이템, 관련 = 테스트 아이템 (학습과 겹치면 제외).
    """
    n_items = test.n_items
    entries: List[Tuple[int, np.ndarray, np.ndarray]] = []
    skipped = 0
    for u in np.unique(test.users).tolist():
        seen = train.user_items[u] if u < train.n_users else np.empty(0, dtype=np.int64)
        relevant = np.setdiff1d(test.user_items[u], seen)
        if len(relevant) == 0:
            skipped += 1
            continue
        entries.append((u, seen, relevant))

    def factory(entry: Tuple[int, np.ndarray, np.ndarray]) -> RankingTask:
        u, seen, relevant = entry
        return RankingTask(u, np.setdiff1d(np.arange(n_items), seen), relevant)

    if skipped:
        logger.warning("cisrec: all-unobserved protocol skipped %d user(s) with only training items", skipped)
    return TaskSet(Protocol.ALL_UNOBSERVED, entries, skipped, factory)


def build_tasks(
    protocol: Protocol,
    train: ImplicitDataset,
    test: ImplicitDataset,
    labels: Optional[RelevanceLabels] = None,
) -> TaskSet:
    protocol = Protocol(protocol)
    if protocol is Protocol.EXPLICIT:
        if labels is None:
            raise ContractError("cisrec: the explicit protocol needs relevance labels.")
        return build_protocol_explicit(labels, test, train)
    return build_protocol_all_unobserved(train, test)


# ===================================================================================
# 지표
def rank_candidates(candidates: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """점수 내림차순, 동점은 아이템 번호 오름차순"""
    candidates = np.asarray(candidates, dtype=np.int64)
    return candidates[np.lexsort((candidates, -np.asarray(scores, dtype=np.float64)))]


def _hits(ranked: Sequence[int], relevant: Iterable[int]) -> Tuple[np.ndarray, int]:
    relevant = np.unique(np.asarray(list(relevant), dtype=np.int64))
    ranked = np.asarray(ranked, dtype=np.int64)
    if len(relevant) == 0:
        raise ContractError("cisrec: metrics need at least one relevant item.")
    hits = np.isin(ranked, relevant)
    if hits.sum() != len(relevant):
        raise ContractError("cisrec: every relevant item must appear in the ranked list.")
    return hits, len(relevant)


def average_precision(ranked: Sequence[int], relevant: Iterable[int]) -> float:
    hits, _ = _hits(ranked, relevant)
    positions = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(positions) + 1) / positions))


def epr(ranked: Sequence[int], relevant: Iterable[int]) -> float:
    """관련 아이템들의 (rank − 1)/(n − 1) 평균. 0 이 가장 좋음, 후보가 하나면 0."""
    hits, _ = _hits(ranked, relevant)
    n = len(hits)
    if n == 1:
        return 0.0
    positions = np.flatnonzero(hits) + 1
    return float(np.mean((positions - 1) / (n - 1)))


def precision_at_k(ranked: Sequence[int], relevant: Iterable[int], k: int) -> float:
    if k < 1:
        raise ContractError("cisrec: k must be >= 1.")
    hits, _ = _hits(ranked, relevant)
    m = min(k, len(hits))
    return float(hits[:m].sum() / m)


def recall_at_k(ranked: Sequence[int], relevant: Iterable[int], k: int) -> float:
    if k < 1:
        raise ContractError("cisrec: k must be >= 1.")
    hits, n_relevant = _hits(ranked, relevant)
    return float(hits[:k].sum() / n_relevant)


# ===================================================================================
# 보고서
@dataclass
class MetricReport:
    """유저 평균 지표. 값은 [0, 1] 이며 표로 낼 때 퍼센트로 바꿉니다."""

    map: float = 0.0
    epr: float = 0.0
    precision: Dict[int, float] = field(default_factory=lambda: {k: 0.0 for k in CUTOFFS})
    recall: Dict[int, float] = field(default_factory=lambda: {k: 0.0 for k in CUTOFFS})
    users: int = 0
    skipped: int = 0
    model: str = ""
    protocol: str = ""

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "model": self.model,
            "protocol": self.protocol,
            "map": self.map,
            "epr": self.epr,
            "users": self.users,
            "skipped": self.skipped,
        }
        for k in CUTOFFS:
            payload[f"p@{k}"] = self.precision[k]
            payload[f"r@{k}"] = self.recall[k]
        return payload

    def to_row(self) -> str:
        values = [self.map, self.epr] + [self.precision[k] for k in CUTOFFS] + [self.recall[k] for k in CUTOFFS]
        cells = [self.model, self.protocol] + [f"{100.0 * v:.2f}" for v in values]
        return "\t".join(cells + [str(self.users), str(self.skipped)])

    @staticmethod
    def header() -> str:
        return "\t".join(COLUMNS)


def _user_metrics(scorer: Scorer, task: RankingTask) -> Tuple[float, ...]:
    scores = np.asarray(scorer(task.user, task.candidates), dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(scores))
    if len(bad):
        raise DivergenceError(
            f"non-finite score for user {task.user}, item {int(task.candidates[bad[0]])}", stage="eval"
        )
    ranked = rank_candidates(task.candidates, scores)
    relevant = task.relevant
    return (
        average_precision(ranked, relevant),
        epr(ranked, relevant),
        *(precision_at_k(ranked, relevant, k) for k in CUTOFFS),
        *(recall_at_k(ranked, relevant, k) for k in CUTOFFS),
    )


def evaluate(
    scorer: Scorer,
    tasks: Sequence[RankingTask],
    threads: int = 1,
    model: str = "",
) -> MetricReport:
    """
    후보를 점수로 정렬해 유저별 지표를 구하고 평균합니다.

    Parameters
    ----------
    scorer:   ``scorer(user, items) -> scores`` (모델의 ``score_items``)
    threads:  유저 단위 병렬 처리 스레드 수. 결과는 순서와 무관합니다.
    """
    skipped = getattr(tasks, "skipped", 0)
    protocol = getattr(tasks, "protocol", None)
    report = MetricReport(skipped=skipped, model=model, protocol=protocol.value if protocol else "")
    if len(tasks) == 0:
        return report

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda t: _user_metrics(scorer, t), tasks))
    else:
        rows = [_user_metrics(scorer, t) for t in tasks]

    means = np.asarray(rows).mean(axis=0)
    n = len(CUTOFFS)
    report.map, report.epr = float(means[0]), float(means[1])
    report.precision = {k: float(v) for k, v in zip(CUTOFFS, means[2:2 + n])}
    report.recall = {k: float(v) for k, v in zip(CUTOFFS, means[2 + n:2 + 2 * n])}
    report.users = len(rows)
    logger.info(
        "cisrec: %s %s MAP=%.4f EPR=%.4f users=%d skipped=%d",
        model or "model", report.protocol, report.map, report.epr, report.users, skipped,
    )
    return report


def pointwise(fn: Callable[[int, int], float]) -> Scorer:
    """(user, item) -> 점수 함수를 evaluate 용 scorer 로 감쌉니다."""

    def scorer(user: int, items: np.ndarray) -> np.ndarray:
        return np.asarray([fn(user, int(i)) for i in items], dtype=np.float64)

    return scorer
