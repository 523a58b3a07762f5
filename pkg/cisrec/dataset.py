"""
dataset
~~~~~~~

평점(explicit) 데이터를 읽어 implicit feedback 데이터셋과 relevance 라벨을 만들고,
재현 가능한 train / valid / test 분할을 생성합니다.

사용 예::

    >>> from cisrec import dataset
    >>> with open("ratings.dat", "rb") as f:
    ...     ratings = dataset.ingest_ratings(f, "ml10m_dat")
    >>> implicit = dataset.to_implicit(ratings, positive_threshold=4)
    >>> train, valid, test = dataset.split(implicit, (0.8, 0.1, 0.1), seed=0)

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import (
    BinaryIO,
    Dict,
    FrozenSet,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
    overload,
)

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .config import RatingFormat, validate_fractions
from .errors import ConfigError, DataError, ParseError

logger = logging.getLogger("cisrec.dataset")

_RATING_MIN = 0.0
_RATING_MAX = 5.0


@dataclass(frozen=True)
class RatingRecord:
    """평점 한 건. 아이디는 원본 문자열 그대로 유지됩니다."""

    user: str
    item: str
    rating: float
    timestamp: Optional[int] = None


class RatingTable(Sequence[RatingRecord]):
    """
    RatingRecord 의 읽기 전용 시퀀스

    천만 건 규모에서도 레코드 객체를 미리 만들지 않도록 열(column) 단위로 보관합니다.
    """

    def __init__(self, frame: pd.DataFrame) -> None:
        self._frame = frame.reset_index(drop=True)

    @classmethod
    def from_records(cls, records: Sequence[RatingRecord]) -> "RatingTable":
        frame = pd.DataFrame(
            {
                "user": [r.user for r in records],
                "item": [r.item for r in records],
                "rating": np.asarray([r.rating for r in records], dtype=np.float64),
                "timestamp": pd.array([r.timestamp for r in records], dtype="Int64"),
            }
        )
        return cls(frame)

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame

    def __len__(self) -> int:
        return len(self._frame)

    @overload
    def __getitem__(self, index: int) -> RatingRecord: ...

    @overload
    def __getitem__(self, index: slice) -> "RatingTable": ...

    def __getitem__(self, index):
        if isinstance(index, slice):
            return RatingTable(self._frame.iloc[index])
        row = self._frame.iloc[index]
        ts = row["timestamp"]
        return RatingRecord(
            user=row["user"],
            item=row["item"],
            rating=float(row["rating"]),
            timestamp=None if pd.isna(ts) else int(ts),
        )

    def __iter__(self) -> Iterator[RatingRecord]:
        for i in range(len(self)):
            yield self[i]

    def __repr__(self) -> str:
        return f"RatingTable(rows={len(self)})"


class ImplicitDataset:
    """
    (user, item) 선택 이벤트의 불변 테이블

    users / items 는 0..U-1, 0..I-1 의 dense 인덱스입니다.
    같은 부모에서 나온 분할들은 인덱스 공간(n_users, n_items, id 맵)을 공유합니다.
    """

    def __init__(
        self,
        pairs,
        n_users: int,
        n_items: int,
        user_ids: Optional[Sequence[str]] = None,
        item_ids: Optional[Sequence[str]] = None,
    ) -> None:
        array = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if n_users < 0 or n_items < 0:
            raise DataError("cisrec: n_users and n_items must be non-negative.")
        if len(array):
            if array.min() < 0 or array[:, 0].max() >= n_users or array[:, 1].max() >= n_items:
                raise DataError("cisrec: pair index out of range.")
        if user_ids is not None and len(user_ids) != n_users:
            raise DataError("cisrec: user id map does not match n_users.")
        if item_ids is not None and len(item_ids) != n_items:
            raise DataError("cisrec: item id map does not match n_items.")

        array.setflags(write=False)
        self._pairs = array
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.user_ids: Optional[Tuple[str, ...]] = tuple(user_ids) if user_ids is not None else None
        self.item_ids: Optional[Tuple[str, ...]] = tuple(item_ids) if item_ids is not None else None

    # 기본 뷰
    @property
    def pairs(self) -> np.ndarray:
        return self._pairs

    @property
    def users(self) -> np.ndarray:
        return self._pairs[:, 0]

    @property
    def items(self) -> np.ndarray:
        return self._pairs[:, 1]

    def __len__(self) -> int:
        return len(self._pairs)

    def __repr__(self) -> str:
        return f"ImplicitDataset(pairs={len(self)}, users={self.n_users}, items={self.n_items})"

    # 파생 통계
    @cached_property
    def item_counts(self) -> np.ndarray:
        """N_i: 아이템 i 가 등장한 pair 수"""
        counts = np.bincount(self.items, minlength=self.n_items).astype(np.int64)
        counts.setflags(write=False)
        return counts

    @cached_property
    def user_counts(self) -> np.ndarray:
        counts = np.bincount(self.users, minlength=self.n_users).astype(np.int64)
        counts.setflags(write=False)
        return counts

    @cached_property
    def _csr(self) -> sp.csr_matrix:
        # 중복 pair 는 합쳐지고, 각 행의 인덱스는 정렬됩니다
        data = np.ones(len(self), dtype=np.float64)
        matrix = sp.csr_matrix((data, (self.users, self.items)), shape=(self.n_users, self.n_items))
        matrix.sum_duplicates()
        matrix.sort_indices()
        return matrix

    @cached_property
    def _csc(self) -> sp.csc_matrix:
        matrix = self._csr.tocsc()
        matrix.sort_indices()
        return matrix

    @cached_property
    def item_users(self) -> List[np.ndarray]:
        """U_i: 아이템 i 를 선택한 유저 인덱스 (정렬, 중복 제거)"""
        csc = self._csc
        return [csc.indices[csc.indptr[i]:csc.indptr[i + 1]] for i in range(self.n_items)]

    @cached_property
    def user_items(self) -> List[np.ndarray]:
        """유저 u 가 선택한 아이템 인덱스 (정렬, 중복 제거)"""
        csr = self._csr
        return [csr.indices[csr.indptr[u]:csr.indptr[u + 1]] for u in range(self.n_users)]

    @cached_property
    def sampleable_pairs(self) -> np.ndarray:
        """선택하지 않은 아이템이 하나 이상 남은 유저의 pair 위치"""
        distinct = np.diff(self._csr.indptr)
        index = np.flatnonzero(distinct[self.users] < self.n_items).astype(np.int64)
        index.setflags(write=False)
        return index

    def binary_matrix(self) -> sp.csr_matrix:
        """관측 pair 는 1, 나머지는 0 인 U×I 행렬"""
        matrix = self._csr.copy()
        matrix.data[:] = 1.0
        return matrix

    def subset(self, index: np.ndarray) -> "ImplicitDataset":
        """같은 인덱스 공간을 공유하는 부분 데이터셋"""
        return ImplicitDataset(
            self._pairs[np.asarray(index, dtype=np.int64)],
            self.n_users,
            self.n_items,
            user_ids=self.user_ids,
            item_ids=self.item_ids,
        )

    def user_index(self) -> Dict[str, int]:
        if self.user_ids is None:
            return {str(u): u for u in range(self.n_users)}
        return {uid: u for u, uid in enumerate(self.user_ids)}

    def item_index(self) -> Dict[str, int]:
        if self.item_ids is None:
            return {str(i): i for i in range(self.n_items)}
        return {iid: i for i, iid in enumerate(self.item_ids)}

    def audit(self) -> List[str]:
        """
        불변 조건을 처음부터 다시 계산해 검사합니다. 위반이 없으면 빈 리스트.
        """
        violations: List[str] = []
        counts = self.item_counts
        if int(counts.sum()) != len(self):
            violations.append(f"sum of item counts {int(counts.sum())} != pair count {len(self)}")
        brute: Dict[int, set] = {}
        for u, i in self._pairs.tolist():
            brute.setdefault(i, set()).add(u)
        for i in range(self.n_items):
            users = set(self.item_users[i].tolist())
            if users != brute.get(i, set()):
                violations.append(f"item {i}: user set disagrees with pairs")
            if len(users) > counts[i]:
                violations.append(f"item {i}: |U_i|={len(users)} exceeds N_i={counts[i]}")
        return violations


class RelevanceLabels:
    """
    유저별 (relevant, not_relevant) 아이템 집합

    키는 원본 아이디이거나 (``reindex`` 이후) dense 인덱스입니다.
    """

    def __init__(self, labels: Mapping[object, Tuple[FrozenSet, FrozenSet]]) -> None:
        self._labels: Dict[object, Tuple[FrozenSet, FrozenSet]] = {}
        for user, (relevant, not_relevant) in labels.items():
            relevant, not_relevant = frozenset(relevant), frozenset(not_relevant)
            overlap = relevant & not_relevant
            if overlap:
                raise DataError(
                    f"cisrec: user {user!r} has items labelled both ways: {sorted(overlap)[:5]}"
                )
            self._labels[user] = (relevant, not_relevant)

    def users(self) -> List[object]:
        return list(self._labels)

    def relevant(self, user) -> FrozenSet:
        return self._labels.get(user, (frozenset(), frozenset()))[0]

    def not_relevant(self, user) -> FrozenSet:
        return self._labels.get(user, (frozenset(), frozenset()))[1]

    def __contains__(self, user) -> bool:
        return user in self._labels

    def __len__(self) -> int:
        return len(self._labels)

    def items(self):
        return self._labels.items()

    def reindex(self, dataset: ImplicitDataset) -> "RelevanceLabels":
        """
        원본 아이디를 dataset 의 dense 인덱스로 바꿉니다.
        인덱스가 없는 유저 / 아이템(양성 평점이 한 번도 없던 경우)은 모델이 점수를 줄 수 없으므로 버립니다.
        """
        users = dataset.user_index()
        items = dataset.item_index()
        mapped: Dict[object, Tuple[FrozenSet, FrozenSet]] = {}
        dropped = 0
        for user, (relevant, not_relevant) in self._labels.items():
            u = users.get(user)
            if u is None:
                dropped += 1
                continue
            mapped[u] = (
                frozenset(items[i] for i in relevant if i in items),
                frozenset(items[i] for i in not_relevant if i in items),
            )
        if dropped:
            logger.info("cisrec: %d labelled users are absent from the implicit index", dropped)
        return RelevanceLabels(mapped)


# ===================================================================================
# 읽기
def _coerce_format(fmt: Union[str, RatingFormat]) -> RatingFormat:
    try:
        return RatingFormat(fmt)
    except ValueError:
        valid = [f.value for f in RatingFormat]
        raise ConfigError(f"cisrec: unknown rating format {fmt!r}; expected one of {valid}.")


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def ingest_ratings(
    source: Union[bytes, BinaryIO],
    fmt: Union[str, RatingFormat],
    name: Optional[str] = None,
) -> RatingTable:
    """
    평점 파일을 읽습니다. 입력 행 하나당 RatingRecord 하나, 행 순서 유지.

    Parameters
    ----------
    source:  바이트 또는 바이너리 스트림
    fmt:     'ml10m_dat' (user::item::rating::timestamp) 또는
             'csv' (user,item,rating[,timestamp], 첫 줄 헤더 허용)
    name:    에러 메시지에 사용할 소스 이름

    Raises
    ------
    ConfigError  알 수 없는 포맷 태그
    ParseError   잘못된 행 (line 번호 포함)
    """
    fmt = _coerce_format(fmt)
    raw = source if isinstance(source, (bytes, bytearray)) else source.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = raw[: exc.start].count(b"\n") + 1
        raise ParseError("input is not valid UTF-8/ASCII", line, name) from exc

    users: List[str] = []
    items: List[str] = []
    ratings: List[float] = []
    stamps: List[Optional[int]] = []
    header_checked = False

    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue

        if fmt is RatingFormat.ML10M_DAT:
            fields = line.split("::")
            if len(fields) != 4:
                raise ParseError(f"expected 4 '::'-separated fields, got {len(fields)}", lineno, name)
        else:
            fields = [f.strip() for f in line.split(",")]
            # 숫자가 아닌 첫 필드 -> 헤더 한 줄
            if not header_checked:
                header_checked = True
                if not _is_number(fields[0]):
                    continue
            if len(fields) not in (3, 4):
                raise ParseError(f"expected 3 or 4 comma-separated fields, got {len(fields)}", lineno, name)
        header_checked = True

        user, item, rating_text = fields[0], fields[1], fields[2]
        if not user or not item:
            raise ParseError("empty user or item id", lineno, name)
        try:
            rating = float(rating_text)
        except ValueError:
            raise ParseError(f"rating {rating_text!r} is not a number", lineno, name) from None
        if math.isnan(rating) or not _RATING_MIN <= rating <= _RATING_MAX:
            raise ParseError(f"rating {rating_text!r} outside [0, 5]", lineno, name)

        timestamp: Optional[int] = None
        if len(fields) == 4 and fields[3] != "":
            try:
                timestamp = int(fields[3])
            except ValueError:
                raise ParseError(f"timestamp {fields[3]!r} is not an integer", lineno, name) from None

        users.append(user)
        items.append(item)
        ratings.append(rating)
        stamps.append(timestamp)

    frame = pd.DataFrame(
        {
            "user": pd.Series(users, dtype=object),
            "item": pd.Series(items, dtype=object),
            "rating": np.asarray(ratings, dtype=np.float64),
            "timestamp": pd.array(stamps, dtype="Int64"),
        }
    )
    logger.debug("cisrec: ingested %d ratings from %s", len(frame), name or "<stream>")
    return RatingTable(frame)


def _as_frame(ratings: Union[RatingTable, Sequence[RatingRecord]]) -> pd.DataFrame:
    if isinstance(ratings, RatingTable):
        return ratings.frame
    return RatingTable.from_records(list(ratings)).frame


def subsample_users(
    ratings: Union[RatingTable, Sequence[RatingRecord]],
    max_users: int,
    seed: int,
) -> RatingTable:
    """
    시드로 고른 유저 max_users 명의 평점만 남깁니다. 유저가 그보다 적으면 그대로 돌려줍니다.
    행 순서는 원본 순서를 유지합니다.
    """
    if max_users < 1:
        raise ConfigError(f"cisrec: max_users must be >= 1, got {max_users!r}.")
    frame = _as_frame(ratings)
    users = pd.unique(frame["user"])
    if len(users) <= max_users:
        return ratings if isinstance(ratings, RatingTable) else RatingTable(frame)
    chosen = np.random.default_rng([seed, 3]).choice(len(users), size=max_users, replace=False)
    kept = frame[frame["user"].isin(users[np.sort(chosen)])]
    logger.info("cisrec: subsampled %d of %d users (%d ratings)", max_users, len(users), len(kept))
    return RatingTable(kept)


# ===================================================================================
# 변환
def to_implicit(
    ratings: Union[RatingTable, Sequence[RatingRecord]],
    positive_threshold: float,
) -> ImplicitDataset:
    """
    rating >= positive_threshold 인 pair 만 남기고 평점 값은 버립니다.
    (user, item) 중복은 제거하고, dense 인덱스는 처음 등장한 순서로 부여합니다.
    """
    if not 0 < positive_threshold <= _RATING_MAX:
        raise ConfigError(f"cisrec: positive_threshold must be in (0, 5], got {positive_threshold!r}.")
    frame = _as_frame(ratings)
    kept = frame.loc[frame["rating"] >= positive_threshold, ["user", "item"]]
    kept = kept.drop_duplicates(subset=["user", "item"], keep="first")

    user_codes, user_ids = pd.factorize(kept["user"], sort=False)
    item_codes, item_ids = pd.factorize(kept["item"], sort=False)
    pairs = np.column_stack([user_codes, item_codes]) if len(kept) else np.empty((0, 2), dtype=np.int64)
    dataset = ImplicitDataset(
        pairs,
        n_users=len(user_ids),
        n_items=len(item_ids),
        user_ids=[str(u) for u in user_ids],
        item_ids=[str(i) for i in item_ids],
    )
    logger.info(
        "cisrec: kept %d of %d ratings at threshold %g (%d users, %d items)",
        len(dataset), len(frame), positive_threshold, dataset.n_users, dataset.n_items,
    )
    return dataset


def split(
    dataset: ImplicitDataset,
    fractions: Tuple[float, float, float],
    seed: int,
) -> Tuple[ImplicitDataset, ImplicitDataset, ImplicitDataset]:
    """
    pair 를 시드 기반으로 균등 무작위 분할합니다 (유저별 층화 없음).

    Raises
    ------
    ConfigError  fractions 합이 1 이 아니거나 양수가 아닐 때
    """
    train_f, valid_f, _ = validate_fractions(fractions)
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(n, int(round(train_f * n)))
    n_valid = min(n - n_train, int(round(valid_f * n)))

    parts = (order[:n_train], order[n_train:n_train + n_valid], order[n_train + n_valid:])
    return tuple(dataset.subset(np.sort(part)) for part in parts)  # type: ignore[return-value]


def build_relevance(
    ratings: Union[RatingTable, Sequence[RatingRecord]],
    relevant_threshold: float,
    not_relevant_below: float,
) -> RelevanceLabels:
    """
    relevant = rating >= relevant_threshold, not_relevant = rating < not_relevant_below.
    사이 구간(기본값에서는 정확히 3)의 아이템은 어느 쪽에도 들어가지 않습니다.
    """
    if not_relevant_below > relevant_threshold:
        raise ConfigError("cisrec: not_relevant_below must be <= relevant_threshold.")
    frame = _as_frame(ratings).drop_duplicates(subset=["user", "item"], keep="first")

    labels: Dict[object, Tuple[FrozenSet, FrozenSet]] = {}
    for user, group in frame.groupby("user", sort=False):
        rating = group["rating"].to_numpy()
        item = group["item"].to_numpy()
        labels[user] = (
            frozenset(item[rating >= relevant_threshold].tolist()),
            frozenset(item[rating < not_relevant_below].tolist()),
        )
    return RelevanceLabels(labels)


# ===================================================================================
# 교환 포맷: 탭 구분 pair 파일 + 축별 id 맵
def write_pairs(dataset: ImplicitDataset, path: Union[str, Path]) -> None:
    frame = pd.DataFrame(dataset.pairs, columns=["user_index", "item_index"])
    frame.to_csv(path, sep="\t", header=False, index=False, lineterminator="\n")


def read_pairs(
    path: Union[str, Path],
    n_users: int,
    n_items: int,
    user_ids: Optional[Sequence[str]] = None,
    item_ids: Optional[Sequence[str]] = None,
) -> ImplicitDataset:
    try:
        frame = pd.read_csv(path, sep="\t", header=None, names=["user_index", "item_index"], dtype=np.int64)
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame({"user_index": [], "item_index": []}, dtype=np.int64)
    except (ValueError, pd.errors.ParserError) as exc:
        raise DataError(f"cisrec: cannot read pair file {path}: {exc}") from exc
    return ImplicitDataset(frame.to_numpy(), n_users, n_items, user_ids=user_ids, item_ids=item_ids)


def write_id_map(ids: Sequence[str], path: Union[str, Path]) -> None:
    frame = pd.DataFrame({"index": np.arange(len(ids)), "id": list(ids)})
    frame.to_csv(path, sep="\t", header=False, index=False, lineterminator="\n")


def read_id_map(path: Union[str, Path]) -> Tuple[str, ...]:
    try:
        frame = pd.read_csv(
            path, sep="\t", header=None, names=["index", "id"], dtype={"index": np.int64, "id": str},
            keep_default_na=False,
        )
    except pd.errors.EmptyDataError:
        return ()
    except (ValueError, pd.errors.ParserError) as exc:
        raise DataError(f"cisrec: cannot read id map {path}: {exc}") from exc
    if not np.array_equal(frame["index"].to_numpy(), np.arange(len(frame))):
        raise DataError(f"cisrec: id map {path} is not dense 0..n-1")
    return tuple(frame["id"].tolist())


def write_labels(labels: RelevanceLabels, path: Union[str, Path]) -> None:
    """user_index<TAB>item_index<TAB>1(relevant)|0(not relevant), 정렬된 순서"""
    rows = []
    for user, (relevant, not_relevant) in labels.items():
        rows.extend((user, item, 1) for item in relevant)
        rows.extend((user, item, 0) for item in not_relevant)
    frame = pd.DataFrame(rows, columns=["user", "item", "label"]).sort_values(["user", "item"])
    frame.to_csv(path, sep="\t", header=False, index=False, lineterminator="\n")


def read_labels(path: Union[str, Path]) -> RelevanceLabels:
    try:
        frame = pd.read_csv(path, sep="\t", header=None, names=["user", "item", "label"], dtype=np.int64)
    except pd.errors.EmptyDataError:
        return RelevanceLabels({})
    except (ValueError, pd.errors.ParserError) as exc:
        raise DataError(f"cisrec: cannot read label file {path}: {exc}") from exc
    labels: Dict[object, Tuple[FrozenSet, FrozenSet]] = {}
    for user, group in frame.groupby("user", sort=True):
        item = group["item"].to_numpy()
        flag = group["label"].to_numpy()
        labels[int(user)] = (frozenset(item[flag == 1].tolist()), frozenset(item[flag == 0].tolist()))
    return RelevanceLabels(labels)


@dataclass
class SplitBundle:
    """``prep`` 결과물 한 벌"""

    train: ImplicitDataset
    valid: ImplicitDataset
    test: ImplicitDataset
    labels: RelevanceLabels

    FILES = ("train.tsv", "valid.tsv", "test.tsv", "users.tsv", "items.tsv", "labels.tsv")

    def save(self, directory: Union[str, Path]) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_pairs(self.train, directory / "train.tsv")
        write_pairs(self.valid, directory / "valid.tsv")
        write_pairs(self.test, directory / "test.tsv")
        write_id_map(self.train.user_ids or [str(u) for u in range(self.train.n_users)], directory / "users.tsv")
        write_id_map(self.train.item_ids or [str(i) for i in range(self.train.n_items)], directory / "items.tsv")
        write_labels(self.labels, directory / "labels.tsv")

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "SplitBundle":
        directory = Path(directory)
        missing = [name for name in cls.FILES if not (directory / name).exists()]
        if missing:
            raise DataError(f"cisrec: {directory} is missing {missing}; run 'cisrec prep' first.")
        user_ids = read_id_map(directory / "users.tsv")
        item_ids = read_id_map(directory / "items.tsv")
        parts = [
            read_pairs(directory / name, len(user_ids), len(item_ids), user_ids, item_ids)
            for name in ("train.tsv", "valid.tsv", "test.tsv")
        ]
        return cls(parts[0], parts[1], parts[2], read_labels(directory / "labels.tsv"))
