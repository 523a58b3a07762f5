"""
synthetic
~~~~~~~~~

심어 둔 분할(planted partition)이 있는 합성 평점 데이터.

유저 그룹마다 서로 겹치지 않는 선호 아이템 블록이 있습니다. 유저는 자기 블록의
아이템 일부에 높은 평점(4~5)을, 다른 블록의 아이템 몇 개에 낮은 평점(1~2)을 줍니다.
낮은 평점은 explicit 프로토콜의 "관련 없음" 라벨이 됩니다.

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .dataset import RatingRecord, RatingTable
from .errors import ConfigError

logger = logging.getLogger("cisrec.synthetic")


@dataclass
class PlantedData:
    ratings: RatingTable
    user_group: Dict[str, int]
    item_group: Dict[str, int]


def planted_partition(
    n_groups: int = 2,
    users_per_group: int = 30,
    items_per_group: int = 8,
    picks_per_user: int = 5,
    dislikes_per_user: int = 3,
    seed: int = 0,
) -> PlantedData:
    """
    Parameters
    ----------
    picks_per_user:     유저마다 높은 평점을 줄 자기 블록 아이템 수
    dislikes_per_user:  유저마다 낮은 평점을 줄 다른 블록 아이템 수

    아이템 아이디 ``i<k>`` 의 그룹은 k // items_per_group, 유저 아이디 ``u<k>`` 의
    그룹은 k // users_per_group 입니다. 행 순서는 유저 순서, 유저 안에서는 무작위입니다.
    """
    if n_groups < 2 or users_per_group < 1 or items_per_group < 1:
        raise ConfigError("cisrec: planted partition needs >= 2 groups and non-empty groups.")
    if not 1 <= picks_per_user <= items_per_group:
        raise ConfigError("cisrec: picks_per_user must be in 1..items_per_group.")
    others = (n_groups - 1) * items_per_group
    if not 0 <= dislikes_per_user <= others:
        raise ConfigError("cisrec: dislikes_per_user exceeds the number of other-group items.")

    rng = np.random.default_rng(seed)
    records = []
    user_group: Dict[str, int] = {}
    item_group = {f"i{k}": k // items_per_group for k in range(n_groups * items_per_group)}
    stamp = 1_000_000_000

    for g in range(n_groups):
        own = np.arange(g * items_per_group, (g + 1) * items_per_group)
        foreign = np.setdiff1d(np.arange(n_groups * items_per_group), own)
        for k in range(users_per_group):
            user = f"u{g * users_per_group + k}"
            user_group[user] = g
            liked = rng.choice(own, size=picks_per_user, replace=False)
            disliked = rng.choice(foreign, size=dislikes_per_user, replace=False)
            rows = [(int(i), float(rng.choice([4.0, 5.0]))) for i in liked]
            rows += [(int(i), float(rng.choice([1.0, 2.0]))) for i in disliked]
            for idx in rng.permutation(len(rows)):
                item, rating = rows[idx]
                stamp += 1
                records.append(RatingRecord(user, f"i{item}", rating, stamp))

    logger.debug("cisrec: generated %d synthetic ratings (%d groups)", len(records), n_groups)
    return PlantedData(RatingTable.from_records(records), user_group, item_group)


def to_dat_bytes(ratings: RatingTable) -> bytes:
    """ml10m_dat 형식 바이트 (``prep --synthetic`` 가 원본 파일로 남김)"""
    lines = [
        f"{r.user}::{r.item}::{r.rating:g}::{r.timestamp if r.timestamp is not None else 0}\n" for r in ratings
    ]
    return "".join(lines).encode("utf-8")
