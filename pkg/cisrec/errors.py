"""
errors
~~~~~~

이 모듈은 cisrec 의 예외 계층입니다.
CLI 는 ``exit_code`` 를 그대로 프로세스 종료 코드로 사용합니다.

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

from typing import Optional


class CisError(Exception):
    """cisrec 의 모든 예외의 기반 클래스"""

    exit_code = 1


class ConfigError(CisError, ValueError):
    """잘못된 설정 값 / 알 수 없는 포맷 태그"""

    exit_code = 2


class ContractError(CisError, ValueError):
    """함수의 사전 조건(precondition) 위반"""


class DataError(CisError):
    """입력 데이터가 기대한 형태가 아닐 때"""

    exit_code = 3


class ParseError(DataError):
    """평점 파일의 잘못된 행. ``line`` 은 1 부터 시작합니다."""

    def __init__(self, message: str, line: int, source: Optional[str] = None) -> None:
        self.line = line
        self.source = source
        where = f"{source}:{line}" if source else f"line {line}"
        super().__init__(f"cisrec: {where}: {message}")


class TreeFormatError(DataError):
    """트리 / 모델 문서를 해석할 수 없을 때. ``offset`` 은 문자 오프셋 또는 노드 번호."""

    def __init__(self, message: str, offset: int) -> None:
        self.offset = offset
        super().__init__(f"cisrec: malformed document at offset {offset}: {message}")


class DivergenceError(CisError):
    """학습 중 파라미터가 유한하지 않게 됨"""

    exit_code = 4

    def __init__(
        self,
        message: str,
        *,
        stage: Optional[str] = None,
        epoch: Optional[int] = None,
        node: Optional[int] = None,
    ) -> None:
        self.detail = message
        self.stage = stage
        self.epoch = epoch
        self.node = node
        parts = [p for p in (
            f"stage={stage}" if stage is not None else None,
            f"epoch={epoch}" if epoch is not None else None,
            f"node={node}" if node is not None else None,
        ) if p]
        suffix = f" ({', '.join(parts)})" if parts else ""
        super().__init__(f"cisrec: {message}{suffix}")

    def with_stage(self, stage: str) -> "DivergenceError":
        return DivergenceError(
            self.detail,
            stage=stage,
            epoch=self.epoch,
            node=self.node,
        )


class UnknownItemError(CisError, KeyError):
    exit_code = 3

    def __init__(self, item) -> None:
        self.item = item
        super().__init__(f"cisrec: unknown item {item!r}")

    def __str__(self) -> str:
        return self.args[0]


class UnknownUserError(CisError, KeyError):
    exit_code = 3

    def __init__(self, user) -> None:
        self.user = user
        super().__init__(f"cisrec: unknown user {user!r}")

    def __str__(self) -> str:
        return self.args[0]
