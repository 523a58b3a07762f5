"""
progress
~~~~~~~~

학습 진행 기록(epoch, 트리 레벨, digit sweep, 평가)을 line-delimited JSON 으로
내보내는 리포터입니다. 학습 루프는 ``emit`` 으로 이벤트를 큐에 넣기만 하고,
실제 쓰기는 백그라운드 워커가 배치 단위로 처리합니다 (논블로킹).

기본적인 구성::

    >>> import sys
    >>> from cisrec.progress import ProgressReporter, EventKind
    >>> with ProgressReporter(sys.stdout, config_hash="abc") as reporter:
    ...     reporter.emit(EventKind.LEVEL, "treelearn", level=1, nodes=1)

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import logging
import queue
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, List, Optional, TextIO

from .worker import BackgroundWriter

logger = logging.getLogger("cisrec.progress")

DEFAULT_MAX_BATCH_SIZE = 50
DEFAULT_FLUSH_INTERVAL = 1.0
DEFAULT_QUEUE_SIZE = 10000


class EventKind(str, Enum):
    STAGE = "stage"
    EPOCH = "epoch"
    LEVEL = "level"
    SWEEP = "sweep"
    EVAL = "eval"
    WARNING = "warning"


@dataclass
class ProgressEvent:
    """
    진행 기록 한 건

    run_id 는 리포터마다 UUID v4 로 자동 생성됩니다.
    """

    kind: EventKind
    stage: str
    fields: Dict[str, Any] = field(default_factory=dict)
    timestamp: str = field(
        default_factory=lambda: datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    )
    run_id: str = ""
    config_hash: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "kind": self.kind.value,
            "stage": self.stage,
            "timestamp": self.timestamp,
        }
        if self.run_id:
            payload["run_id"] = self.run_id
        if self.config_hash:
            payload["config_hash"] = self.config_hash
        payload.update(_plain_fields(self.fields))
        return payload


def _plain_fields(fields: Dict[str, Any]) -> Dict[str, Any]:
    # numpy 스칼라 -> python 스칼라
    out: Dict[str, Any] = {}
    for key, value in fields.items():
        if hasattr(value, "item") and callable(value.item):
            try:
                value = value.item()
            except (ValueError, TypeError):
                value = str(value)
        out[key] = value
    return out


class ProgressReporter:
    """
    진행 기록 리포터

    Parameters
    ----------
    stream:          기록을 쓸 텍스트 스트림 (None 이면 비활성)
    config_hash:     모든 기록에 붙는 설정 해시
    max_batch_size:  한 번에 쓰는 최대 기록 수 (기본값: 50)
    flush_interval:  주기적 플러시 간격 초 (기본값: 1)
    queue_size:      내부 버퍼 크기. 가득 차면 emit 이 공간이 생길 때까지 기다립니다.
    enabled:         False 시 모든 emit 은 no-op
    owns_stream:     True 시 close 에서 스트림도 닫음
    """

    def __init__(
        self,
        stream: Optional[TextIO],
        *,
        config_hash: Optional[str] = None,
        max_batch_size: int = DEFAULT_MAX_BATCH_SIZE,
        flush_interval: float = DEFAULT_FLUSH_INTERVAL,
        queue_size: int = DEFAULT_QUEUE_SIZE,
        enabled: bool = True,
        owns_stream: bool = False,
    ) -> None:
        self._enabled = enabled and stream is not None
        self._stream = stream
        self._owns_stream = owns_stream
        self._config_hash = config_hash
        self._run_id = str(uuid.uuid4())
        self._started = False
        self.history: List[ProgressEvent] = []

        if not self._enabled:
            return

        self._queue: "queue.Queue[ProgressEvent]" = queue.Queue(maxsize=queue_size)
        self._writer = BackgroundWriter(
            queue=self._queue,
            stream=stream,
            max_batch_size=max_batch_size,
            flush_interval=flush_interval,
        )
        self._writer.start()
        self._started = True

    @property
    def enabled(self) -> bool:
        return self._enabled

    def emit(self, kind: EventKind, stage: str, **fields: Any) -> Optional[ProgressEvent]:
        """
        기록을 큐에 넣습니다. 비활성 상태면 None.
        리포터 오류는 학습을 멈추지 않습니다 (debug 로그만 남김).
        """
        if not self._enabled or not self._started:
            return None
        try:
            event = ProgressEvent(
                kind=kind,
                stage=stage,
                fields=dict(fields),
                run_id=self._run_id,
                config_hash=self._config_hash,
            )
            self._queue.put(event)
            self.history.append(event)
            return event
        except Exception as e:
            logger.debug("cisrec: progress emit failed (silent): %s", e)
            return None

    def flush(self) -> None:
        if self._started:
            self._writer.flush()

    def close(self) -> None:
        """남은 기록을 모두 쓰고 워커를 멈춥니다."""
        if self._started:
            self._writer.stop(flush_remaining=True)
            self._started = False
        if self._owns_stream and self._stream is not None and not self._stream.closed:
            self._stream.close()

    def __enter__(self) -> "ProgressReporter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def null_reporter() -> ProgressReporter:
    return ProgressReporter(None, enabled=False)
