"""
worker
~~~~~~

진행 기록을 배치로 쓰는 데몬 스레드 워커

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import atexit
import json
import logging
import queue
import threading
import time
from typing import TYPE_CHECKING, List, Optional, TextIO

if TYPE_CHECKING:
    from .progress import ProgressEvent

logger = logging.getLogger("cisrec.worker")

_POLL_SECONDS = 0.05


class BackgroundWriter:
    """
    큐에 쌓인 기록을 line-delimited JSON 으로 스트림에 씁니다.

    워커는 flush_interval 이 지났거나 max_batch_size 만큼 쌓였을 때 씁니다.
    ``flush()`` 는 호출한 스레드에서 바로 씁니다.
    """

    def __init__(
        self,
        queue: "queue.Queue[ProgressEvent]",
        stream: TextIO,
        max_batch_size: int,
        flush_interval: float,
    ) -> None:
        self._queue = queue
        self._stream = stream
        self._max_batch_size = max(1, max_batch_size)
        self._flush_interval = flush_interval

        self._stop_event = threading.Event()
        # 워커와 flush() 호출자의 쓰기 순서 보장
        self._write_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._running = False
        self._finished = False
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        with self._state_lock:
            if self._running:
                return
            self._running = True
        self._thread = threading.Thread(target=self._loop, name="cisrec-progress-writer", daemon=True)
        self._thread.start()
        atexit.register(self._shutdown)
        logger.debug("cisrec: progress writer started.")

    def flush(self) -> None:
        if self._running:
            self._write_pending()

    def stop(self, flush_remaining: bool = True, timeout: float = 10.0) -> None:
        with self._state_lock:
            if self._finished:
                return
            self._finished = True
        self._stop_event.set()
        if self._thread is not None and self._thread.is_alive():
            self._thread.join(timeout=timeout)
        if flush_remaining:
            self._write_pending()
        try:
            atexit.unregister(self._shutdown)
        except Exception:
            pass

    # internal
    def _loop(self) -> None:
        deadline = time.monotonic() + self._flush_interval
        while not self._stop_event.wait(_POLL_SECONDS):
            if time.monotonic() >= deadline or self._queue.qsize() >= self._max_batch_size:
                self._write_pending()
                deadline = time.monotonic() + self._flush_interval

    def _take_batch(self) -> "List[ProgressEvent]":
        batch: "List[ProgressEvent]" = []
        while len(batch) < self._max_batch_size:
            try:
                batch.append(self._queue.get_nowait())
            except queue.Empty:
                break
        return batch

    def _write_pending(self) -> None:
        with self._write_lock:
            try:
                batch = self._take_batch()
                while batch:
                    self._stream.write(
                        "".join(json.dumps(e.to_dict(), sort_keys=True, default=str) + "\n" for e in batch)
                    )
                    batch = self._take_batch()
                self._stream.flush()
            except Exception as e:
                logger.debug("cisrec: progress write error (silent): %s", e)

    def _shutdown(self) -> None:
        logger.debug("cisrec: interpreter exit, writing remaining progress records...")
        self.stop(flush_remaining=True, timeout=5.0)
