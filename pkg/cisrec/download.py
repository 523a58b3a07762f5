"""
download
~~~~~~~~

MovieLens 평점 아카이브 내려받기 (``cisrec fetch``)

:license: MIT, see LICENSE for more details.
"""

from __future__ import annotations

import logging
import os
import random
import shutil
import time
import zipfile
from pathlib import Path
from typing import Optional, Union

import requests

from .errors import DataError

logger = logging.getLogger("cisrec.download")

DEFAULT_URL = "https://files.grouplens.org/datasets/movielens/ml-10m.zip"
RATINGS_MEMBER = "ratings.dat"
_DEFAULT_TIMEOUT = 60
_CHUNK_SIZE = 1 << 20


class DownloadResult:
    """요청 한 번의 결과"""

    def __init__(
        self,
        success: bool,
        status_code: Optional[int] = None,
        retryable: bool = False,
        retry_after: float = 0.0,
        error: Optional[str] = None,
    ) -> None:
        self.success = success
        self.status_code = status_code
        self.retryable = retryable
        self.retry_after = retry_after
        self.error = error

    def __repr__(self) -> str:
        return (
            f"DownloadResult(success={self.success}, "
            f"status_code={self.status_code}, "
            f"retryable={self.retryable})"
        )


class MovieLensDownloader:
    """
    아카이브를 스트리밍으로 받아 평점 파일을 꺼냅니다.

    재시도 정책:
      - 네트워크 오류 또는 5xx -> 지수 백오프 후 재시도 (최대 max_retries회)
      - 429 -> Retry-After 헤더 기반 대기
      - 기타 4xx -> 즉시 포기
    """

    def __init__(
        self,
        url: str = DEFAULT_URL,
        max_retries: int = 3,
        timeout: float = _DEFAULT_TIMEOUT,
        session: Optional[requests.Session] = None,
    ) -> None:
        self._url = url
        self._max_retries = max_retries
        self._timeout = timeout
        self._session = session or self._build_session()

    @staticmethod
    def _build_session() -> requests.Session:
        from . import __version__

        session = requests.Session()
        session.headers.update({"User-Agent": f"cisrec/{__version__}"})
        return session

    def fetch(self, directory: Union[str, Path]) -> Path:
        """
        ``directory`` 에 아카이브를 받고 평점 파일 경로를 돌려줍니다.
        이미 꺼낸 파일이 있으면 다시 받지 않습니다.

        Raises
        ------
        DataError  재시도 후에도 실패하거나 아카이브에 평점 파일이 없을 때
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        target = directory / RATINGS_MEMBER
        if target.exists():
            logger.info("cisrec: %s already present, skipping download", target)
            return target

        archive = directory / Path(self._url).name
        if not archive.exists():
            result = self.download(archive)
            if not result.success:
                raise DataError(f"cisrec: download of {self._url} failed ({result.error})")
        return extract_ratings(archive, target)

    def download(self, destination: Path) -> DownloadResult:
        attempt = 0
        last_result = DownloadResult(success=False, error="not attempted")

        while attempt <= self._max_retries:
            last_result = self._do_request(destination)
            if last_result.success:
                logger.info("cisrec: downloaded %s (attempt %d)", destination.name, attempt + 1)
                return last_result
            if not last_result.retryable:
                logger.warning(
                    "cisrec: download failed status=%s error=%s", last_result.status_code, last_result.error
                )
                return last_result

            wait_seconds = last_result.retry_after or self._backoff_seconds(attempt)
            logger.info(
                "cisrec: retrying download in %.2fs (attempt %d/%d) status=%s",
                wait_seconds, attempt + 1, self._max_retries, last_result.status_code,
            )
            time.sleep(wait_seconds)
            attempt += 1

        return last_result

    def _do_request(self, destination: Path) -> DownloadResult:
        partial = destination.with_name(destination.name + ".part")
        try:
            with self._session.get(self._url, stream=True, timeout=self._timeout) as response:
                status = response.status_code
                if status == 429:
                    return DownloadResult(
                        success=False,
                        status_code=status,
                        retryable=True,
                        retry_after=self._parse_retry_after(response),
                        error="rate_limited",
                    )
                if 500 <= status < 600:
                    return DownloadResult(success=False, status_code=status, retryable=True, error=f"server_error_{status}")
                if not 200 <= status < 300:
                    return DownloadResult(success=False, status_code=status, error=f"client_error_{status}")
                with open(partial, "wb") as handle:
                    for chunk in response.iter_content(chunk_size=_CHUNK_SIZE):
                        if chunk:
                            handle.write(chunk)
            os.replace(partial, destination)
            return DownloadResult(success=True, status_code=status)
        except requests.RequestException as exc:
            return DownloadResult(success=False, retryable=True, error=str(exc))
        finally:
            if partial.exists():
                partial.unlink()

    @staticmethod
    def _parse_retry_after(response: requests.Response) -> float:
        try:
            retry_after = response.headers.get("Retry-After")
            if retry_after:
                return max(1.0, min(float(retry_after), 60.0))
        except (TypeError, ValueError):
            pass
        return 5.0

    @staticmethod
    def _backoff_seconds(attempt: int) -> float:
        """
        지수 백오프 : base=1s, multiplier=2, jitter 포함
        """
        base = 2 ** attempt
        jitter = random.uniform(0, base * 0.2)
        return min(base + jitter, 30.0)

    def close(self) -> None:
        try:
            self._session.close()
        except Exception:
            pass


def extract_ratings(archive: Union[str, Path], target: Union[str, Path]) -> Path:
    """아카이브에서 이름이 ``ratings.dat`` 으로 끝나는 첫 멤버를 target 으로 꺼냅니다."""
    archive, target = Path(archive), Path(target)
    try:
        with zipfile.ZipFile(archive) as bundle:
            members = [name for name in bundle.namelist() if name.endswith(RATINGS_MEMBER)]
            if not members:
                raise DataError(f"cisrec: {archive} holds no {RATINGS_MEMBER}")
            with bundle.open(members[0]) as source, open(target, "wb") as sink:
                shutil.copyfileobj(source, sink)
    except zipfile.BadZipFile as exc:
        raise DataError(f"cisrec: {archive} is not a valid zip archive ({exc})") from exc
    logger.info("cisrec: extracted %s", target)
    return target
