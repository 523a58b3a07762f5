import io
import zipfile

import pytest
import requests

from cisrec import download
from cisrec.download import MovieLensDownloader, extract_ratings
from cisrec.errors import DataError

RATINGS = b"1::122::5::838985046\n1::185::5::838983525\n"


def _archive_bytes(member="ml-10M100K/ratings.dat", payload=RATINGS):
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w") as bundle:
        bundle.writestr(member, payload)
    return buffer.getvalue()


class FakeResponse:
    def __init__(self, status_code, body=b"", headers=None):
        self.status_code = status_code
        self.headers = headers or {}
        self._body = body

    def iter_content(self, chunk_size=1):
        for start in range(0, len(self._body), chunk_size):
            yield self._body[start:start + chunk_size]

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        return False


class FakeSession:
    def __init__(self, *responses):
        self.responses = list(responses)
        self.calls = 0

    def get(self, url, stream=False, timeout=None):
        self.calls += 1
        response = self.responses.pop(0)
        if isinstance(response, Exception):
            raise response
        return response

    def close(self):
        pass


@pytest.fixture
def no_sleep(monkeypatch):
    waits = []
    monkeypatch.setattr(download.time, "sleep", waits.append)
    return waits


def test_fetch_extracts_ratings(tmp_path):
    session = FakeSession(FakeResponse(200, _archive_bytes()))
    path = MovieLensDownloader("https://example.org/ml-10m.zip", session=session).fetch(tmp_path)
    assert path == tmp_path / "ratings.dat"
    assert path.read_bytes() == RATINGS
    assert not list(tmp_path.glob("*.part"))


def test_fetch_skips_when_present(tmp_path):
    (tmp_path / "ratings.dat").write_bytes(RATINGS)
    session = FakeSession()
    MovieLensDownloader(session=session).fetch(tmp_path)
    assert session.calls == 0


def test_client_error_is_fatal(tmp_path, no_sleep):
    session = FakeSession(FakeResponse(404))
    with pytest.raises(DataError):
        MovieLensDownloader(session=session).fetch(tmp_path)
    assert session.calls == 1
    assert no_sleep == []


def test_server_error_is_retried(tmp_path, no_sleep):
    session = FakeSession(
        FakeResponse(503),
        requests.ConnectionError("reset"),
        FakeResponse(200, _archive_bytes()),
    )
    MovieLensDownloader(session=session, max_retries=3).fetch(tmp_path)
    assert session.calls == 3
    assert len(no_sleep) == 2


def test_rate_limit_uses_retry_after(tmp_path, no_sleep):
    session = FakeSession(FakeResponse(429, headers={"Retry-After": "7"}), FakeResponse(200, _archive_bytes()))
    MovieLensDownloader(session=session).fetch(tmp_path)
    assert no_sleep == [7.0]


def test_retries_exhausted(tmp_path, no_sleep):
    session = FakeSession(*[FakeResponse(500) for _ in range(3)])
    result = MovieLensDownloader(session=session, max_retries=2).download(tmp_path / "a.zip")
    assert not result.success
    assert result.status_code == 500
    assert session.calls == 3


def test_extract_without_ratings_member(tmp_path):
    archive = tmp_path / "a.zip"
    archive.write_bytes(_archive_bytes(member="movies.dat"))
    with pytest.raises(DataError):
        extract_ratings(archive, tmp_path / "ratings.dat")


def test_extract_bad_zip(tmp_path):
    archive = tmp_path / "a.zip"
    archive.write_bytes(b"not a zip")
    with pytest.raises(DataError):
        extract_ratings(archive, tmp_path / "ratings.dat")
