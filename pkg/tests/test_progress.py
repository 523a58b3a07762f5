import io
import json

import numpy as np

from cisrec.progress import EventKind, ProgressReporter, null_reporter


def _lines(stream):
    return [json.loads(line) for line in stream.getvalue().splitlines()]


def test_emit_and_flush():
    stream = io.StringIO()
    reporter = ProgressReporter(stream, config_hash="abc", flush_interval=60.0)
    reporter.emit(EventKind.EPOCH, "flat", epoch=0, loglik=np.float64(-1.5))
    reporter.flush()
    (record,) = _lines(stream)
    assert record["kind"] == "epoch"
    assert record["stage"] == "flat"
    assert record["loglik"] == -1.5
    assert record["config_hash"] == "abc"
    assert record["run_id"]
    reporter.close()


def test_close_writes_everything_in_order():
    stream = io.StringIO()
    with ProgressReporter(stream, max_batch_size=3, flush_interval=60.0) as reporter:
        for level in range(10):
            reporter.emit(EventKind.LEVEL, "treelearn", level=level)
    assert [r["level"] for r in _lines(stream)] == list(range(10))
    assert not stream.closed


def test_owned_stream_is_closed(tmp_path):
    handle = open(tmp_path / "progress.jsonl", "w", encoding="utf-8")
    reporter = ProgressReporter(handle, owns_stream=True)
    reporter.emit(EventKind.STAGE, "prep")
    reporter.close()
    assert handle.closed
    assert json.loads((tmp_path / "progress.jsonl").read_text())["kind"] == "stage"


def test_disabled_reporter():
    reporter = null_reporter()
    assert not reporter.enabled
    assert reporter.emit(EventKind.EVAL, "eval", map=0.5) is None
    assert reporter.history == []
    reporter.close()

    stream = io.StringIO()
    quiet = ProgressReporter(stream, enabled=False)
    quiet.emit(EventKind.EVAL, "eval")
    quiet.close()
    assert stream.getvalue() == ""


def test_history_keeps_events():
    with ProgressReporter(io.StringIO()) as reporter:
        event = reporter.emit(EventKind.SWEEP, "bmf", sweep=1)
    assert reporter.history == [event]
    assert event.to_dict()["sweep"] == 1
