"""Tests for the benchmark progress emitter."""

from __future__ import annotations

import asyncio
import logging

from selgraph.events.progress import ProgressEmitter, log_progress


class TestProgressEmitter:
    def test_subscriber_receives_events_in_order(self, progress_emitter: ProgressEmitter):
        q = progress_emitter.subscribe()
        progress_emitter.emit("benchmark.started", {"replications": 2})
        progress_emitter.emit("replication.completed", {"rep": 0})

        first, second = q.get_nowait(), q.get_nowait()
        assert (first.id, first.event) == (1, "benchmark.started")
        assert (second.id, second.data) == (2, {"rep": 0})

    def test_history_keeps_the_newest_events(self, progress_emitter: ProgressEmitter):
        for rep in range(60):
            progress_emitter.emit("replication.completed", {"rep": rep})

        recent = progress_emitter.recent()
        assert len(recent) == 50
        assert recent[0].data == {"rep": 10}
        assert recent[-1].id == 60

    def test_close_ends_every_stream(self, progress_emitter: ProgressEmitter):
        live = progress_emitter.subscribe()
        progress_emitter.close()
        late = progress_emitter.subscribe()

        assert live.get_nowait() is None
        assert late.get_nowait() is None
        assert late.empty()

    def test_encode_format(self, progress_emitter: ProgressEmitter):
        evt = progress_emitter.emit("replication.completed", {"rep": 2, "method": "split"})
        assert evt.encode() == 'replication.completed {"method": "split", "rep": 2}'

    def test_write_log(self, progress_emitter: ProgressEmitter, tmp_path):
        progress_emitter.emit("benchmark.started", {"setting": "1"})
        progress_emitter.emit("replication.failed", {"rep": 0, "error": "boom"})
        path = progress_emitter.write_log(tmp_path / "run" / "progress.log")

        assert path.read_text().splitlines() == [
            '1 benchmark.started {"setting": "1"}',
            '2 replication.failed {"error": "boom", "rep": 0}',
        ]

    def test_write_log_of_empty_emitter(self, progress_emitter: ProgressEmitter, tmp_path):
        path = progress_emitter.write_log(tmp_path / "progress.log")
        assert path.read_text() == ""


class TestLogProgress:
    async def test_drains_until_close(self, progress_emitter: ProgressEmitter, caplog):
        q = progress_emitter.subscribe()
        task = asyncio.create_task(log_progress(q))
        progress_emitter.emit("replication.completed", {"rep": 0})
        progress_emitter.emit("replication.failed", {"rep": 1, "error": "boom"})
        progress_emitter.close()

        with caplog.at_level(logging.INFO, logger="selgraph.events.progress"):
            seen = await task

        assert seen == 2
        levels = {r.getMessage().split()[0]: r.levelno for r in caplog.records}
        assert levels["replication.completed"] == logging.INFO
        assert levels["replication.failed"] == logging.WARNING
