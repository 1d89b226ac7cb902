"""Benchmark progress events: live subscriber queues plus a bounded history."""

from __future__ import annotations

import asyncio
import json
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from selgraph.config import settings

logger = logging.getLogger(__name__)


@dataclass
class ProgressEvent:
    id: int
    event: str
    data: dict

    def encode(self) -> str:
        """One log line: ``<event> <json payload>``."""
        return f"{self.event} {json.dumps(self.data, sort_keys=True)}"


class ProgressEmitter:
    """Fans benchmark events out to subscriber queues.

    The last ``buffer_size`` events are kept so the run directory can carry
    the tail of its progress, including after a failed benchmark.
    """

    def __init__(self, buffer_size: int = settings.progress_buffer_size):
        self._buffer: deque[ProgressEvent] = deque(maxlen=buffer_size)
        self._counter = 0
        self._subscribers: list[asyncio.Queue[ProgressEvent | None]] = []
        self._closed = False

    def emit(self, event: str, data: dict) -> ProgressEvent:
        self._counter += 1
        record = ProgressEvent(id=self._counter, event=event, data=data)
        self._buffer.append(record)
        for q in self._subscribers:
            q.put_nowait(record)
        return record

    def subscribe(self) -> asyncio.Queue[ProgressEvent | None]:
        """Queue receiving every later event, then None once the emitter closes."""
        q: asyncio.Queue[ProgressEvent | None] = asyncio.Queue()
        if self._closed:
            q.put_nowait(None)
        else:
            self._subscribers.append(q)
        return q

    def close(self) -> None:
        """Send the end-of-stream marker (None) to every subscriber."""
        self._closed = True
        for q in self._subscribers:
            q.put_nowait(None)
        self._subscribers.clear()

    def recent(self) -> list[ProgressEvent]:
        return list(self._buffer)

    def write_log(self, path: Path) -> Path:
        """Write the buffered events as ``<id> <event> <json>`` lines."""
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"{evt.id} {evt.encode()}\n" for evt in self._buffer]
        path.write_text("".join(lines), encoding="utf-8")
        return path


async def log_progress(queue: asyncio.Queue[ProgressEvent | None]) -> int:
    """Drain a subscriber queue into the log until the stream ends."""
    seen = 0
    while True:
        evt = await queue.get()
        if evt is None:
            return seen
        seen += 1
        level = logging.WARNING if evt.event.endswith(".failed") else logging.INFO
        logger.log(level, evt.encode())
