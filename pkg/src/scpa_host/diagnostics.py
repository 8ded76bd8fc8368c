"""Thread-safe single-line diagnostic records (TRACE / REJECT / EPOCH)."""

from __future__ import annotations

import sys
import threading
from typing import TextIO


class DiagnosticLog:
    """Writes one record per line to a stream; safe to share across threads."""

    def __init__(self, stream: TextIO | None = None):
        self._stream = stream
        self._lock = threading.Lock()

    def emit(self, line: str) -> None:
        stream = self._stream if self._stream is not None else sys.stderr
        with self._lock:
            print(line, file=stream, flush=True)

    __call__ = emit
