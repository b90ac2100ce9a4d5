"""Gradient-buffer accounting.

Whenever a warp or loss routine allocates derivative state (``with_grad``),
it reports the buffer size here. A :class:`GradMemoryMeter` attributes those
bytes to named sections ("teacher", "student") and tracks the largest
single-iteration total, which is what the frozen-teacher probe compares
between frozen and unfrozen runs. With no meter active the calls are no-ops.
"""

from __future__ import annotations

from contextlib import contextmanager

_ACTIVE: list["GradMemoryMeter"] = []


class GradMemoryMeter:
    """Counts gradient-buffer bytes per section and per iteration."""

    def __init__(self):
        self.section_bytes: dict[str, int] = {}
        self.peak_iteration_bytes: int = 0
        self._iteration_bytes: int = 0
        self._tag: str | None = None

    @contextmanager
    def section(self, tag: str):
        prev = self._tag
        self._tag = tag
        try:
            yield self
        finally:
            self._tag = prev

    def new_iteration(self):
        """Close the current iteration window and start a fresh one."""
        self.peak_iteration_bytes = max(self.peak_iteration_bytes, self._iteration_bytes)
        self._iteration_bytes = 0

    def finish(self):
        self.new_iteration()

    def bytes_for(self, tag: str) -> int:
        return self.section_bytes.get(tag, 0)

    def _record(self, nbytes: int):
        tag = self._tag or "untagged"
        self.section_bytes[tag] = self.section_bytes.get(tag, 0) + nbytes
        self._iteration_bytes += nbytes

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        self.finish()
        _ACTIVE.remove(self)
        return False


def record_grad_buffer(nbytes: int):
    """Report a freshly allocated gradient buffer to all active meters."""
    for meter in _ACTIVE:
        meter._record(nbytes)
