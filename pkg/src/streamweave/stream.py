"""Scenario playback under a virtual or wall clock.

Turns a scenario into a timed event feed for a sink. The virtual clock
delivers events only on explicit ticks (deterministic replay); the wall clock
schedules them in real time on a background thread with pause/resume and a
lag-drop backpressure contract.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Callable

from .errors import SinkClosedError
from .scenario import Question, Scenario
from .segmenter import FrameEmbedding

EV_QUESTION = "question"
EV_FRAME = "frame"
EV_DROPPED = "dropped"
EV_ENDED = "ended"

# Questions at the same timestamp as a frame are delivered first, so the
# question position excludes the clip that frame closes.
_PRIO = {EV_QUESTION: 0, EV_FRAME: 1}


@dataclass(frozen=True)
class StreamEvent:
    kind: str
    t_ms: int
    frame: FrameEmbedding | None = None
    question: Question | None = None


Sink = Callable[[StreamEvent], None]


class VirtualClock:
    kind = "virtual"

    def __init__(self) -> None:
        self.now_ms = 0

    def advance_to(self, t_ms: int) -> None:
        if t_ms < self.now_ms:
            raise ValueError(f"clock cannot move backwards ({self.now_ms} -> {t_ms})")
        self.now_ms = t_ms


class WallClock:
    """Millisecond wall clock that freezes while paused."""

    kind = "wall"

    def __init__(self) -> None:
        self._accum_ms = 0.0
        self._anchor: float | None = time.monotonic()
        self._lock = threading.Lock()

    @property
    def now_ms(self) -> int:
        with self._lock:
            if self._anchor is None:
                return int(self._accum_ms)
            return int(self._accum_ms + (time.monotonic() - self._anchor) * 1000.0)

    @property
    def paused(self) -> bool:
        with self._lock:
            return self._anchor is None

    def pause(self) -> None:
        with self._lock:
            if self._anchor is not None:
                self._accum_ms += (time.monotonic() - self._anchor) * 1000.0
                self._anchor = None

    def resume(self) -> None:
        with self._lock:
            if self._anchor is None:
                self._anchor = time.monotonic()


def scenario_events(scenario: Scenario) -> list[tuple[int, int, StreamEvent]]:
    """All frame/question events of a scenario, sorted by (t_ms, kind priority)."""
    entries: list[tuple[int, int, StreamEvent]] = []
    for q in scenario.questions:
        entries.append((q.t_ms, _PRIO[EV_QUESTION], StreamEvent(EV_QUESTION, q.t_ms, question=q)))
    for f in scenario.frames:
        entries.append((f.t_ms, _PRIO[EV_FRAME], StreamEvent(EV_FRAME, f.t_ms, frame=f)))
    entries.sort(key=lambda e: (e[0], e[1]))
    return entries


class PlayHandle:
    """Controls one playback; virtual handles are ticked, wall handles run a thread."""

    def __init__(
        self,
        scenario: Scenario,
        clock: VirtualClock | WallClock,
        sink: Sink,
        drop_after_ms: int | None = None,
    ) -> None:
        self._scenario = scenario
        self._clock = clock
        self._sink = sink
        self._drop_after_ms = drop_after_ms
        self._events = scenario_events(scenario)
        self._pos = 0
        self._end_ms = scenario.duration_ms
        self.ended = False
        self.frames_delivered = 0
        self.frames_dropped = 0
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        if isinstance(clock, WallClock):
            self._thread = threading.Thread(target=self._run_wall, daemon=True)
            self._thread.start()

    def _emit(self, event: StreamEvent) -> None:
        try:
            self._sink(event)
        except Exception as exc:
            raise SinkClosedError(f"sink rejected event at t={event.t_ms}") from exc
        if event.kind == EV_FRAME:
            self.frames_delivered += 1
        elif event.kind == EV_DROPPED:
            self.frames_dropped += 1

    def _emit_due(self, now_ms: int, late_drop: bool) -> None:
        while self._pos < len(self._events):
            t_ms, _, event = self._events[self._pos]
            if t_ms > now_ms:
                return
            self._pos += 1
            if (
                late_drop
                and self._drop_after_ms is not None
                and event.kind == EV_FRAME
                and now_ms - t_ms > self._drop_after_ms
            ):
                self._emit(StreamEvent(EV_DROPPED, t_ms, frame=event.frame))
            else:
                self._emit(event)
        if not self.ended and now_ms >= self._end_ms:
            self.ended = True
            self._emit(StreamEvent(EV_ENDED, self._end_ms))

    # --- virtual ------------------------------------------------------------

    def tick_to(self, t_ms: int) -> None:
        """Advance a virtual clock, delivering every event due on the way."""
        assert isinstance(self._clock, VirtualClock), "tick_to is for virtual clocks"
        while self._pos < len(self._events) and self._events[self._pos][0] <= t_ms:
            self._clock.advance_to(self._events[self._pos][0])
            self._emit_due(self._clock.now_ms, late_drop=False)
        self._clock.advance_to(t_ms)
        self._emit_due(t_ms, late_drop=False)

    def run_to_end(self) -> None:
        self.tick_to(self._end_ms)

    # --- wall ----------------------------------------------------------------

    def _run_wall(self) -> None:
        try:
            while not self._stop.is_set() and not self.ended:
                if isinstance(self._clock, WallClock) and self._clock.paused:
                    time.sleep(0.002)
                    continue
                now = self._clock.now_ms
                self._emit_due(now, late_drop=True)
                if self.ended:
                    return
                next_t = (
                    self._events[self._pos][0] if self._pos < len(self._events) else self._end_ms
                )
                time.sleep(min(0.005, max(0.0005, (next_t - now) / 1000.0)))
        except SinkClosedError:
            return

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def join(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)


def play(
    scenario: Scenario,
    clock: VirtualClock | WallClock,
    sink: Sink,
    drop_after_ms: int | None = None,
) -> PlayHandle:
    """Start playback of a scenario into a sink under the given clock."""
    return PlayHandle(scenario, clock, sink, drop_after_ms=drop_after_ms)
