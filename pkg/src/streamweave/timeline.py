"""Ordered event log of one run; the basis for all metrics and the gateway feed."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IncompleteTimelineError, ValidationError

FRAME_ARRIVED = "FrameArrived"
FRAME_DROPPED = "FrameDropped"
CLIP_EMITTED = "ClipEmitted"
QUESTION_INSERTED = "QuestionInserted"
DECISION = "Decision"
REACTION_START = "ReactionStart"
REACTION_END = "ReactionEnd"
ANSWER_EMITTED = "AnswerEmitted"
SILENT = "Silent"
SUPPRESSED = "Suppressed"
FAILED = "Failed"
STREAM_ENDED = "StreamEnded"

KINDS = (
    FRAME_ARRIVED,
    FRAME_DROPPED,
    CLIP_EMITTED,
    QUESTION_INSERTED,
    DECISION,
    REACTION_START,
    REACTION_END,
    ANSWER_EMITTED,
    SILENT,
    SUPPRESSED,
    FAILED,
    STREAM_ENDED,
)


@dataclass(frozen=True)
class TimelineEvent:
    t_ms: int
    kind: str
    payload: dict

    def to_dict(self) -> dict:
        return {"t_ms": self.t_ms, "kind": self.kind, "payload": self.payload}


@dataclass
class Timeline:
    events: list[TimelineEvent] = field(default_factory=list)

    def append(self, t_ms: int, kind: str, payload: dict | None = None) -> TimelineEvent:
        if kind not in KINDS:
            raise ValidationError(f"unknown event kind {kind!r}")
        if self.events and t_ms < self.events[-1].t_ms:
            raise ValidationError(
                f"event time {t_ms} precedes previous event at {self.events[-1].t_ms}"
            )
        event = TimelineEvent(t_ms=t_ms, kind=kind, payload=payload or {})
        self.events.append(event)
        return event

    def of_kind(self, *kinds: str) -> list[TimelineEvent]:
        return [e for e in self.events if e.kind in kinds]

    def check_complete(self) -> None:
        """Raise unless the run finished and reaction starts/ends pair up."""
        ended = self.of_kind(STREAM_ENDED)
        if len(ended) != 1:
            raise IncompleteTimelineError(f"expected exactly one StreamEnded, got {len(ended)}")
        starts = len(self.of_kind(REACTION_START))
        finishes = len(self.of_kind(REACTION_END)) + len(
            [e for e in self.of_kind(FAILED) if e.payload.get("during") == "reaction"]
        )
        if starts != finishes:
            raise IncompleteTimelineError(
                f"{starts} reaction starts vs {finishes} reaction ends/failures"
            )

    def to_json(self) -> str:
        return json.dumps([e.to_dict() for e in self.events], sort_keys=True, indent=1)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text: str) -> "Timeline":
        data = json.loads(text)
        tl = cls()
        for entry in data:
            tl.append(entry["t_ms"], entry["kind"], entry.get("payload", {}))
        return tl

    @classmethod
    def load(cls, path: str | Path) -> "Timeline":
        return cls.from_json(Path(path).read_text())
