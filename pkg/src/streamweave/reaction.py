"""Asynchronous answer generation.

On a respond decision the orchestrator snapshots the question, prior answers,
grounded clips, and global memory into an immutable request, then hands it to
a backend. Virtual-clock runs pre-plan the answer and schedule its completion
event; wall-clock runs execute on a worker thread and post the completion back
through a queue. Either way the perception/decision loop never waits.

The mock backend second-guesses spurious triggers: when the retrieval
distribution is too flat it answers with silence rather than text. Answers
carry emit_t_ms = trigger_t_ms + modeled latency by construction; the timeline
event that reports a completion is stamped with the session clock separately.
"""

from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .decision import MemorySegment
from .errors import BackendUnavailableError, InvalidConfigError, MalformedResponseError
from .retrieval import GroundedSelection
from .scenario import Question


@dataclass(frozen=True)
class Answer:
    question_id: str
    trigger_t_ms: int
    emit_t_ms: int
    text: str
    silent: bool
    grounded_indices: tuple[int, ...]


@dataclass(frozen=True)
class GroundedClip:
    clip_index: int
    span_ms: tuple[int, int]
    p: float


@dataclass(frozen=True)
class ReactionRequest:
    """Immutable snapshot of everything the generator may look at."""

    question: Question
    prior_answers: tuple[Answer, ...]
    grounded: GroundedSelection
    grounded_clips: tuple[GroundedClip, ...]
    memory_snapshot: tuple[MemorySegment, ...]
    trigger_t_ms: int


@dataclass(frozen=True)
class LatencyModel:
    kind: str = "fixed"  # fixed | uniform
    ms: int = 2000
    lo_ms: int = 0
    hi_ms: int = 0

    def sample(self, rng: np.random.Generator) -> int:
        if self.kind == "fixed":
            return self.ms
        if self.kind == "uniform":
            return int(rng.integers(self.lo_ms, self.hi_ms + 1))
        raise InvalidConfigError(f"unknown latency model {self.kind!r}")

    def validate(self) -> None:
        if self.kind not in ("fixed", "uniform"):
            raise InvalidConfigError(f"unknown latency model {self.kind!r}")
        if self.kind == "fixed" and self.ms < 0:
            raise InvalidConfigError("latency must be >= 0")
        if self.kind == "uniform" and not (0 <= self.lo_ms <= self.hi_ms):
            raise InvalidConfigError("uniform latency needs 0 <= lo <= hi")


@dataclass
class MockBackend:
    """Template generator with a modeled latency and a flat-retrieval filter."""

    silent_margin: float = 2.0
    latency: LatencyModel = field(default_factory=LatencyModel)
    kind: str = "mock"


@dataclass
class ExternalBackend:
    """HTTP generator service; latency model still paces virtual-clock runs."""

    endpoint: str
    timeout_ms: int = 1000
    latency: LatencyModel = field(default_factory=LatencyModel)
    kind: str = "external"


Backend = MockBackend | ExternalBackend

# The flat-retrieval test compares max probability against silent_margin/N
# (N = clip count). The bar is capped at 0.5 so a confident retrieval over a
# 2-3 clip history is never forced silent by an unreachable threshold.
_SILENT_BAR_CAP = 0.5


def mock_generate(req: ReactionRequest, backend: MockBackend, *, never_silent: bool = False) -> tuple[str, bool]:
    """Deterministic template answer, or silence on a flat retrieval."""
    p = req.grounded.p_pred
    bar = min(backend.silent_margin / p.size, _SILENT_BAR_CAP)
    if not never_silent and float(np.max(p)) < bar:
        return "", True
    ordinal = len(req.prior_answers) + 1
    cites = ", ".join(
        f"clip {g.clip_index} [{g.span_ms[0]},{g.span_ms[1]})" for g in req.grounded_clips
    )
    return f"[{req.question.id}] answer {ordinal}: grounded in {cites}", False


def request_wire(req: ReactionRequest) -> dict:
    return {
        "question": {"id": req.question.id, "text": req.question.text},
        "prior_answers": [{"t_ms": a.emit_t_ms, "text": a.text} for a in req.prior_answers],
        "grounded": [
            {"clip_index": g.clip_index, "span_ms": list(g.span_ms), "p": g.p}
            for g in req.grounded_clips
        ],
        "memory": [
            {"span_ms": list(m.span_ms), "vec": [float(x) for x in m.vec]}
            for m in req.memory_snapshot
        ],
    }


def external_generate(req: ReactionRequest, endpoint: str, timeout_ms: int) -> tuple[str, bool]:
    """POST the serialized request to the generator service."""
    body = json.dumps(request_wire(req)).encode("utf-8")
    http_req = urllib.request.Request(
        endpoint.rstrip("/") + "/generate",
        data=body,
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(http_req, timeout=timeout_ms / 1000.0) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
    except (urllib.error.URLError, TimeoutError, OSError) as exc:
        raise BackendUnavailableError(f"generator at {endpoint}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedResponseError(f"generator returned invalid JSON: {exc}") from exc
    try:
        return str(payload["text"]), bool(payload["silent"])
    except (KeyError, TypeError) as exc:
        raise MalformedResponseError(f"generator response missing fields: {exc}") from exc


def plan_reaction(
    req: ReactionRequest,
    backend: Backend,
    rng: np.random.Generator,
    *,
    never_silent: bool = False,
) -> Answer:
    """Produce the full answer up front for virtual-clock scheduling.

    External backends are called synchronously here; virtual time is decoupled
    from wall time, so the completion still lands at trigger + modeled latency.
    Raises BackendUnavailableError for the orchestrator to log as a failure.
    """
    latency = backend.latency.sample(rng)
    if isinstance(backend, MockBackend):
        text, silent = mock_generate(req, backend, never_silent=never_silent)
    else:
        text, silent = external_generate(req, backend.endpoint, backend.timeout_ms)
        if never_silent:
            silent = False
    return Answer(
        question_id=req.question.id,
        trigger_t_ms=req.trigger_t_ms,
        emit_t_ms=req.trigger_t_ms + latency,
        text=text if not silent else "",
        silent=silent,
        grounded_indices=tuple(req.grounded.clip_indices),
    )


class ReactionHandle:
    """Wall-clock reaction running on its own thread."""

    def __init__(self, thread: threading.Thread) -> None:
        self._thread = thread

    def join(self, timeout: float | None = None) -> None:
        self._thread.join(timeout)

    @property
    def running(self) -> bool:
        return self._thread.is_alive()


def trigger(
    req: ReactionRequest,
    backend: Backend,
    on_complete: Callable[[Answer | None, Exception | None], None],
    rng: np.random.Generator,
    *,
    never_silent: bool = False,
) -> ReactionHandle:
    """Start a reaction on a worker thread and return immediately.

    on_complete(answer, None) fires after the modeled latency (mock) or the
    real call (external); on_complete(None, error) reports backend failures.
    The caller's thread never waits.
    """
    import time

    latency_ms = backend.latency.sample(rng)

    def work() -> None:
        try:
            if isinstance(backend, MockBackend):
                time.sleep(latency_ms / 1000.0)
                text, silent = mock_generate(req, backend, never_silent=never_silent)
            else:
                text, silent = external_generate(req, backend.endpoint, backend.timeout_ms)
                if never_silent:
                    silent = False
            answer = Answer(
                question_id=req.question.id,
                trigger_t_ms=req.trigger_t_ms,
                emit_t_ms=req.trigger_t_ms + latency_ms,
                text=text if not silent else "",
                silent=silent,
                grounded_indices=tuple(req.grounded.clip_indices),
            )
            on_complete(answer, None)
        except Exception as exc:  # surfaced as a Failed event, never raised here
            on_complete(None, exc)

    thread = threading.Thread(target=work, daemon=True)
    thread.start()
    return ReactionHandle(thread)
