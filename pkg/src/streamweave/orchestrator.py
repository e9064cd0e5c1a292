"""Pipeline wiring: stream -> segmenter -> decisions -> retrieval -> reactions.

One sequencer owns the segmenter and decision state and consumes an ordered
event feed; reactions complete out-of-band and post back into the same ordered
log. The async mode never stalls perception during generation; the serial
baseline models a single blocking model, queueing (then dropping) frames while
a reaction is in flight.

Virtual-clock runs are bit-deterministic given (scenario, config, seed).
"""

from __future__ import annotations

import heapq
from typing import Callable

import numpy as np

from .decision import (
    RESPOND,
    DecisionState,
    ExternalScorer,
    HeadScorer,
    OracleScorer,
)
from .errors import InvalidConfigError, PipelineError
from .reaction import Answer, GroundedClip, ReactionRequest, plan_reaction
from .retrieval import score_clips, select_grounded
from .runconfig import ANS_AT_TRIGGER, ASYNC, SERIAL, RunConfig, ScorerConfig
from .scenario import Question, Scenario
from .segmenter import ClipFeature, FrameEmbedding, StreamSegmenter
from . import timeline as tl
from .timeline import Timeline

# Heap priorities at equal timestamps: questions precede reaction completions
# precede frames precede stream end.
_P_QUESTION = 0
_P_REACTION = 1
_P_FRAME = 2
_P_END = 3


def build_scorer(cfg: ScorerConfig, scenario: Scenario):
    if cfg.kind == "oracle":
        return OracleScorer.from_scenario(scenario, threshold=cfg.threshold)
    if cfg.kind in ("heuristic", "learned"):
        weights = (
            np.asarray(cfg.weights, dtype=np.float64)
            if cfg.weights is not None
            else np.zeros(scenario.dim)
        )
        return HeadScorer(
            weights=weights, bias=cfg.bias, threshold=cfg.threshold, kind=cfg.kind
        )
    if cfg.kind == "external":
        return ExternalScorer(
            endpoint=cfg.endpoint, timeout_ms=cfg.timeout_ms, threshold=cfg.threshold
        )
    raise InvalidConfigError(f"unknown scorer kind {cfg.kind!r}")


class PipelineCore:
    """Per-run pipeline state shared by the virtual driver and live sessions.

    The `start_reaction` strategy decouples scheduling: virtual runs pre-plan
    the answer and enqueue its completion; live sessions spawn worker threads.
    It returns an error string on synchronous backend failure, else None.
    """

    def __init__(
        self,
        scenario: Scenario,
        cfg: RunConfig,
        timeline: Timeline,
        start_reaction: Callable[[ReactionRequest], str | None],
    ) -> None:
        cfg.validate()
        self.scenario = scenario
        self.cfg = cfg
        self.timeline = timeline
        self.start_reaction = start_reaction
        self.segmenter = StreamSegmenter(
            config=cfg.segmenter, frame_period_ms=scenario.frame_period_ms
        )
        self.state = DecisionState(
            no_ans_token=cfg.ablations.no_ans_token,
            no_todo_token=cfg.ablations.no_todo_token,
        )
        self.scorer = build_scorer(cfg.scorer, scenario)
        self.retrieval_head = cfg.retrieval.make_head(scenario.dim)
        self.retrieval_policy = cfg.retrieval.make_policy()
        self.clips: list[ClipFeature] = []
        self.answers: list[Answer] = []
        self.in_flight = False
        self.ended = False
        self._pending: ReactionRequest | None = None

    # -- event handlers --------------------------------------------------------

    def on_question(self, question: Question, t: int) -> None:
        self.timeline.append(
            t, tl.QUESTION_INSERTED, {"question_id": question.id, "text": question.text}
        )
        try:
            self.state.insert_question(question, t)
        except PipelineError as exc:
            self.timeline.append(
                t, tl.FAILED, {"during": "question", "reason": str(exc)}
            )

    def on_frame(self, frame: FrameEmbedding, t: int, nominal_t: int) -> None:
        try:
            emitted = self.segmenter.push_frame(frame)
        except PipelineError as exc:
            self.timeline.append(t, tl.FAILED, {"during": "frame", "reason": str(exc)})
            return
        sim = self.segmenter.last_similarity
        self.timeline.append(
            t,
            tl.FRAME_ARRIVED,
            {"nominal_t_ms": nominal_t, "sim_prev": None if sim is None else float(sim)},
        )
        for cf in emitted:
            self._on_clip(cf, t)

    def on_stream_end(self, t: int) -> None:
        tail = self.segmenter.finalize()
        if tail is not None:
            self._on_clip(tail, t)
        self.timeline.append(t, tl.STREAM_ENDED, {})
        self.ended = True

    def on_reaction_complete(self, answer: Answer | None, error: Exception | None, t: int) -> None:
        self.in_flight = False
        pending, self._pending = self._pending, None
        if error is not None:
            self.timeline.append(
                t,
                tl.FAILED,
                {"during": "reaction", "reason": str(error)},
            )
            if self.cfg.ans_at == ANS_AT_TRIGGER:
                self.state.undo_last_answer()
            return
        self.timeline.append(
            t,
            tl.REACTION_END,
            {
                "question_id": answer.question_id,
                "trigger_t_ms": answer.trigger_t_ms,
                "silent": answer.silent,
            },
        )
        if answer.silent:
            self.timeline.append(
                t,
                tl.SILENT,
                {"question_id": answer.question_id, "trigger_t_ms": answer.trigger_t_ms},
            )
            if self.cfg.ans_at == ANS_AT_TRIGGER:
                self.state.undo_last_answer()
            return
        self.timeline.append(
            t,
            tl.ANSWER_EMITTED,
            {
                "question_id": answer.question_id,
                "trigger_t_ms": answer.trigger_t_ms,
                "emit_t_ms": answer.emit_t_ms,
                "text": answer.text,
                "ordinal": len(self.answers) + 1,
                "grounded": [
                    {"clip_index": g.clip_index, "span_ms": list(g.span_ms), "p": g.p}
                    for g in (pending.grounded_clips if pending is not None else ())
                ],
            },
        )
        self.answers.append(answer)
        if self.cfg.ans_at != ANS_AT_TRIGGER:
            self.state.record_answer(answer.trigger_t_ms)

    # -- internals --------------------------------------------------------------

    def _on_clip(self, cf: ClipFeature, t: int) -> None:
        self.clips.append(cf)
        self.timeline.append(
            t,
            tl.CLIP_EMITTED,
            {
                "index": cf.clip.index,
                "span_ms": [cf.clip.start_ms, cf.clip.end_ms],
                "frame_count": cf.clip.frame_count,
                "cause": cf.cause,
                "boundary_sim": None if cf.boundary_sim is None else float(cf.boundary_sim),
            },
        )
        self.state.ingest_clip(cf)
        if self.state.question is None:
            return
        if self.in_flight and self.cfg.ans_at != ANS_AT_TRIGGER:
            # Default orchestration: no evaluations while a reaction is open.
            self.timeline.append(
                t,
                tl.SUPPRESSED,
                {
                    "question_id": self.state.question.id,
                    "clip_index": cf.clip.index,
                    "reason": "in_flight",
                },
            )
            return
        record = self.state.evaluate_todo(self.scorer, t)
        self.timeline.append(
            t,
            tl.DECISION,
            {
                "question_id": self.state.question.id,
                "p_respond": float(record.p_respond),
                "action": record.action,
                "clip_index": cf.clip.index,
            },
        )
        if not self.state.compacted:
            self.state.compact_to_memory()
        if record.action != RESPOND:
            return
        if self.in_flight:
            self.timeline.append(
                t,
                tl.SUPPRESSED,
                {
                    "question_id": self.state.question.id,
                    "clip_index": cf.clip.index,
                    "reason": "in_flight",
                },
            )
            return
        self._trigger(record.todo_embed, t)

    def _trigger(self, todo_embed: np.ndarray, t: int) -> None:
        indicators = np.stack([c.F_hat for c in self.clips])
        p_pred = score_clips(todo_embed, indicators, self.retrieval_head)
        selection = select_grounded(p_pred, self.retrieval_policy)
        grounded_clips = tuple(
            GroundedClip(
                clip_index=i,
                span_ms=(self.clips[i].clip.start_ms, self.clips[i].clip.end_ms),
                p=float(p_pred[i]),
            )
            for i in selection.clip_indices
        )
        request = ReactionRequest(
            question=self.state.question,
            prior_answers=tuple(self.answers),
            grounded=selection,
            grounded_clips=grounded_clips,
            memory_snapshot=tuple(self.state.memory_segments()),
            trigger_t_ms=t,
        )
        self.timeline.append(
            t,
            tl.REACTION_START,
            {
                "question_id": request.question.id,
                "trigger_t_ms": t,
                "ordinal": len(self.answers) + 1,
                "grounded": [
                    {"clip_index": g.clip_index, "span_ms": list(g.span_ms), "p": g.p}
                    for g in grounded_clips
                ],
            },
        )
        self.in_flight = True
        self._pending = request
        if self.cfg.ans_at == ANS_AT_TRIGGER:
            self.state.record_answer(t)
        error = self.start_reaction(request)
        if error is not None:
            self.timeline.append(
                t, tl.FAILED, {"during": "reaction", "reason": error}
            )
            self.in_flight = False
            self._pending = None
            if self.cfg.ans_at == ANS_AT_TRIGGER:
                self.state.undo_last_answer()


def _scenario_heap(scenario: Scenario) -> list[tuple[int, int, int, str, object]]:
    entries: list[tuple[int, int, int, str, object]] = []
    seq = 0
    for q in scenario.questions:
        entries.append((q.t_ms, _P_QUESTION, seq, "question", q))
        seq += 1
    for f in scenario.frames:
        entries.append((f.t_ms, _P_FRAME, seq, "frame", f))
        seq += 1
    entries.append((scenario.duration_ms, _P_END, seq, "end", None))
    heapq.heapify(entries)
    return entries


def run(scenario: Scenario, cfg: RunConfig) -> Timeline:
    """Asynchronous pipeline run under the virtual clock."""
    if cfg.mode != ASYNC:
        raise InvalidConfigError("run() executes async mode; use run_serial_baseline")
    return _run_virtual(scenario, cfg)


def run_serial_baseline(scenario: Scenario, cfg: RunConfig) -> Timeline:
    """Blocking single-model baseline: generation halts perception."""
    if cfg.mode != SERIAL:
        raise InvalidConfigError("run_serial_baseline() requires mode='serial'")
    return _run_virtual(scenario, cfg)


def execute(scenario: Scenario, cfg: RunConfig) -> Timeline:
    return run(scenario, cfg) if cfg.mode == ASYNC else run_serial_baseline(scenario, cfg)


def _run_virtual(scenario: Scenario, cfg: RunConfig) -> Timeline:
    rng = np.random.default_rng(cfg.seed)
    timeline = Timeline()
    heap = _scenario_heap(scenario)
    seq = len(heap) + 1

    def start_reaction(request: ReactionRequest) -> str | None:
        nonlocal seq
        try:
            answer = plan_reaction(
                request,
                cfg.reaction.make_backend(),
                rng,
                never_silent=cfg.ablations.no_silent_token,
            )
        except PipelineError as exc:
            return str(exc)
        heapq.heappush(heap, (answer.emit_t_ms, _P_REACTION, seq, "reaction", answer))
        seq += 1
        return None

    core = PipelineCore(scenario, cfg, timeline, start_reaction)
    serial = cfg.mode == SERIAL
    queue: list[tuple[int, FrameEmbedding]] = []
    stream_done = False

    def try_finish(t: int) -> None:
        nonlocal stream_done
        if stream_done and not core.in_flight and not queue:
            stream_done = False
            core.on_stream_end(t)

    while heap:
        t, _, _, kind, payload = heapq.heappop(heap)
        if kind == "question":
            core.on_question(payload, t)
        elif kind == "frame":
            if serial and core.in_flight:
                capacity = cfg.queue_capacity
                if capacity is None or len(queue) < capacity:
                    queue.append((t, payload))
                else:
                    timeline.append(t, tl.FRAME_DROPPED, {"nominal_t_ms": t})
            else:
                core.on_frame(payload, t, t)
        elif kind == "reaction":
            core.on_reaction_complete(payload, None, t)
            while queue and not core.in_flight:
                nominal, frame = queue.pop(0)
                core.on_frame(frame, t, nominal)
            try_finish(t)
        elif kind == "end":
            if serial and (core.in_flight or queue):
                stream_done = True
            else:
                core.on_stream_end(t)
    return timeline
