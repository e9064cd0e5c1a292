"""Builds labeled training sets from scenario ground truth.

Replays a scenario through the segmenter and decision state exactly as a run
would, using the ground-truth scorer so compaction and answer markers evolve
realistically, and harvests one decision sample per evaluated clip plus one
retrieval sample per relevant clip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decision import DecisionState, OracleScorer, RESPOND
from .retrieval import RetrievalHead, score_clips
from .scenario import Scenario, make_planted_scenario
from .segmenter import SegmenterConfig, StreamSegmenter
from .stream import EV_FRAME, EV_QUESTION, scenario_events


@dataclass
class TrainingSets:
    # (decision embedding, label): label is 1 when the evaluated clip overlaps
    # a ground-truth relevant span.
    decision: list[tuple[np.ndarray, int]]
    # (decision embedding, indicator matrix, relevant clip indices)
    retrieval: list[tuple[np.ndarray, np.ndarray, set[int]]]


def _overlaps(span: tuple[int, int], start: int, end: int) -> bool:
    return start < span[1] and span[0] < end


def _majority_overlap(span: tuple[int, int], start: int, end: int) -> bool:
    # Strictly more than half the clip lies inside the span.
    overlap = min(span[1], end) - max(span[0], start)
    return overlap * 2 > (end - start)


def build_training_sets(scenario: Scenario, seg_cfg: SegmenterConfig) -> TrainingSets:
    spans: list[tuple[int, int]] = [
        s for q in scenario.questions for s in q.relevant_spans_ms
    ]
    segmenter = StreamSegmenter(config=seg_cfg, frame_period_ms=scenario.frame_period_ms)
    state = DecisionState()
    oracle = OracleScorer.from_scenario(scenario)
    decision_samples: list[tuple[np.ndarray, int]] = []
    retrieval_samples: list[tuple[np.ndarray, np.ndarray, set[int]]] = []
    clips = []

    def on_clip(cf, t):
        clips.append(cf)
        state.ingest_clip(cf)
        if state.question is None:
            return
        record = state.evaluate_todo(oracle, t)
        if not state.compacted:
            state.compact_to_memory()
        # The respond-worthiness label is the ground-truth action: the clip
        # overlaps a relevant span that has not been answered yet. Clips
        # overlapping an already-answered span are correct "wait" states.
        label = int(record.action == RESPOND)
        decision_samples.append((record.todo_embed, label))
        if label:
            relevant = {
                c.clip.index
                for c in clips
                if any(_majority_overlap(s, c.clip.start_ms, c.clip.end_ms) for s in spans)
            }
            if relevant:
                indicators = np.stack([c.F_hat for c in clips])
                retrieval_samples.append((record.todo_embed, indicators, relevant))
        if record.action == RESPOND:
            # Immediate answer: the builder has no generation latency.
            state.record_answer(t)

    for t, _, event in scenario_events(scenario):
        if event.kind == EV_QUESTION:
            state.insert_question(event.question, t)
        elif event.kind == EV_FRAME:
            for cf in segmenter.push_frame(event.frame):
                on_clip(cf, t)
    tail = segmenter.finalize()
    if tail is not None:
        on_clip(tail, scenario.duration_ms)
    return TrainingSets(decision=decision_samples, retrieval=retrieval_samples)


def build_pooled_sets(scenarios: list[Scenario], seg_cfg: SegmenterConfig) -> TrainingSets:
    pooled = TrainingSets(decision=[], retrieval=[])
    for sc in scenarios:
        sets = build_training_sets(sc, seg_cfg)
        pooled.decision.extend(sets.decision)
        pooled.retrieval.extend(sets.retrieval)
    return pooled


# Harness defaults for the planted corpus: a clip cap that divides the
# 6-frame segments (direction-pure clips), a boundary threshold comfortably
# between within-segment (~0.86) and cross-segment (~0) similarities at
# sigma=0.1, and a sharp retrieval temperature so grounded mass concentrates.
PLANTED_SEGMENTER = dict(
    boundary_threshold=0.55,
    exclusion_window_frames=4,
    min_clip_frames=4,
    max_clip_frames=6,
)
PLANTED_RETRIEVAL_TEMPERATURE = 0.1
PLANTED_SILENT_MARGIN = 1.0
PLANTED_DECISION_LR = 10.0
PLANTED_RETRIEVAL_LR = 1.0


def planted_segmenter_config() -> SegmenterConfig:
    return SegmenterConfig(**PLANTED_SEGMENTER)


def make_planted_corpus(
    count: int,
    seed0: int,
    *,
    dim: int = 16,
    noise_sigma: float = 0.1,
    frame_period_ms: int = 1000,
) -> list[Scenario]:
    """Varied planted scenarios sharing the global direction bank.

    Layout: one-clip relevant segments, the first at index 1 or 2 (bounded raw
    tail at its evaluation), an optional second exactly two segments later so
    spans never merge and every span can be answered before the next begins.
    """
    corpus = []
    for i in range(count):
        seed = seed0 + i
        rng = np.random.default_rng(seed * 7919 + 11)
        n_segments = int(rng.integers(5, 8))
        n_relevant = int(rng.integers(1, 3))
        first = int(rng.integers(1, 3))
        relevant = [first]
        if n_relevant == 2 and first + 2 < n_segments:
            relevant.append(first + 2)
        corpus.append(
            make_planted_scenario(
                seed,
                dim=dim,
                n_segments=n_segments,
                relevant_indices=tuple(relevant),
                noise_sigma=noise_sigma,
                frame_period_ms=frame_period_ms,
                irrelevant_frames=(6,),
                span_grace_ms=3 * frame_period_ms,
            )
        )
    return corpus


def recall_at_1(
    projection: np.ndarray,
    samples: list[tuple[np.ndarray, np.ndarray, set[int]]],
    temperature: float = 1.0,
) -> float:
    """Fraction of samples whose top-scored clip is ground-truth relevant."""
    if not samples:
        return 0.0
    head = RetrievalHead(projection=projection, temperature=temperature)
    hits = 0
    for todo, indicators, relevant in samples:
        p = score_clips(todo, indicators, head)
        hits += int(np.argmax(p)) in relevant
    return hits / len(samples)
