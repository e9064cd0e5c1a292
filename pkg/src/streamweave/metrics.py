"""Streaming metrics over a finished timeline.

Temporal-grounding rule: each ground-truth relevant span is matched by the
earliest non-silent answer whose trigger timestamp lies inside it (a true
positive); answers matching no span are false positives and unmatched spans
are false negatives. Caption quality is a token-set F1 between matched answer
texts and the expected answers planted in the scenario (a declared stand-in
for model-based sentence similarity).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .scenario import Scenario
from . import timeline as tl
from .timeline import Timeline

_TOKEN = re.compile(r"[a-z0-9]+")


def token_f1(a: str, b: str) -> float:
    """Token-set F1 between two strings."""
    ta = set(_TOKEN.findall(a.lower()))
    tb = set(_TOKEN.findall(b.lower()))
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    overlap = len(ta & tb)
    if overlap == 0:
        return 0.0
    precision = overlap / len(ta)
    recall = overlap / len(tb)
    return 2 * precision * recall / (precision + recall)


def _p95(values: list[float]) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = max(1, math.ceil(0.95 * len(ordered)))
    return float(ordered[rank - 1])


def _mean(values: list[float]) -> float:
    return float(sum(values) / len(values)) if values else 0.0


@dataclass
class MetricsReport:
    tvg_f1: float
    precision: float
    recall: float
    caption_token_f1: float
    decision_latency_ms: dict
    reaction_latency_ms: dict
    perception_stall_ms: int
    frames_dropped: int
    tp: int
    fp: int
    fn: int
    n_answers: int
    similarity_kind: str = "token_f1"

    def to_dict(self) -> dict:
        return {
            "tvg_f1": self.tvg_f1,
            "precision": self.precision,
            "recall": self.recall,
            "caption_token_f1": self.caption_token_f1,
            "decision_latency_ms": self.decision_latency_ms,
            "reaction_latency_ms": self.reaction_latency_ms,
            "perception_stall_ms": self.perception_stall_ms,
            "frames_dropped": self.frames_dropped,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "n_answers": self.n_answers,
            "similarity_kind": self.similarity_kind,
        }

    def summary_lines(self) -> list[str]:
        return [
            f"tvg_f1={self.tvg_f1:.4f} precision={self.precision:.4f} recall={self.recall:.4f}"
            f" (tp={self.tp} fp={self.fp} fn={self.fn})",
            f"caption_token_f1={self.caption_token_f1:.4f} ({self.similarity_kind})",
            f"decision_latency_ms mean={self.decision_latency_ms['mean']:.1f}"
            f" p95={self.decision_latency_ms['p95']:.1f}",
            f"reaction_latency_ms mean={self.reaction_latency_ms['mean']:.1f}"
            f" p95={self.reaction_latency_ms['p95']:.1f}",
            f"perception_stall_ms={self.perception_stall_ms} frames_dropped={self.frames_dropped}",
        ]


@dataclass
class _Tally:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    n_answers: int = 0
    caption_scores: list = field(default_factory=list)
    decision_latencies: list = field(default_factory=list)
    reaction_latencies: list = field(default_factory=list)
    stall_ms: int = 0
    dropped: int = 0


def _collect(timeline: Timeline, scenario: Scenario) -> _Tally:
    timeline.check_complete()
    tally = _Tally()

    answers = [e.payload for e in timeline.of_kind(tl.ANSWER_EMITTED)]
    tally.n_answers = len(answers)

    matched = {id(a): False for a in answers}
    for question in scenario.questions:
        q_answers = [a for a in answers if a["question_id"] == question.id]
        for span_start, span_end in question.relevant_spans_ms:
            in_span = [
                a for a in q_answers if span_start <= a["trigger_t_ms"] < span_end
            ]
            if not in_span:
                tally.fn += 1
                continue
            hit = min(in_span, key=lambda a: a["trigger_t_ms"])
            tally.tp += 1
            matched[id(hit)] = True
            tally.decision_latencies.append(float(hit["trigger_t_ms"] - span_start))
            expected = [
                x for x in question.expected_answers if span_start <= x.t_ms < span_end
            ]
            if expected:
                tally.caption_scores.append(token_f1(hit["text"], expected[0].text))
    tally.fp = sum(1 for a in answers if not matched[id(a)])

    starts = {
        (e.payload["question_id"], e.payload["trigger_t_ms"]): e.t_ms
        for e in timeline.of_kind(tl.REACTION_START)
    }
    for e in timeline.of_kind(tl.REACTION_END):
        key = (e.payload["question_id"], e.payload["trigger_t_ms"])
        if key in starts:
            tally.reaction_latencies.append(float(e.t_ms - starts[key]))

    for e in timeline.of_kind(tl.FRAME_ARRIVED):
        tally.stall_ms += max(0, e.t_ms - e.payload.get("nominal_t_ms", e.t_ms))
    tally.dropped = len(timeline.of_kind(tl.FRAME_DROPPED))
    return tally


def _report(tally: _Tally) -> MetricsReport:
    precision = tally.tp / (tally.tp + tally.fp) if (tally.tp + tally.fp) else 0.0
    recall = tally.tp / (tally.tp + tally.fn) if (tally.tp + tally.fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    return MetricsReport(
        tvg_f1=f1,
        precision=precision,
        recall=recall,
        caption_token_f1=_mean(tally.caption_scores),
        decision_latency_ms={
            "mean": _mean(tally.decision_latencies),
            "p95": _p95(tally.decision_latencies),
        },
        reaction_latency_ms={
            "mean": _mean(tally.reaction_latencies),
            "p95": _p95(tally.reaction_latencies),
        },
        perception_stall_ms=tally.stall_ms,
        frames_dropped=tally.dropped,
        tp=tally.tp,
        fp=tally.fp,
        fn=tally.fn,
        n_answers=tally.n_answers,
    )


def compute_metrics(timeline: Timeline, scenario: Scenario) -> MetricsReport:
    return _report(_collect(timeline, scenario))


def pooled_metrics(pairs: list[tuple[Timeline, Scenario]]) -> MetricsReport:
    """Micro-averaged metrics over several runs (counts pooled, samples merged)."""
    total = _Tally()
    for timeline, scenario in pairs:
        t = _collect(timeline, scenario)
        total.tp += t.tp
        total.fp += t.fp
        total.fn += t.fn
        total.n_answers += t.n_answers
        total.caption_scores.extend(t.caption_scores)
        total.decision_latencies.extend(t.decision_latencies)
        total.reaction_latencies.extend(t.reaction_latencies)
        total.stall_ms += t.stall_ms
        total.dropped += t.dropped
    return _report(total)
