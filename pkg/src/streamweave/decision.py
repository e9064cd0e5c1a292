"""Respond/wait decision engine over an interleaved context sequence.

The engine maintains an ordered sequence of pooled memory segments, raw clip
features, the active question, answer markers, and a trailing decision marker.
History compacts in two ways: everything before the question pools into one
memory segment after the first evaluation, and each recorded answer pools the
raw clips it consumed. A pluggable scorer evaluates the trailing marker
position and yields a respond/wait decision; decisions never read anything
produced by answer generation, so generation latency cannot influence them.

Sequence grammar (letters m=memory, q=question, c=clip, a=answer, t=trailing
marker):

    no question     c* t
    question, raw   c* q t
    compacted       m? q (m? a)* c* t

with the answer-marker / trailing-marker elements optional under their
respective ablation flags.
"""

from __future__ import annotations

import json
import re
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .errors import (
    BackendUnavailableError,
    DimensionMismatchError,
    EmptyDatasetError,
    MalformedResponseError,
    MalformedSequenceError,
    NoActiveQuestionError,
    NonConsecutiveClipError,
    NonMonotonicAnswerError,
    QuestionAlreadyActiveError,
)
from .scenario import Question, Scenario
from .segmenter import ClipFeature
from .vectorops import bce_with_grad, logistic, mean_pool

WAIT = "wait"
RESPOND = "respond"


# --- sequence elements ------------------------------------------------------


@dataclass(frozen=True)
class MemorySegment:
    """Pooled summary of a historical span, replacing its raw clip features."""

    span_ms: tuple[int, int]
    vec: np.ndarray


@dataclass(frozen=True)
class ClipFeat:
    feature: ClipFeature


@dataclass(frozen=True)
class QuestionText:
    question: Question


@dataclass(frozen=True)
class AnsMarker:
    t_ms: int


@dataclass(frozen=True)
class TodoMarker:
    pass


SeqElement = MemorySegment | ClipFeat | QuestionText | AnsMarker | TodoMarker

_KIND_LETTER = {
    MemorySegment: "m",
    ClipFeat: "c",
    QuestionText: "q",
    AnsMarker: "a",
    TodoMarker: "t",
}


@dataclass(frozen=True)
class DecisionRecord:
    t_ms: int
    p_respond: float
    action: str
    todo_embed: np.ndarray


# --- decision state ----------------------------------------------------------


class DecisionState:
    """Single-owner sequential state; the pipeline thread drives all mutations."""

    def __init__(self, *, no_ans_token: bool = False, no_todo_token: bool = False) -> None:
        self.no_ans_token = no_ans_token
        self.no_todo_token = no_todo_token
        self.elements: list[SeqElement] = [] if no_todo_token else [TodoMarker()]
        self.question: Question | None = None
        self.q_pos_ms: int | None = None
        self.ans_positions_ms: list[int] = []
        self.compacted = False
        self.stage_a_evaluated = False
        self.last_clip: ClipFeature | None = None
        self._expected_clip_index = 0
        self._undo: tuple[int, bool, bool, list[ClipFeat]] | None = None

    # -- accessors -----------------------------------------------------------

    def raw_clipfeats(self) -> list[ClipFeature]:
        return [e.feature for e in self.elements if isinstance(e, ClipFeat)]

    def memory_segments(self) -> list[MemorySegment]:
        return [e for e in self.elements if isinstance(e, MemorySegment)]

    def ans_markers(self) -> list[AnsMarker]:
        return [e for e in self.elements if isinstance(e, AnsMarker)]

    @property
    def dim(self) -> int | None:
        if self.last_clip is not None:
            return self.last_clip.F.shape[0]
        if self.question is not None:
            return self.question.q_embed.shape[0]
        return None

    def _insert_tail(self, element: SeqElement) -> None:
        if self.no_todo_token:
            self.elements.append(element)
        else:
            self.elements.insert(len(self.elements) - 1, element)

    # -- operations ----------------------------------------------------------

    def ingest_clip(self, cf: ClipFeature) -> None:
        if cf.clip.index != self._expected_clip_index:
            raise NonConsecutiveClipError(
                f"expected clip index {self._expected_clip_index}, got {cf.clip.index}"
            )
        self._expected_clip_index += 1
        self.last_clip = cf
        self._insert_tail(ClipFeat(cf))

    def insert_question(self, question: Question, t_ms: int) -> None:
        if self.question is not None:
            raise QuestionAlreadyActiveError(
                f"question {self.question.id!r} is already active"
            )
        self.question = question
        self.q_pos_ms = t_ms
        self._insert_tail(QuestionText(question))

    def compact_to_memory(self) -> None:
        """Pool every clip before the question into one memory segment."""
        if self.question is None:
            raise NoActiveQuestionError("no active question to compact against")
        if self.compacted:
            raise MalformedSequenceError("history already compacted")
        if not self.stage_a_evaluated:
            raise MalformedSequenceError("compaction requires a first evaluation")
        q_idx = next(
            i for i, e in enumerate(self.elements) if isinstance(e, QuestionText)
        )
        pre = self.elements[:q_idx]
        assert all(isinstance(e, ClipFeat) for e in pre)
        if pre:
            feats = [e.feature for e in pre]
            segment = MemorySegment(
                span_ms=(feats[0].clip.start_ms, feats[-1].clip.end_ms),
                vec=mean_pool([f.F for f in feats]),
            )
            self.elements[:q_idx] = [segment]
        self.compacted = True

    def record_answer(self, t_ms: int) -> None:
        """Pool the raw clips answered at t_ms and append an answer marker.

        Raw clips that end after t_ms (emitted while the answer was being
        generated) stay raw behind the marker.
        """
        if self.question is None:
            raise NoActiveQuestionError("cannot record an answer without a question")
        if not self.compacted:
            raise MalformedSequenceError("record_answer requires compacted history")
        if t_ms < self.q_pos_ms or (self.ans_positions_ms and t_ms <= self.ans_positions_ms[-1]):
            raise NonMonotonicAnswerError(
                f"answer position {t_ms} must follow question and previous answers"
            )
        tail_start = next(
            (i for i, e in enumerate(self.elements) if isinstance(e, ClipFeat)),
            len(self.elements) - (0 if self.no_todo_token else 1),
        )
        pooled: list[ClipFeat] = []
        i = tail_start
        while i < len(self.elements):
            e = self.elements[i]
            if isinstance(e, ClipFeat) and e.feature.clip.end_ms <= t_ms:
                pooled.append(e)
                i += 1
            else:
                break
        insert: list[SeqElement] = []
        if pooled:
            feats = [e.feature for e in pooled]
            insert.append(
                MemorySegment(
                    span_ms=(feats[0].clip.start_ms, feats[-1].clip.end_ms),
                    vec=mean_pool([f.F for f in feats]),
                )
            )
        marker_added = not self.no_ans_token
        if marker_added:
            insert.append(AnsMarker(t_ms))
        self.elements[tail_start : tail_start + len(pooled)] = insert
        self.ans_positions_ms.append(t_ms)
        self._undo = (tail_start, bool(pooled), marker_added, pooled)

    def undo_last_answer(self) -> None:
        """Void the most recent answer record (a silent generation outcome)."""
        if self._undo is None:
            raise MalformedSequenceError("no answer record to undo")
        pos, had_segment, had_marker, pooled = self._undo
        removed = (1 if had_segment else 0) + (1 if had_marker else 0)
        self.elements[pos : pos + removed] = pooled
        self.ans_positions_ms.pop()
        self._undo = None

    def evaluate_todo(self, scorer, now_ms: int) -> DecisionRecord:
        """Score the trailing marker position and decide respond/wait."""
        if not self.no_todo_token and not (
            self.elements and isinstance(self.elements[-1], TodoMarker)
        ):
            raise MalformedSequenceError("sequence must end with the decision marker")
        record = scorer.score(self, now_ms)
        if self.question is not None and not self.compacted:
            self.stage_a_evaluated = True
        return record


# --- embeddings and validation ----------------------------------------------


def aggregate_todo_embed(state: DecisionState) -> np.ndarray:
    """Decision embedding: mean of question embed, raw-clip mean, memory mean."""
    components: list[np.ndarray] = []
    if state.question is not None:
        components.append(state.question.q_embed)
    raw = state.raw_clipfeats()
    if raw:
        components.append(mean_pool([f.F for f in raw]))
    mems = state.memory_segments()
    if mems:
        components.append(mean_pool([m.vec for m in mems]))
    if not components:
        raise MalformedSequenceError("nothing to score: sequence has no content")
    return mean_pool(components)


def todo_input_embedding(state: DecisionState) -> np.ndarray:
    if not state.no_todo_token:
        return aggregate_todo_embed(state)
    # Ablated trailing marker: score the last content element instead.
    for e in reversed(state.elements):
        if isinstance(e, ClipFeat):
            return e.feature.F
        if isinstance(e, MemorySegment):
            return e.vec
        if isinstance(e, QuestionText):
            return e.question.q_embed
    raise MalformedSequenceError("nothing to score: sequence has no content")


_GRAMMARS = {
    # (question present, compacted, no_ans_token)
    "none": r"^c*t?$",
    # Clips that arrive between question insertion and the first evaluation
    # append to the raw tail; compaction later pools the pre-question prefix.
    "raw": r"^c*qc*t?$",
    "compacted": r"^m?q(m?a)*c*t?$",
    "compacted_no_ans": r"^m?qm*c*t?$",
}


def validate_sequence(state: DecisionState) -> None:
    """Assert the stage grammar, marker counts, and span tiling; raises on breach."""
    letters = "".join(_KIND_LETTER[type(e)] for e in state.elements)
    if state.question is None:
        pattern = _GRAMMARS["none"]
    elif not state.compacted:
        pattern = _GRAMMARS["raw"]
    elif state.no_ans_token:
        pattern = _GRAMMARS["compacted_no_ans"]
    else:
        pattern = _GRAMMARS["compacted"]
    if not re.match(pattern, letters):
        raise MalformedSequenceError(f"sequence {letters!r} does not match {pattern}")

    todo_count = letters.count("t")
    if state.no_todo_token:
        if todo_count:
            raise MalformedSequenceError("trailing marker present despite ablation")
    elif todo_count != 1 or not letters.endswith("t"):
        raise MalformedSequenceError("exactly one trailing decision marker required")

    expected_ans = 0 if state.no_ans_token else len(state.ans_positions_ms)
    if letters.count("a") != expected_ans:
        raise MalformedSequenceError(
            f"expected {expected_ans} answer markers, found {letters.count('a')}"
        )

    # Span tiling: memory spans plus raw clip spans cover the ingested range
    # contiguously, in order, with no overlap.
    spans: list[tuple[int, int]] = []
    for e in state.elements:
        if isinstance(e, MemorySegment):
            spans.append(e.span_ms)
        elif isinstance(e, ClipFeat):
            spans.append((e.feature.clip.start_ms, e.feature.clip.end_ms))
    for (s0, e0), (s1, e1) in zip(spans, spans[1:]):
        if s1 != e0:
            raise MalformedSequenceError(f"span gap/overlap: [{s0},{e0}) then [{s1},{e1})")
    if spans and state.last_clip is not None:
        if spans[-1][1] != state.last_clip.clip.end_ms:
            raise MalformedSequenceError("covered spans do not reach the latest clip end")


def serialize_sequence(state: DecisionState) -> dict:
    """Wire form of the sequence for an external scorer service."""
    elements = []
    for e in state.elements:
        if isinstance(e, MemorySegment):
            elements.append(
                {"kind": "mem", "vec": [float(x) for x in e.vec], "span_ms": list(e.span_ms)}
            )
        elif isinstance(e, ClipFeat):
            c = e.feature
            elements.append(
                {
                    "kind": "clip",
                    "vec": [float(x) for x in c.F],
                    "span_ms": [c.clip.start_ms, c.clip.end_ms],
                }
            )
        elif isinstance(e, QuestionText):
            elements.append(
                {
                    "kind": "question",
                    "vec": [float(x) for x in e.question.q_embed],
                    "span_ms": None,
                }
            )
        elif isinstance(e, AnsMarker):
            elements.append({"kind": "ans", "vec": None, "span_ms": None})
        else:
            elements.append({"kind": "todo", "vec": None, "span_ms": None})
    return {"elements": elements, "dim": state.dim or 0}


# --- scorers -----------------------------------------------------------------


@dataclass
class OracleScorer:
    """Responds exactly when the newest clip overlaps an unanswered relevant span.

    Answered-ness is read from the answer markers in the sequence, so ablating
    them makes the oracle re-trigger on already-answered spans.
    """

    relevant_spans: dict[str, tuple[tuple[int, int], ...]]
    threshold: float = 0.5
    kind: str = "oracle"

    @classmethod
    def from_scenario(cls, scenario: Scenario, threshold: float = 0.5) -> "OracleScorer":
        return cls(
            relevant_spans={q.id: q.relevant_spans_ms for q in scenario.questions},
            threshold=threshold,
        )

    def score(self, state: DecisionState, now_ms: int) -> DecisionRecord:
        embed = todo_input_embedding(state)
        respond = False
        clip = state.last_clip
        if state.question is not None and clip is not None:
            markers = state.ans_markers()
            for s, e in self.relevant_spans.get(state.question.id, ()):
                overlaps = clip.clip.start_ms < e and s < clip.clip.end_ms
                answered = any(s <= m.t_ms < e for m in markers)
                if overlaps and not answered:
                    respond = True
                    break
        p = 1.0 if respond else 0.0
        return DecisionRecord(now_ms, p, RESPOND if respond else WAIT, embed)


@dataclass
class HeadScorer:
    """Logistic head over the decision embedding; `heuristic` and `learned`
    backends share this implementation and differ only in parameter provenance."""

    weights: np.ndarray
    bias: float = 0.0
    threshold: float = 0.5
    kind: str = "learned"

    @classmethod
    def zero(cls, dim: int, threshold: float = 0.5, kind: str = "heuristic") -> "HeadScorer":
        return cls(weights=np.zeros(dim), bias=0.0, threshold=threshold, kind=kind)

    def score(self, state: DecisionState, now_ms: int) -> DecisionRecord:
        x = todo_input_embedding(state)
        if x.shape != self.weights.shape:
            raise DimensionMismatchError(
                f"head dim {self.weights.shape[0]} vs embedding dim {x.shape[0]}"
            )
        p = logistic(float(self.weights @ x) + self.bias)
        # Tie at the threshold counts as respond, for reproducibility.
        action = RESPOND if p >= self.threshold else WAIT
        return DecisionRecord(now_ms, p, action, x)


@dataclass
class ExternalScorer:
    """Forwards the serialized sequence to an HTTP scorer service."""

    endpoint: str
    timeout_ms: int = 1000
    threshold: float = 0.5
    kind: str = "external"

    def score(self, state: DecisionState, now_ms: int) -> DecisionRecord:
        body = json.dumps(serialize_sequence(state)).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint.rstrip("/") + "/score",
            data=body,
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_ms / 1000.0) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise BackendUnavailableError(f"scorer at {self.endpoint}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise MalformedResponseError(f"scorer returned invalid JSON: {exc}") from exc
        try:
            p = float(payload["p_respond"])
            embed = np.asarray(payload["todo_embed"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"scorer response missing fields: {exc}") from exc
        action = RESPOND if p >= self.threshold else WAIT
        return DecisionRecord(now_ms, p, action, embed)


# --- trainer ------------------------------------------------------------------


def _sample_embedding(x) -> np.ndarray:
    if isinstance(x, DecisionState):
        return todo_input_embedding(x)
    return np.asarray(x, dtype=np.float64)


def train_decision_head(
    dataset: list[tuple],
    epochs: int,
    lr: float,
    *,
    init_weights: np.ndarray | None = None,
    init_bias: float = 0.0,
) -> tuple[np.ndarray, float, list[float]]:
    """Full-batch gradient descent on mean BCE of the logistic head.

    Dataset entries are (sequence snapshot | embedding, label). Returns the
    weights, bias, and the per-epoch loss curve (loss measured before each
    update, so epochs=0 returns the initialization untouched).
    """
    if not dataset:
        raise EmptyDatasetError("decision trainer needs at least one sample")
    xs = np.stack([_sample_embedding(x) for x, _ in dataset])
    ys = np.array([int(y) for _, y in dataset])
    if not set(np.unique(ys)) <= {0, 1}:
        raise ValueError("labels must be 0 or 1")
    dim = xs.shape[1]
    w = np.zeros(dim) if init_weights is None else np.asarray(init_weights, dtype=np.float64).copy()
    b = float(init_bias)
    losses: list[float] = []
    for _ in range(epochs):
        grad_w = np.zeros(dim)
        grad_b = 0.0
        total = 0.0
        for x, y in zip(xs, ys):
            logit = float(w @ x) + b
            p = logistic(logit)
            res = bce_with_grad(p, int(y))
            total += res.loss
            # Chain rule: dL/dlogit = dL/dp * p(1-p).
            dlogit = float(res.grad[0]) * p * (1.0 - p)
            grad_w += dlogit * x
            grad_b += dlogit
        n = len(dataset)
        losses.append(total / n)
        w -= lr * grad_w / n
        b -= lr * grad_b / n
    return w, b, losses
