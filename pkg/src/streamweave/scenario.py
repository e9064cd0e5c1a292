"""Scenario ingestion and synthesis.

A scenario is the replayable input of one run: a frame-embedding stream
(explicit or generated), questions with insertion timestamps, ground-truth
relevant spans, and optional expected answers. Files use a fixed JSON schema;
generator blocks are expanded lazily and deterministically from their seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError, ParseError, SchemaError, ValidationError
from .segmenter import FrameEmbedding
from .vectorops import l2_normalize

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExpectedAnswer:
    t_ms: int
    text: str


@dataclass(frozen=True)
class Question:
    id: str
    t_ms: int
    text: str
    q_embed: np.ndarray
    relevant_spans_ms: tuple[tuple[int, int], ...] = ()
    expected_answers: tuple[ExpectedAnswer, ...] = ()


@dataclass(frozen=True)
class GeneratorSegment:
    length_frames: int
    direction_seed: int
    noise_sigma: float
    relevant: bool = False


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int
    segments: tuple[GeneratorSegment, ...]


@dataclass
class Scenario:
    version: int
    frame_period_ms: int
    dim: int
    questions: list[Question]
    generator: GeneratorSpec | None = None
    _frames: list[FrameEmbedding] | None = field(default=None, repr=False)

    @property
    def frames(self) -> list[FrameEmbedding]:
        """Frame list; generator scenarios expand on first access."""
        if self._frames is None:
            if self.generator is None:
                raise ValidationError("scenario has neither frames nor generator")
            self._frames = synthesize_frames(
                self.generator, self.dim, self.frame_period_ms, self.generator.seed
            )
        return self._frames

    @property
    def frame_count(self) -> int:
        if self._frames is not None:
            return len(self._frames)
        return sum(s.length_frames for s in self.generator.segments)

    @property
    def duration_ms(self) -> int:
        """End of the stream: last frame timestamp plus one period."""
        if self._frames is not None:
            return self._frames[-1].t_ms + self.frame_period_ms
        return self.frame_count * self.frame_period_ms


def direction_from_seed(direction_seed: int, dim: int) -> np.ndarray:
    """The stable unit direction a generator segment draws its frames around."""
    rng = np.random.default_rng(direction_seed)
    return l2_normalize(rng.standard_normal(dim))


def synthesize_frames(
    spec: GeneratorSpec, dim: int, frame_period_ms: int, seed: int
) -> list[FrameEmbedding]:
    """Expand a generator spec into unit-norm frames; deterministic in (spec, seed)."""
    if not spec.segments:
        raise InvalidSpecError("generator needs at least one segment")
    for i, seg in enumerate(spec.segments):
        if seg.length_frames < 1:
            raise InvalidSpecError(f"segment {i} length_frames must be >= 1")
        if seg.noise_sigma < 0:
            raise InvalidSpecError(f"segment {i} noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    frames: list[FrameEmbedding] = []
    t = 0
    for seg in spec.segments:
        direction = direction_from_seed(seg.direction_seed, dim)
        for _ in range(seg.length_frames):
            vec = direction
            if seg.noise_sigma > 0:
                vec = vec + seg.noise_sigma * rng.standard_normal(dim)
            frames.append(FrameEmbedding(t_ms=t, vec=l2_normalize(vec)))
            t += frame_period_ms
    return frames


def relevant_spans_of_spec(spec: GeneratorSpec, frame_period_ms: int) -> tuple[tuple[int, int], ...]:
    """Spans of the segments flagged relevant; adjacent relevant segments merge."""
    spans: list[list[int]] = []
    t = 0
    for seg in spec.segments:
        end = t + seg.length_frames * frame_period_ms
        if seg.relevant:
            if spans and spans[-1][1] == t:
                spans[-1][1] = end
            else:
                spans.append([t, end])
        t = end
    return tuple((s, e) for s, e in spans)


def synthesize_scenario(
    spec: GeneratorSpec,
    seed: int,
    *,
    dim: int,
    frame_period_ms: int = 1000,
    questions: list[Question] | None = None,
) -> Scenario:
    """Build a full scenario from a generator spec; deterministic for fixed seed."""
    frames = synthesize_frames(spec, dim, frame_period_ms, seed)
    sc = Scenario(
        version=SCHEMA_VERSION,
        frame_period_ms=frame_period_ms,
        dim=dim,
        questions=list(questions or []),
        generator=spec,
        _frames=frames,
    )
    _validate(sc)
    return sc


def pseudo_embedding(text: str, dim: int) -> np.ndarray:
    """Deterministic unit vector from a stable hash of the text.

    Stand-in for a real text encoder so live sessions can accept typed
    questions without one.
    """
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "big")
    rng = np.random.default_rng(seed)
    return l2_normalize(rng.standard_normal(dim))


# --- JSON schema ----------------------------------------------------------


def _require(obj: dict, key: str, path: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"missing field: {path}.{key}" if path else f"missing field: {key}")
    return obj[key]


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{path} must be an integer")
    return value


def _parse_question(obj: dict, idx: int, dim: int) -> Question:
    path = f"questions[{idx}]"
    qid = _require(obj, "id", path)
    t_ms = _as_int(_require(obj, "t_ms", path), f"{path}.t_ms")
    text = _require(obj, "text", path)
    embedding = _require(obj, "embedding", path)
    if len(embedding) != dim:
        raise ValidationError(f"{path}.embedding has dim {len(embedding)}, scenario dim is {dim}")
    try:
        q_embed = l2_normalize(embedding)
    except Exception as exc:
        raise ValidationError(f"{path}.embedding: {exc}") from exc
    spans_raw = obj.get("relevant_spans_ms", [])
    spans: list[tuple[int, int]] = []
    for j, span in enumerate(spans_raw):
        if len(span) != 2:
            raise SchemaError(f"{path}.relevant_spans_ms[{j}] must be [start, end]")
        s, e = _as_int(span[0], f"{path}.relevant_spans_ms[{j}][0]"), _as_int(
            span[1], f"{path}.relevant_spans_ms[{j}][1]"
        )
        if e <= s or s < 0:
            raise ValidationError(f"{path}.relevant_spans_ms[{j}] is not a valid [start, end)")
        spans.append((s, e))
    for (s0, e0), (s1, _) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ValidationError(f"{path}.relevant_spans_ms must be sorted and non-overlapping")
    expected = tuple(
        ExpectedAnswer(
            t_ms=_as_int(_require(a, "t_ms", f"{path}.expected_answers[{j}]"), "t_ms"),
            text=str(_require(a, "text", f"{path}.expected_answers[{j}]")),
        )
        for j, a in enumerate(obj.get("expected_answers", []))
    )
    return Question(
        id=str(qid),
        t_ms=t_ms,
        text=str(text),
        q_embed=q_embed,
        relevant_spans_ms=tuple(spans),
        expected_answers=expected,
    )


def scenario_from_dict(data: dict) -> Scenario:
    version = _as_int(_require(data, "version", ""), "version")
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported scenario version {version}")
    frame_period_ms = _as_int(_require(data, "frame_period_ms", ""), "frame_period_ms")
    if frame_period_ms <= 0:
        raise ValidationError("frame_period_ms must be > 0")
    dim = _as_int(_require(data, "dim", ""), "dim")
    if dim < 2:
        raise ValidationError("dim must be >= 2")

    has_frames = "frames" in data
    has_generator = "generator" in data
    if has_frames == has_generator:
        raise SchemaError("scenario must have exactly one of 'frames' or 'generator'")

    generator = None
    frames = None
    if has_generator:
        gen = data["generator"]
        seed = _as_int(_require(gen, "seed", "generator"), "generator.seed")
        segs_raw = _require(gen, "segments", "generator")
        segments = []
        for i, seg in enumerate(segs_raw):
            p = f"generator.segments[{i}]"
            segments.append(
                GeneratorSegment(
                    length_frames=_as_int(_require(seg, "length_frames", p), f"{p}.length_frames"),
                    direction_seed=_as_int(_require(seg, "direction_seed", p), f"{p}.direction_seed"),
                    noise_sigma=float(_require(seg, "noise_sigma", p)),
                    relevant=bool(seg.get("relevant", False)),
                )
            )
        generator = GeneratorSpec(seed=seed, segments=tuple(segments))
        if not segments:
            raise ValidationError("generator.segments must be nonempty")
        for i, seg in enumerate(segments):
            if seg.length_frames < 1:
                raise ValidationError(f"generator.segments[{i}].length_frames must be >= 1")
            if seg.noise_sigma < 0:
                raise ValidationError(f"generator.segments[{i}].noise_sigma must be >= 0")
    else:
        frames_raw = data["frames"]
        if not frames_raw:
            raise ValidationError("frames must be nonempty")
        frames = []
        for i, fr in enumerate(frames_raw):
            p = f"frames[{i}]"
            t_ms = _as_int(_require(fr, "t_ms", p), f"{p}.t_ms")
            embedding = _require(fr, "embedding", p)
            if len(embedding) != dim:
                raise ValidationError(f"{p}.embedding has dim {len(embedding)}, scenario dim is {dim}")
            try:
                vec = l2_normalize(embedding)
            except Exception as exc:
                raise ValidationError(f"{p}.embedding: {exc}") from exc
            frames.append(FrameEmbedding(t_ms=t_ms, vec=vec))

    questions = [
        _parse_question(q, i, dim) for i, q in enumerate(_require(data, "questions", ""))
    ]
    sc = Scenario(
        version=version,
        frame_period_ms=frame_period_ms,
        dim=dim,
        questions=questions,
        generator=generator,
        _frames=frames,
    )
    _validate(sc)
    return sc


def _validate(sc: Scenario) -> None:
    if sc._frames is not None:
        for prev, cur in zip(sc._frames, sc._frames[1:]):
            if cur.t_ms <= prev.t_ms:
                raise ValidationError(
                    f"frame timestamps must strictly increase ({prev.t_ms} then {cur.t_ms})"
                )
    duration = sc.duration_ms
    for q in sc.questions:
        if not (0 <= q.t_ms < duration):
            raise ValidationError(
                f"question {q.id!r} at t={q.t_ms} is outside the stream [0, {duration})"
            )
        if q.q_embed.shape[0] != sc.dim:
            raise ValidationError(f"question {q.id!r} embedding dim mismatch")


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise ParseError(f"scenario not found: {path}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return scenario_from_dict(data)


def scenario_to_dict(sc: Scenario) -> dict:
    data: dict = {
        "version": sc.version,
        "frame_period_ms": sc.frame_period_ms,
        "dim": sc.dim,
    }
    if sc.generator is not None:
        data["generator"] = {
            "seed": sc.generator.seed,
            "segments": [
                {
                    "length_frames": s.length_frames,
                    "direction_seed": s.direction_seed,
                    "noise_sigma": s.noise_sigma,
                    "relevant": s.relevant,
                }
                for s in sc.generator.segments
            ],
        }
    else:
        data["frames"] = [
            {"t_ms": f.t_ms, "embedding": [float(x) for x in f.vec]} for f in sc.frames
        ]
    data["questions"] = [
        {
            "id": q.id,
            "t_ms": q.t_ms,
            "text": q.text,
            "embedding": [float(x) for x in q.q_embed],
            "relevant_spans_ms": [[s, e] for s, e in q.relevant_spans_ms],
            "expected_answers": [{"t_ms": a.t_ms, "text": a.text} for a in q.expected_answers],
        }
        for q in sc.questions
    ]
    return data


def save_scenario(sc: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), sort_keys=True, indent=1) + "\n")


# --- Planted-direction factory (test and training corpus) ------------------

# All planted scenarios share one global orthonormal direction bank: row 0 is
# the "relevant" direction every planted question asks about, the remaining
# rows are a fixed distractor vocabulary irrelevant segments draw from. A
# fixed vocabulary is what makes the concept learnable by a single linear
# head across scenarios (the desk-scale stand-in for a learned encoder's
# feature space); held-out scenarios still differ in layout and noise.
PLANTED_DIRECTION_SEED = 424242


def planted_bank(dim: int) -> np.ndarray:
    rng = np.random.default_rng(PLANTED_DIRECTION_SEED)
    m = rng.standard_normal((dim, dim))
    q, _ = np.linalg.qr(m.T)
    basis = q.T
    signs = np.sign(basis[:, 0])
    signs[signs == 0] = 1.0
    return basis * signs[:, None]


def planted_direction(dim: int) -> np.ndarray:
    return planted_bank(dim)[0]


def make_planted_scenario(
    seed: int,
    *,
    dim: int = 16,
    relevant_frames: int = 6,
    irrelevant_frames: tuple[int, ...] = (6, 12),
    n_segments: int = 5,
    relevant_indices: tuple[int, ...] = (2,),
    noise_sigma: float = 0.1,
    frame_period_ms: int = 1000,
    question_t_ms: int = 0,
    span_grace_ms: int = 3000,
) -> Scenario:
    """Multi-segment scenario where relevant segments carry the planted direction.

    The question embedding equals the planted direction. Irrelevant segments
    draw from the distractor rows of the shared bank; segment lengths are
    multiples of 6 frames so a 6-frame clip cap yields direction-pure clips,
    and relevant segments are exactly one such clip long. Ground-truth spans
    extend span_grace_ms past the relevant frames: a response triggered the
    instant the relevant clip completes still falls inside its span.
    """
    if max(relevant_indices, default=-1) >= n_segments:
        raise InvalidSpecError("relevant_indices outside segment range")
    if any(b - a < 2 for a, b in zip(relevant_indices, relevant_indices[1:])):
        raise InvalidSpecError("relevant segments must be at least two apart (graced spans overlap)")
    if not (0 <= span_grace_ms < relevant_frames * frame_period_ms):
        raise InvalidSpecError("span_grace_ms must be shorter than the relevant segment")
    rng = np.random.default_rng(seed)
    bank = planted_bank(dim)
    u = bank[0]
    n_distractors = bank.shape[0] - 1

    frames: list[FrameEmbedding] = []
    spans: list[list[int]] = []
    t = 0
    for i in range(n_segments):
        if i in relevant_indices:
            length = relevant_frames
            direction = u
        else:
            length = int(irrelevant_frames[int(rng.integers(0, len(irrelevant_frames)))])
            direction = bank[1 + int(rng.integers(0, n_distractors))]
        start = t
        for _ in range(length):
            vec = l2_normalize(direction + noise_sigma * rng.standard_normal(dim))
            frames.append(FrameEmbedding(t_ms=t, vec=vec))
            t += frame_period_ms
        if i in relevant_indices:
            spans.append([start, t + span_grace_ms])

    question = Question(
        id=f"q{seed}",
        t_ms=question_t_ms,
        text="report when the planted pattern appears",
        q_embed=u,
        relevant_spans_ms=tuple((s, e) for s, e in spans),
        expected_answers=tuple(
            ExpectedAnswer(t_ms=s, text=f"planted pattern appears in span {j}")
            for j, (s, _) in enumerate(spans)
        ),
    )
    sc = Scenario(
        version=SCHEMA_VERSION,
        frame_period_ms=frame_period_ms,
        dim=dim,
        questions=[question],
        _frames=frames,
    )
    _validate(sc)
    return sc


def make_two_scene_scenario(
    seed: int,
    *,
    dim: int = 16,
    noise_sigma: float = 0.1,
    frame_period_ms: int = 1000,
) -> Scenario:
    """Two-scene stream with a short relevant span aligned to the scene change.

    The relevant span is shorter than a 16-frame uniform clip, so uniform
    segmentation straddles it while scene-based segmentation cuts at its start.
    """
    rng = np.random.default_rng(seed)
    bank = planted_bank(dim)
    u = bank[0]
    pre = int(rng.integers(19, 28))  # not a multiple of 16
    relevant = int(rng.integers(6, 9))
    post = int(rng.integers(16, 24))

    frames: list[FrameEmbedding] = []
    t = 0
    for direction, length in ((bank[1], pre), (u, relevant), (bank[2], post)):
        for _ in range(length):
            vec = l2_normalize(direction + noise_sigma * rng.standard_normal(dim))
            frames.append(FrameEmbedding(t_ms=t, vec=vec))
            t += frame_period_ms
    span = (pre * frame_period_ms, (pre + relevant) * frame_period_ms)
    question = Question(
        id=f"q{seed}",
        t_ms=0,
        text="report when the planted pattern appears",
        q_embed=u,
        relevant_spans_ms=(span,),
        expected_answers=(ExpectedAnswer(t_ms=span[0], text="planted pattern appears"),),
    )
    sc = Scenario(
        version=SCHEMA_VERSION,
        frame_period_ms=frame_period_ms,
        dim=dim,
        questions=[question],
        _frames=frames,
    )
    _validate(sc)
    return sc
