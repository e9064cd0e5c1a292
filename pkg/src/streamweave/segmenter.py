"""Online scene-boundary detection over an embedding stream.

Cuts the incoming frame stream into non-uniform clips wherever
consecutive-frame cosine similarity drops below a threshold, with an
exclusion window that prevents over-cutting, plus a uniform fixed-length
baseline mode. Each emitted clip carries a pooled feature vector and a
unit-norm indicator used downstream for decisions and retrieval.

The streaming state machine (`StreamSegmenter`) and the batch scan
(`segment_offline`) are written independently and must produce identical
output; tests enforce the equivalence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, NonMonotonicTimestampError
from .vectorops import compress_adjacent, cosine_sim, l2_normalize, mean_pool

SCENE = "scene"
UNIFORM = "uniform"

# Why a clip closes.
CAUSE_BOUNDARY = "boundary"
CAUSE_MAX_LEN = "max_len"
CAUSE_UNIFORM = "uniform"
CAUSE_FINALIZE = "finalize"

DEFAULT_FRAME_PERIOD_MS = 1000


@dataclass(frozen=True)
class FrameEmbedding:
    """One sampled frame: timestamp plus a unit-norm feature vector."""

    t_ms: int
    vec: np.ndarray


@dataclass(frozen=True)
class Clip:
    """A half-open [start_ms, end_ms) segment of the stream."""

    index: int
    start_ms: int
    end_ms: int
    frame_count: int


@dataclass(frozen=True)
class ClipFeature:
    """A clip with its pooled feature F and unit-norm indicator F_hat."""

    clip: Clip
    F: np.ndarray
    F_hat: np.ndarray
    boundary_sim: float | None  # similarity that cut this clip; None unless cause=="boundary"
    cause: str


@dataclass
class SegmenterConfig:
    mode: str = SCENE
    boundary_threshold: float = 0.85
    exclusion_window_frames: int = 4
    min_clip_frames: int = 4
    max_clip_frames: int = 64
    uniform_clip_frames: int = 16

    def validate(self) -> None:
        if self.mode not in (SCENE, UNIFORM):
            raise InvalidConfigError(f"unknown segmenter mode {self.mode!r}")
        if not (0.0 < self.boundary_threshold < 1.0):
            raise InvalidConfigError("boundary_threshold must be in (0, 1)")
        if self.exclusion_window_frames < 1:
            raise InvalidConfigError("exclusion_window_frames must be >= 1")
        if self.min_clip_frames < 1:
            raise InvalidConfigError("min_clip_frames must be >= 1")
        if self.min_clip_frames > self.max_clip_frames:
            raise InvalidConfigError("min_clip_frames must not exceed max_clip_frames")
        if self.uniform_clip_frames < 1:
            raise InvalidConfigError("uniform_clip_frames must be >= 1")


def _clip_feature(
    index: int,
    frames: list[FrameEmbedding],
    start_ms: int,
    end_ms: int,
    cause: str,
    boundary_sim: float | None,
) -> ClipFeature:
    # Compress adjacent frames once, then pool into the clip feature.
    pooled = mean_pool(compress_adjacent([f.vec for f in frames]))
    return ClipFeature(
        clip=Clip(index=index, start_ms=start_ms, end_ms=end_ms, frame_count=len(frames)),
        F=pooled,
        F_hat=l2_normalize(pooled),
        boundary_sim=boundary_sim,
        cause=cause,
    )


@dataclass
class StreamSegmenter:
    """Single-owner sequential segmenter state; push frames in timestamp order.

    Clips are emitted when their end becomes known: a scene boundary before
    frame k closes the open clip at k's timestamp, a clip that has reached its
    length cap closes when the next frame arrives, and `finalize` flushes the
    remainder using the frame period to place the final clip end.
    """

    config: SegmenterConfig
    frame_period_ms: int = DEFAULT_FRAME_PERIOD_MS
    _buffer: list[FrameEmbedding] = field(default_factory=list)
    _clip_start_ms: int | None = None
    _last_t_ms: int | None = None
    _prev_vec: np.ndarray | None = None
    _frame_index: int = 0
    _last_boundary_frame: int | None = None
    _next_clip_index: int = 0
    _pending_full: bool = False
    _last_sim: float | None = None

    def __post_init__(self) -> None:
        self.config.validate()

    @property
    def last_similarity(self) -> float | None:
        """Cosine similarity between the two most recently accepted frames."""
        return self._last_sim

    def _length_cap(self) -> int:
        if self.config.mode == UNIFORM:
            return self.config.uniform_clip_frames
        return self.config.max_clip_frames

    def _close(self, end_ms: int, cause: str, sim: float | None) -> ClipFeature:
        cf = _clip_feature(
            self._next_clip_index, self._buffer, self._clip_start_ms, end_ms, cause, sim
        )
        self._next_clip_index += 1
        self._buffer = []
        self._clip_start_ms = None
        self._pending_full = False
        return cf

    def push_frame(self, frame: FrameEmbedding) -> list[ClipFeature]:
        """Accept the next frame; returns the clip it closed, if any."""
        if self._last_t_ms is not None and frame.t_ms <= self._last_t_ms:
            raise NonMonotonicTimestampError(
                f"frame at t={frame.t_ms} not after previous t={self._last_t_ms}"
            )
        sim = cosine_sim(self._prev_vec, frame.vec) if self._prev_vec is not None else None

        emitted: list[ClipFeature] = []
        if self._pending_full:
            cause = CAUSE_UNIFORM if self.config.mode == UNIFORM else CAUSE_MAX_LEN
            emitted.append(self._close(frame.t_ms, cause, None))
        elif (
            self.config.mode == SCENE
            and sim is not None
            and self._buffer
            and sim < self.config.boundary_threshold
            and len(self._buffer) >= self.config.min_clip_frames
            and (
                self._last_boundary_frame is None
                or self._frame_index - self._last_boundary_frame
                >= self.config.exclusion_window_frames
            )
        ):
            emitted.append(self._close(frame.t_ms, CAUSE_BOUNDARY, sim))
            self._last_boundary_frame = self._frame_index

        if not self._buffer:
            self._clip_start_ms = frame.t_ms
        self._buffer.append(frame)
        if len(self._buffer) >= self._length_cap():
            self._pending_full = True

        self._prev_vec = frame.vec
        self._last_t_ms = frame.t_ms
        self._last_sim = sim
        self._frame_index += 1
        return emitted

    def finalize(self) -> ClipFeature | None:
        """Flush pending frames as a final clip (may be shorter than min_clip_frames)."""
        if not self._buffer:
            return None
        end_ms = self._last_t_ms + self.frame_period_ms
        return self._close(end_ms, CAUSE_FINALIZE, None)


def segment_offline(
    frames: list[FrameEmbedding],
    config: SegmenterConfig,
    frame_period_ms: int = DEFAULT_FRAME_PERIOD_MS,
) -> list[ClipFeature]:
    """Batch segmentation over a full frame list; reference for the streaming path.

    Computes the consecutive-similarity series up front and scans it once,
    applying the same boundary/length-cap/finalize rules as `StreamSegmenter`.
    """
    config.validate()
    n = len(frames)
    if n == 0:
        return []
    for prev, cur in zip(frames, frames[1:]):
        if cur.t_ms <= prev.t_ms:
            raise NonMonotonicTimestampError(
                f"frame at t={cur.t_ms} not after previous t={prev.t_ms}"
            )

    # Same pairwise arithmetic as the streaming path so emitted similarity
    # values compare bitwise-equal; only the scan logic below is independent.
    sims = [cosine_sim(frames[i - 1].vec, frames[i].vec) for i in range(1, n)]

    cap = config.uniform_clip_frames if config.mode == UNIFORM else config.max_clip_frames
    cap_cause = CAUSE_UNIFORM if config.mode == UNIFORM else CAUSE_MAX_LEN

    # cuts[i] = (cause, sim): the open clip closes right before frame i.
    cuts: dict[int, tuple[str, float | None]] = {}
    start = 0
    last_boundary: int | None = None
    for i in range(1, n):
        buffered = i - start
        if buffered >= cap:
            cuts[i] = (cap_cause, None)
            start = i
        elif (
            config.mode == SCENE
            and sims[i - 1] < config.boundary_threshold
            and buffered >= config.min_clip_frames
            and (last_boundary is None or i - last_boundary >= config.exclusion_window_frames)
        ):
            cuts[i] = (CAUSE_BOUNDARY, sims[i - 1])
            start = i
            last_boundary = i

    out: list[ClipFeature] = []
    clip_start = 0
    for i in sorted(cuts):
        cause, sim = cuts[i]
        out.append(
            _clip_feature(
                len(out), frames[clip_start:i], frames[clip_start].t_ms, frames[i].t_ms, cause, sim
            )
        )
        clip_start = i
    out.append(
        _clip_feature(
            len(out),
            frames[clip_start:],
            frames[clip_start].t_ms,
            frames[-1].t_ms + frame_period_ms,
            CAUSE_FINALIZE,
            None,
        )
    )
    return out
