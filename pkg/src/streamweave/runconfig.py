"""Run configuration: one JSON file describes a full pipeline setup."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError, ParseError
from .reaction import ExternalBackend, LatencyModel, MockBackend
from .retrieval import RetrievalHead, Threshold, TopK
from .segmenter import SegmenterConfig

ASYNC = "async"
SERIAL = "serial"

ANS_AT_COMPLETION = "completion"
ANS_AT_TRIGGER = "trigger"


@dataclass
class ScorerConfig:
    kind: str = "oracle"  # oracle | heuristic | learned | external
    weights: list[float] | None = None
    bias: float = 0.0
    threshold: float = 0.5
    endpoint: str | None = None
    timeout_ms: int = 1000

    def validate(self) -> None:
        if self.kind not in ("oracle", "heuristic", "learned", "external"):
            raise InvalidConfigError(f"unknown scorer kind {self.kind!r}")
        if not (0.0 < self.threshold < 1.0):
            raise InvalidConfigError("scorer threshold must be in (0, 1)")
        if self.kind == "external" and not self.endpoint:
            raise InvalidConfigError("external scorer needs an endpoint")


@dataclass
class RetrievalConfig:
    policy: str = "threshold"  # threshold | top_k
    alpha: float = 2.0
    k: int = 1
    cap: int = 8
    temperature: float = 1.0
    projection: list[list[float]] | None = None

    def validate(self) -> None:
        if self.policy not in ("threshold", "top_k"):
            raise InvalidConfigError(f"unknown retrieval policy {self.policy!r}")
        if self.temperature <= 0:
            raise InvalidConfigError("retrieval temperature must be > 0")

    def make_policy(self):
        if self.policy == "top_k":
            return TopK(self.k)
        return Threshold(alpha=self.alpha, cap=self.cap)

    def make_head(self, dim: int) -> RetrievalHead:
        if self.projection is not None:
            return RetrievalHead(
                projection=np.asarray(self.projection, dtype=np.float64),
                temperature=self.temperature,
            )
        return RetrievalHead.identity(dim, temperature=self.temperature)


@dataclass
class ReactionConfig:
    backend: str = "mock"  # mock | external
    latency: LatencyModel = field(default_factory=LatencyModel)
    silent_margin: float = 2.0
    endpoint: str | None = None
    timeout_ms: int = 1000

    def validate(self) -> None:
        if self.backend not in ("mock", "external"):
            raise InvalidConfigError(f"unknown reaction backend {self.backend!r}")
        self.latency.validate()
        if self.backend == "external" and not self.endpoint:
            raise InvalidConfigError("external reaction backend needs an endpoint")

    def make_backend(self):
        if self.backend == "external":
            return ExternalBackend(
                endpoint=self.endpoint, timeout_ms=self.timeout_ms, latency=self.latency
            )
        return MockBackend(silent_margin=self.silent_margin, latency=self.latency)


@dataclass
class Ablations:
    no_ans_token: bool = False
    no_todo_token: bool = False
    no_silent_token: bool = False


@dataclass
class RunConfig:
    mode: str = ASYNC
    seed: int = 0
    clock: str = "virtual"
    queue_capacity: int | None = 5  # serial mode; None = unbounded
    ans_at: str = ANS_AT_COMPLETION
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    reaction: ReactionConfig = field(default_factory=ReactionConfig)
    ablations: Ablations = field(default_factory=Ablations)

    def validate(self) -> None:
        if self.mode not in (ASYNC, SERIAL):
            raise InvalidConfigError(f"unknown mode {self.mode!r}")
        if self.clock not in ("virtual", "wall"):
            raise InvalidConfigError(f"unknown clock {self.clock!r}")
        if self.mode == SERIAL and self.queue_capacity is not None and self.queue_capacity < 0:
            raise InvalidConfigError("queue_capacity must be >= 0")
        if self.ans_at not in (ANS_AT_COMPLETION, ANS_AT_TRIGGER):
            raise InvalidConfigError(f"unknown ans_at {self.ans_at!r}")
        self.segmenter.validate()
        self.scorer.validate()
        self.retrieval.validate()
        self.reaction.validate()


def config_from_dict(data: dict) -> RunConfig:
    cfg = RunConfig()
    cfg.mode = data.get("mode", cfg.mode)
    cfg.seed = int(data.get("seed", cfg.seed))
    cfg.clock = data.get("clock", cfg.clock)
    if "queue_capacity" in data:
        qc = data["queue_capacity"]
        cfg.queue_capacity = None if qc is None else int(qc)
    cfg.ans_at = data.get("ans_at", cfg.ans_at)

    seg = data.get("segmenter", {})
    cfg.segmenter = SegmenterConfig(
        mode=seg.get("mode", "scene"),
        boundary_threshold=float(seg.get("threshold", 0.85)),
        exclusion_window_frames=int(seg.get("exclusion_window", 4)),
        min_clip_frames=int(seg.get("min_frames", 4)),
        max_clip_frames=int(seg.get("max_frames", 64)),
        uniform_clip_frames=int(seg.get("uniform_frames", 16)),
    )

    sc = data.get("scorer", {})
    cfg.scorer = ScorerConfig(
        kind=sc.get("kind", "oracle"),
        weights=sc.get("weights"),
        bias=float(sc.get("bias", 0.0)),
        threshold=float(sc.get("threshold", 0.5)),
        endpoint=sc.get("endpoint"),
        timeout_ms=int(sc.get("timeout_ms", 1000)),
    )

    rt = data.get("retrieval", {})
    cfg.retrieval = RetrievalConfig(
        policy=rt.get("policy", "threshold"),
        alpha=float(rt.get("alpha", 2.0)),
        k=int(rt.get("k", 1)),
        cap=int(rt.get("cap", 8)),
        temperature=float(rt.get("temperature", 1.0)),
        projection=rt.get("projection"),
    )

    rx = data.get("reaction", {})
    lat_raw = rx.get("latency", {})
    latency = LatencyModel(
        kind=lat_raw.get("kind", "fixed"),
        ms=int(lat_raw.get("ms", 2000)),
        lo_ms=int(lat_raw.get("lo_ms", 0)),
        hi_ms=int(lat_raw.get("hi_ms", 0)),
    )
    cfg.reaction = ReactionConfig(
        backend=rx.get("backend", "mock"),
        latency=latency,
        silent_margin=float(rx.get("silent_margin", 2.0)),
        endpoint=rx.get("endpoint"),
        timeout_ms=int(rx.get("timeout_ms", 1000)),
    )

    ab = data.get("ablations", {})
    cfg.ablations = Ablations(
        no_ans_token=bool(ab.get("no_ans_token", False)),
        no_todo_token=bool(ab.get("no_todo_token", False)),
        no_silent_token=bool(ab.get("no_silent_token", False)),
    )
    cfg.validate()
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    return {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "clock": cfg.clock,
        "queue_capacity": cfg.queue_capacity,
        "ans_at": cfg.ans_at,
        "segmenter": {
            "mode": cfg.segmenter.mode,
            "threshold": cfg.segmenter.boundary_threshold,
            "exclusion_window": cfg.segmenter.exclusion_window_frames,
            "min_frames": cfg.segmenter.min_clip_frames,
            "max_frames": cfg.segmenter.max_clip_frames,
            "uniform_frames": cfg.segmenter.uniform_clip_frames,
        },
        "scorer": {
            "kind": cfg.scorer.kind,
            "weights": cfg.scorer.weights,
            "bias": cfg.scorer.bias,
            "threshold": cfg.scorer.threshold,
            "endpoint": cfg.scorer.endpoint,
            "timeout_ms": cfg.scorer.timeout_ms,
        },
        "retrieval": {
            "policy": cfg.retrieval.policy,
            "alpha": cfg.retrieval.alpha,
            "k": cfg.retrieval.k,
            "cap": cfg.retrieval.cap,
            "temperature": cfg.retrieval.temperature,
            "projection": cfg.retrieval.projection,
        },
        "reaction": {
            "backend": cfg.reaction.backend,
            "latency": {
                "kind": cfg.reaction.latency.kind,
                "ms": cfg.reaction.latency.ms,
                "lo_ms": cfg.reaction.latency.lo_ms,
                "hi_ms": cfg.reaction.latency.hi_ms,
            },
            "silent_margin": cfg.reaction.silent_margin,
            "endpoint": cfg.reaction.endpoint,
            "timeout_ms": cfg.reaction.timeout_ms,
        },
        "ablations": {
            "no_ans_token": cfg.ablations.no_ans_token,
            "no_todo_token": cfg.ablations.no_todo_token,
            "no_silent_token": cfg.ablations.no_silent_token,
        },
    }


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise ParseError(f"config not found: {path}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_dict(data)
