"""Shared test utilities: clip builders, stub HTTP services, random generators."""

from __future__ import annotations

import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from streamweave.decision import DecisionState, HeadScorer, validate_sequence
from streamweave.scenario import Question
from streamweave.segmenter import Clip, ClipFeature, FrameEmbedding, SegmenterConfig
from streamweave.vectorops import l2_normalize


def random_unit(rng_or_seed, dim):
    rng = (
        np.random.default_rng(rng_or_seed)
        if isinstance(rng_or_seed, int)
        else rng_or_seed
    )
    return l2_normalize(rng.standard_normal(dim))


def random_frame_stream(seed, period_ms=1000):
    """Mixed-regime noisy stream: random segment count, directions, sigma in [0, 0.3]."""
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(4, 17))
    frames = []
    t = 0
    for _ in range(int(rng.integers(1, 6))):
        direction = random_unit(rng, dim)
        sigma = float(rng.uniform(0.0, 0.3))
        for _ in range(int(rng.integers(1, 40))):
            vec = l2_normalize(direction + sigma * rng.standard_normal(dim))
            frames.append(FrameEmbedding(t_ms=t, vec=vec))
            t += period_ms
    return frames


def random_segmenter_config(seed):
    rng = np.random.default_rng(seed + 77)
    if rng.uniform() < 0.25:
        return SegmenterConfig(mode="uniform", uniform_clip_frames=int(rng.integers(2, 24)))
    min_frames = int(rng.integers(1, 8))
    return SegmenterConfig(
        boundary_threshold=float(rng.uniform(0.3, 0.95)),
        exclusion_window_frames=int(rng.integers(1, 10)),
        min_clip_frames=min_frames,
        max_clip_frames=min_frames + int(rng.integers(0, 40)),
    )


def make_clipfeat(index, start_ms, end_ms, vec, cause="boundary"):
    vec = np.asarray(vec, dtype=np.float64)
    return ClipFeature(
        clip=Clip(index=index, start_ms=start_ms, end_ms=end_ms, frame_count=4),
        F=vec,
        F_hat=l2_normalize(vec),
        boundary_sim=None,
        cause=cause,
    )


def make_question(qid="q0", t_ms=0, dim=6, spans=(), seed=1):
    rng = np.random.default_rng(seed)
    return Question(
        id=qid,
        t_ms=t_ms,
        text="test question",
        q_embed=l2_normalize(rng.standard_normal(dim)),
        relevant_spans_ms=tuple(spans),
    )


def drive_random_ops(seed, n_ops, *, no_ans=False, no_todo=False, dim=6):
    """Apply n_ops random legal operations, validating the sequence after each.

    Returns (state, op_log).
    """
    rng = random.Random(seed)
    nrng = np.random.default_rng(seed + 991)
    state = DecisionState(no_ans_token=no_ans, no_todo_token=no_todo)
    scorer = HeadScorer.zero(dim)
    cursor = 0
    next_index = 0
    last_ans = -1
    log = []

    for _ in range(n_ops):
        choices = ["clip", "clip"]
        has_content = state.question is not None or next_index > 0
        if state.question is None:
            choices.append("question")
        if has_content:
            choices += ["evaluate", "evaluate"]
        if state.question is not None and not state.compacted and state.stage_a_evaluated:
            choices += ["compact", "compact"]
        if state.compacted and state.question is not None:
            choices.append("answer")
        if state._undo is not None:
            choices.append("undo")
        op = rng.choice(choices)
        log.append(op)

        if op == "clip":
            end = cursor + rng.randint(1, 4) * 1000
            cf = make_clipfeat(next_index, cursor, end, nrng.standard_normal(dim))
            state.ingest_clip(cf)
            next_index += 1
            cursor = end
        elif op == "question":
            state.insert_question(make_question(dim=dim, seed=seed), t_ms=cursor)
        elif op == "evaluate":
            state.evaluate_todo(scorer, cursor)
        elif op == "compact":
            state.compact_to_memory()
        elif op == "answer":
            t_ans = max(last_ans + 1, state.q_pos_ms, cursor - rng.randint(0, 2000))
            state.record_answer(t_ans)
            last_ans = t_ans
        elif op == "undo":
            state.undo_last_answer()
            last_ans = state.ans_positions_ms[-1] if state.ans_positions_ms else -1

        validate_sequence(state)
    return state, log


class StubHandler(BaseHTTPRequestHandler):
    """Configurable stub endpoint; subclass or set class attrs per test."""

    response_body: dict = {}
    status = 200
    delay_s = 0.0
    requests_seen: list = []

    def do_POST(self):
        import time

        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else None
        type(self).requests_seen.append((self.path, body))
        if self.delay_s:
            time.sleep(self.delay_s)
        payload = json.dumps(self.response_body).encode()
        self.send_response(self.status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


def start_stub_server(handler_cls):
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler_cls)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://127.0.0.1:{server.server_address[1]}"
