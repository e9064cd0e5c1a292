"""Live session gateway: streams pipeline events to clients over HTTP.

One active session at a time runs the pipeline under a wall clock. Clients
subscribe to an ordered, replayable JSON-lines event feed (every event carries
a monotonically increasing `seq`), inject questions mid-stream, and control
playback. Pausing freezes frame delivery and decisions but lets in-flight
reactions complete.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .errors import PipelineError, QuestionAlreadyActiveError
from .metrics import compute_metrics
from .orchestrator import PipelineCore
from .reaction import trigger as trigger_reaction
from .runconfig import RunConfig, config_from_dict
from .scenario import Question, Scenario, load_scenario, pseudo_embedding
from .stream import EV_FRAME, EV_QUESTION, WallClock, scenario_events
from .timeline import Timeline

log = logging.getLogger("streamweave.gateway")

SESSION_STATUS = "SessionStatus"

IDLE = "idle"
PLAYING = "playing"
PAUSED = "paused"
ENDED = "ended"

_TRANSITIONS = {
    ("idle", "play"): PLAYING,
    ("playing", "pause"): PAUSED,
    ("paused", "play"): PLAYING,
    ("playing", "stop"): ENDED,
    ("paused", "stop"): ENDED,
}


class LiveSession:
    """One scenario playing under a wall clock with live question injection."""

    def __init__(self, session_id: str, scenario: Scenario, cfg: RunConfig, name: str) -> None:
        self.session_id = session_id
        self.scenario = scenario
        self.name = name
        self.cfg = cfg
        self.lock = threading.RLock()
        self.cond = threading.Condition(self.lock)
        self.buffer: list[dict] = []
        self.status = IDLE
        self.clock = WallClock()
        self.clock.pause()
        self.timeline = Timeline()
        self._drained = 0
        self._rng = np.random.default_rng(cfg.seed)
        self._completions: queue.Queue = queue.Queue()
        self.core = PipelineCore(scenario, cfg, self.timeline, self._start_reaction)
        self._events = scenario_events(scenario)
        self._pos = 0
        self._injections: queue.Queue = queue.Queue()
        self._injected = 0
        self._stop_requested = False
        self._thread: threading.Thread | None = None
        self._emit_status()

    # -- internals -------------------------------------------------------------

    def _start_reaction(self, request) -> str | None:
        backend = self.cfg.reaction.make_backend()
        trigger_reaction(
            request,
            backend,
            lambda answer, error: self._completions.put((answer, error)),
            self._rng,
            never_silent=self.cfg.ablations.no_silent_token,
        )
        return None

    def _append_status_locked(self) -> None:
        self.buffer.append(
            {
                "seq": len(self.buffer),
                "t_ms": self.clock.now_ms,
                "kind": SESSION_STATUS,
                "payload": {
                    "status": self.status,
                    "session_id": self.session_id,
                    "scenario": self.name,
                },
            }
        )
        self.cond.notify_all()

    def _emit_status(self) -> None:
        with self.cond:
            self._append_status_locked()

    def _drain_timeline_locked(self) -> None:
        new = self.timeline.events[self._drained :]
        for e in new:
            self.buffer.append(
                {"seq": len(self.buffer), "t_ms": e.t_ms, "kind": e.kind, "payload": e.payload}
            )
        self._drained = len(self.timeline.events)
        if new:
            self.cond.notify_all()

    def _drain_timeline(self) -> None:
        with self.cond:
            self._drain_timeline_locked()

    def _emit_stream_end(self) -> None:
        with self.cond:
            if not self.core.ended:
                self.core.on_stream_end(self.clock.now_ms)
            self._drain_timeline_locked()

    def _mark_ended(self) -> None:
        # Final drain, the ENDED status, and its status event land atomically
        # so a subscriber can never observe ENDED with events still pending.
        with self.cond:
            self._drain_timeline_locked()
            self.status = ENDED
            self._append_status_locked()

    def _loop(self) -> None:
        while True:
            drained_any = False
            while True:
                try:
                    answer, error = self._completions.get_nowait()
                except queue.Empty:
                    break
                with self.lock:
                    self.core.on_reaction_complete(answer, error, self.clock.now_ms)
                drained_any = True
            if drained_any:
                self._drain_timeline()

            with self.lock:
                status = self.status
                stream_done = self._pos >= len(self._events)

            if status == PLAYING and not self._stop_requested:
                now = self.clock.now_ms
                progressed = False
                with self.lock:
                    while not self._injections.empty():
                        q = self._injections.get_nowait()
                        self.core.on_question(q, self.clock.now_ms)
                        progressed = True
                    while self._pos < len(self._events) and self._events[self._pos][0] <= now:
                        _, _, event = self._events[self._pos]
                        self._pos += 1
                        if event.kind == EV_QUESTION:
                            self.core.on_question(event.question, self.clock.now_ms)
                        elif event.kind == EV_FRAME:
                            self.core.on_frame(event.frame, self.clock.now_ms, event.t_ms)
                        progressed = True
                    stream_done = self._pos >= len(self._events)
                if progressed:
                    self._drain_timeline()

            wants_end = self._stop_requested or (
                status == PLAYING
                and stream_done
                and self.clock.now_ms >= self.scenario.duration_ms
            )
            if wants_end:
                # Flush the segmenter first (which may trigger one last
                # reaction), then wait out any in-flight reactions.
                self._emit_stream_end()
                with self.lock:
                    in_flight = self.core.in_flight
                if not in_flight and self._completions.empty():
                    self._mark_ended()
                    return
            time.sleep(0.002)

    # -- public API -------------------------------------------------------------

    def control(self, action: str) -> dict:
        with self.lock:
            key = (self.status, action)
            if key not in _TRANSITIONS:
                raise PipelineError(f"illegal transition: {self.status} -> {action}")
            if action != "stop":
                # The loop thread reports ENDED itself after draining.
                self.status = _TRANSITIONS[key]
        if action == "play":
            self.clock.resume()
            if self._thread is None:
                self._thread = threading.Thread(target=self._loop, daemon=True)
                self._thread.start()
        elif action == "pause":
            self.clock.pause()
        elif action == "stop":
            self.clock.pause()
            self._stop_requested = True
            if self._thread is None:
                self._emit_stream_end()
                self._mark_ended()
        if action != "stop":
            self._emit_status()
        return self.describe()

    def inject_question(self, text: str, embedding=None) -> str:
        with self.lock:
            if self.status not in (PLAYING, PAUSED):
                raise PipelineError(f"cannot inject while {self.status}")
            if self.core.state.question is not None:
                raise QuestionAlreadyActiveError("a question is already active")
            self._injected += 1
            qid = f"live-{self._injected}"
            vec = (
                np.asarray(embedding, dtype=np.float64)
                if embedding is not None
                else pseudo_embedding(text, self.scenario.dim)
            )
            question = Question(id=qid, t_ms=self.clock.now_ms, text=text, q_embed=vec)
            self._injections.put(question)
        return qid

    def subscribe(self, since: int = 0):
        idx = since
        while True:
            with self.cond:
                if idx < len(self.buffer):
                    event = self.buffer[idx]
                    idx += 1
                elif self.status == ENDED:
                    return
                else:
                    self.cond.wait(timeout=0.25)
                    continue
            yield event

    def describe(self) -> dict:
        with self.lock:
            return {
                "session_id": self.session_id,
                "scenario": self.name,
                "status": self.status,
                "t_ms": self.clock.now_ms,
                "events": len(self.buffer),
            }

    def metrics(self) -> dict:
        with self.lock:
            if self.status != ENDED:
                raise PipelineError("metrics available after the session ends")
        return compute_metrics(self.timeline, self.scenario).to_dict()

    def timeline_events(self) -> list[dict]:
        with self.lock:
            return [e.to_dict() for e in self.timeline.events]


class _QuietServer(ThreadingHTTPServer):
    daemon_threads = True

    def handle_error(self, request, client_address):
        # Subscribers hang up mid-stream routinely; not worth a traceback.
        log.debug("client connection dropped: %s", client_address)


class Gateway:
    """Session registry plus the HTTP server."""

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 8080,
        scenario_dir: Path | None = None,
        config: RunConfig | None = None,
    ) -> None:
        self.scenario_dir = scenario_dir
        self.config = config or config_from_dict({"scorer": {"kind": "heuristic"}})
        self.sessions: dict[str, LiveSession] = {}
        self.lock = threading.Lock()
        gateway = self

        class Handler(_GatewayHandler):
            pass

        Handler.gateway = gateway
        self.server = _QuietServer((host, port), Handler)

    @property
    def port(self) -> int:
        return self.server.server_address[1]

    def resolve_scenario(self, ref: str) -> tuple[Scenario, str] | None:
        path = Path(ref)
        if path.suffix == ".json" and path.exists():
            return load_scenario(path), path.stem
        if self.scenario_dir is not None:
            candidate = self.scenario_dir / f"{ref}.json"
            if candidate.exists():
                return load_scenario(candidate), ref
        return None

    def start_session(self, ref: str, session_id: str | None, cfg_overrides: dict | None) -> LiveSession:
        with self.lock:
            active = [s for s in self.sessions.values() if s.status != ENDED]
            if active:
                raise FileExistsError("a session is already active")
            resolved = self.resolve_scenario(ref)
            if resolved is None:
                raise FileNotFoundError(f"unknown scenario {ref!r}")
            scenario, name = resolved
            cfg = self.config
            if cfg_overrides:
                from .runconfig import config_to_dict

                merged = config_to_dict(cfg)
                merged.update(cfg_overrides)
                cfg = config_from_dict(merged)
            sid = session_id or uuid.uuid4().hex[:12]
            if sid in self.sessions:
                raise FileExistsError(f"session {sid!r} exists")
            session = LiveSession(sid, scenario, cfg, name)
            self.sessions[sid] = session
            return session

    def serve_forever(self) -> None:
        log.info("gateway listening on port %d", self.port)
        self.server.serve_forever()

    def shutdown(self) -> None:
        self.server.shutdown()
        self.server.server_close()


class _GatewayHandler(BaseHTTPRequestHandler):
    gateway: Gateway = None
    protocol_version = "HTTP/1.1"

    # -- plumbing ---------------------------------------------------------------

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _cors(self):
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")

    def _json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self._cors()
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        if not length:
            return {}
        try:
            return json.loads(self.rfile.read(length))
        except json.JSONDecodeError:
            return {}

    def _session(self, sid: str) -> LiveSession | None:
        return self.gateway.sessions.get(sid)

    # -- routes -----------------------------------------------------------------

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_POST(self):
        parts = [p for p in self.path.split("?")[0].split("/") if p]
        body = self._body()
        if parts == ["sessions"]:
            ref = body.get("scenario")
            if not ref:
                return self._json(400, {"error": "missing 'scenario'"})
            try:
                session = self.gateway.start_session(
                    ref, body.get("session_id"), body.get("config")
                )
            except FileNotFoundError as exc:
                return self._json(404, {"error": str(exc)})
            except FileExistsError as exc:
                return self._json(409, {"error": str(exc)})
            except PipelineError as exc:
                return self._json(400, {"error": str(exc)})
            return self._json(201, session.describe())
        if len(parts) == 3 and parts[0] == "sessions":
            session = self._session(parts[1])
            if session is None:
                return self._json(404, {"error": "unknown session"})
            if parts[2] == "questions":
                text = body.get("text", "").strip()
                if not text:
                    return self._json(400, {"error": "missing 'text'"})
                try:
                    qid = session.inject_question(text, body.get("embedding"))
                except QuestionAlreadyActiveError as exc:
                    return self._json(409, {"error": str(exc)})
                except PipelineError as exc:
                    return self._json(409, {"error": str(exc)})
                return self._json(202, {"question_id": qid})
            if parts[2] == "control":
                action = body.get("action")
                if action not in ("play", "pause", "stop"):
                    return self._json(400, {"error": "action must be play|pause|stop"})
                try:
                    state = session.control(action)
                except PipelineError as exc:
                    return self._json(409, {"error": str(exc)})
                return self._json(200, state)
        return self._json(404, {"error": "no such route"})

    def do_GET(self):
        path, _, query = self.path.partition("?")
        parts = [p for p in path.split("/") if p]
        if parts == ["healthz"]:
            return self._json(200, {"ok": True})
        if len(parts) == 3 and parts[0] == "sessions":
            session = self._session(parts[1])
            if session is None:
                return self._json(404, {"error": "unknown session"})
            if parts[2] == "events":
                return self._stream_events(session, query)
            if parts[2] == "metrics":
                try:
                    return self._json(200, session.metrics())
                except PipelineError as exc:
                    return self._json(409, {"error": str(exc)})
            if parts[2] == "timeline":
                return self._json(200, {"events": session.timeline_events()})
        if len(parts) == 2 and parts[0] == "sessions":
            session = self._session(parts[1])
            if session is None:
                return self._json(404, {"error": "unknown session"})
            return self._json(200, session.describe())
        return self._json(404, {"error": "no such route"})

    def _stream_events(self, session: LiveSession, query: str) -> None:
        since = 0
        for part in query.split("&"):
            if part.startswith("since="):
                try:
                    since = int(part.split("=", 1)[1])
                except ValueError:
                    pass
        self.send_response(200)
        self._cors()
        self.send_header("Content-Type", "application/x-ndjson")
        self.send_header("Cache-Control", "no-cache")
        # Chunked framing so each event line reaches the client immediately.
        self.send_header("Transfer-Encoding", "chunked")
        self.end_headers()

        def write_chunk(data: bytes) -> None:
            self.wfile.write(f"{len(data):x}\r\n".encode("ascii") + data + b"\r\n")
            self.wfile.flush()

        try:
            for event in session.subscribe(since):
                write_chunk((json.dumps(event) + "\n").encode("utf-8"))
            write_chunk(b"")
        except (BrokenPipeError, ConnectionResetError, OSError):
            return


def serve(
    host: str = "127.0.0.1",
    port: int = 8080,
    scenario_dir: Path | None = None,
    config: RunConfig | None = None,
) -> None:
    Gateway(host=host, port=port, scenario_dir=scenario_dir, config=config).serve_forever()
