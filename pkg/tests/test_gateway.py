import json
import threading
import time

import pytest
import requests

from streamweave.gateway import Gateway
from streamweave.runconfig import config_from_dict
from streamweave.scenario import save_scenario
from streamweave.training import make_planted_corpus


@pytest.fixture(scope="module")
def scenario_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenarios")
    # 50 ms frames: a whole session plays out in ~2 s of wall time. Questions
    # are stripped; live sessions inject their own.
    for i, sc in enumerate(make_planted_corpus(2, seed0=42, frame_period_ms=50)):
        sc.questions.clear()
        save_scenario(sc, out / f"live_{i}.json")
    return out


def live_config():
    return config_from_dict(
        {
            "clock": "wall",
            "segmenter": {"threshold": 0.55, "min_frames": 4, "max_frames": 6},
            "scorer": {"kind": "heuristic"},
            "retrieval": {"temperature": 0.1},
            "reaction": {"silent_margin": 1.0, "latency": {"kind": "fixed", "ms": 120}},
        }
    )


@pytest.fixture()
def gateway(scenario_dir):
    gw = Gateway(port=0, scenario_dir=scenario_dir, config=live_config())
    thread = threading.Thread(target=gw.serve_forever, daemon=True)
    thread.start()
    yield gw
    gw.shutdown()


@pytest.fixture()
def base(gateway):
    return f"http://127.0.0.1:{gateway.port}"


def start_session(base, scenario="live_0"):
    r = requests.post(f"{base}/sessions", json={"scenario": scenario}, timeout=5)
    assert r.status_code == 201, r.text
    return r.json()["session_id"]


def read_stream(base, sid, *, since=0, until_kind=None, max_events=500, timeout=10):
    events = []
    with requests.get(
        f"{base}/sessions/{sid}/events", params={"since": since}, stream=True, timeout=timeout
    ) as resp:
        for line in resp.iter_lines():
            if not line:
                continue
            event = json.loads(line)
            events.append(event)
            if until_kind and event["kind"] == until_kind:
                break
            if len(events) >= max_events:
                break
    return events


class TestSessionLifecycle:
    def test_start_session_created_idle(self, base):
        sid = start_session(base)
        r = requests.get(f"{base}/sessions/{sid}", timeout=5)
        assert r.json()["status"] == "idle"

    def test_unknown_scenario_404(self, base):
        r = requests.post(f"{base}/sessions", json={"scenario": "missing"}, timeout=5)
        assert r.status_code == 404

    def test_duplicate_start_409(self, base):
        start_session(base)
        r = requests.post(f"{base}/sessions", json={"scenario": "live_1"}, timeout=5)
        assert r.status_code == 409

    def test_unknown_session_404(self, base):
        assert requests.get(f"{base}/sessions/nope", timeout=5).status_code == 404
        r = requests.post(f"{base}/sessions/nope/control", json={"action": "play"}, timeout=5)
        assert r.status_code == 404

    def test_illegal_transition_409(self, base):
        sid = start_session(base)
        r = requests.post(f"{base}/sessions/{sid}/control", json={"action": "pause"}, timeout=5)
        assert r.status_code == 409

    def test_full_playback_reaches_ended(self, base):
        sid = start_session(base)
        requests.post(f"{base}/sessions/{sid}/control", json={"action": "play"}, timeout=5)
        deadline = time.time() + 15
        while time.time() < deadline:
            status = requests.get(f"{base}/sessions/{sid}", timeout=5).json()["status"]
            if status == "ended":
                break
            time.sleep(0.05)
        assert status == "ended"
        timeline = requests.get(f"{base}/sessions/{sid}/timeline", timeout=5).json()["events"]
        kinds = [e["kind"] for e in timeline]
        assert kinds.count("StreamEnded") == 1
        assert "FrameArrived" in kinds
        metrics = requests.get(f"{base}/sessions/{sid}/metrics", timeout=5)
        assert metrics.status_code == 200
        assert "tvg_f1" in metrics.json()

    def test_metrics_409_before_end(self, base):
        sid = start_session(base)
        r = requests.get(f"{base}/sessions/{sid}/metrics", timeout=5)
        assert r.status_code == 409


class TestEventStream:
    def test_first_event_is_session_status(self, base):
        sid = start_session(base)
        events = read_stream(base, sid, max_events=1, timeout=5)
        assert events[0]["kind"] == "SessionStatus"
        assert events[0]["payload"]["status"] == "idle"
        assert events[0]["seq"] == 0

    def test_two_subscribers_identical_sequences(self, base):
        sid = start_session(base)
        results = {}

        def reader(name):
            results[name] = read_stream(base, sid, until_kind="StreamEnded", timeout=20)

        threads = [threading.Thread(target=reader, args=(n,)) for n in ("a", "b")]
        for t in threads:
            t.start()
        requests.post(f"{base}/sessions/{sid}/control", json={"action": "play"}, timeout=5)
        for t in threads:
            t.join(timeout=25)
        assert results["a"] == results["b"]
        seqs = [e["seq"] for e in results["a"]]
        assert seqs == list(range(len(seqs)))

    def test_reconnect_with_since_covers_gap(self, base):
        sid = start_session(base)
        requests.post(f"{base}/sessions/{sid}/control", json={"action": "play"}, timeout=5)
        first = read_stream(base, sid, max_events=5, timeout=10)
        # Simulated disconnect: resume from the last seen seq.
        last_seq = first[-1]["seq"]
        rest = read_stream(base, sid, since=last_seq + 1, until_kind="StreamEnded", timeout=20)
        seqs = [e["seq"] for e in first + rest]
        assert seqs == list(range(len(seqs))), "replay must cover the gap exactly"

    def test_pause_freezes_frames_but_reactions_complete(self, base):
        sid = start_session(base)
        requests.post(f"{base}/sessions/{sid}/control", json={"action": "play"}, timeout=5)
        qr = requests.post(
            f"{base}/sessions/{sid}/questions", json={"text": "what changed"}, timeout=5
        )
        assert qr.status_code == 202
        # Wait for the first reaction to start, then pause immediately.
        deadline = time.time() + 10
        while time.time() < deadline:
            tl = requests.get(f"{base}/sessions/{sid}/timeline", timeout=5).json()["events"]
            if any(e["kind"] == "ReactionStart" for e in tl):
                break
            time.sleep(0.02)
        requests.post(f"{base}/sessions/{sid}/control", json={"action": "pause"}, timeout=5)
        time.sleep(0.05)
        tl1 = requests.get(f"{base}/sessions/{sid}/timeline", timeout=5).json()["events"]
        frames_before = sum(1 for e in tl1 if e["kind"] == "FrameArrived")
        time.sleep(0.4)  # longer than the 120 ms reaction latency
        tl2 = requests.get(f"{base}/sessions/{sid}/timeline", timeout=5).json()["events"]
        frames_after = sum(1 for e in tl2 if e["kind"] == "FrameArrived")
        assert frames_after == frames_before, "paused clock must freeze frames"
        ends = [e for e in tl2 if e["kind"] in ("ReactionEnd",)]
        assert ends, "in-flight reaction completes during pause"
        requests.post(f"{base}/sessions/{sid}/control", json={"action": "stop"}, timeout=5)


class TestQuestions:
    def test_inject_requires_playing(self, base):
        sid = start_session(base)
        r = requests.post(f"{base}/sessions/{sid}/questions", json={"text": "hi"}, timeout=5)
        assert r.status_code == 409

    def test_inject_and_answer_flow(self, base):
        sid = start_session(base)
        requests.post(f"{base}/sessions/{sid}/control", json={"action": "play"}, timeout=5)
        r = requests.post(
            f"{base}/sessions/{sid}/questions", json={"text": "report activity"}, timeout=5
        )
        assert r.status_code == 202
        qid = r.json()["question_id"]

        events = read_stream(base, sid, until_kind="AnswerEmitted", timeout=20)
        kinds = [e["kind"] for e in events]
        assert "QuestionInserted" in kinds
        inserted = next(e for e in events if e["kind"] == "QuestionInserted")
        assert inserted["payload"]["question_id"] == qid
        answer = next(e for e in events if e["kind"] == "AnswerEmitted")
        assert answer["payload"]["grounded"], "answer links to grounded clips"

    def test_second_question_409(self, base):
        sid = start_session(base)
        requests.post(f"{base}/sessions/{sid}/control", json={"action": "play"}, timeout=5)
        requests.post(f"{base}/sessions/{sid}/questions", json={"text": "one"}, timeout=5)
        time.sleep(0.15)  # let the loop ingest it
        r = requests.post(f"{base}/sessions/{sid}/questions", json={"text": "two"}, timeout=5)
        assert r.status_code == 409

    def test_empty_text_400(self, base):
        sid = start_session(base)
        requests.post(f"{base}/sessions/{sid}/control", json={"action": "play"}, timeout=5)
        r = requests.post(f"{base}/sessions/{sid}/questions", json={"text": "  "}, timeout=5)
        assert r.status_code == 400


def test_healthz(base):
    assert requests.get(f"{base}/healthz", timeout=5).json() == {"ok": True}
