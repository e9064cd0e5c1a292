import json

import numpy as np
import pytest

import streamweave.reaction as reaction_mod
from streamweave.errors import InvalidConfigError
from streamweave.metrics import compute_metrics
from streamweave.orchestrator import execute, run, run_serial_baseline
from streamweave.reaction import LatencyModel
from streamweave.runconfig import (
    ReactionConfig,
    RetrievalConfig,
    RunConfig,
    ScorerConfig,
)
from streamweave.scenario import make_planted_scenario
from streamweave.timeline import (
    ANSWER_EMITTED,
    CLIP_EMITTED,
    DECISION,
    FRAME_ARRIVED,
    FRAME_DROPPED,
    QUESTION_INSERTED,
    REACTION_END,
    REACTION_START,
    SILENT,
    STREAM_ENDED,
    SUPPRESSED,
)
from streamweave.training import (
    PLANTED_RETRIEVAL_TEMPERATURE,
    PLANTED_SILENT_MARGIN,
    make_planted_corpus,
    planted_segmenter_config,
)


def harness_cfg(
    scorer_kind="oracle",
    *,
    mode="async",
    latency_ms=2000,
    seed=0,
    queue_capacity=5,
    **overrides,
):
    cfg = RunConfig(mode=mode, seed=seed, queue_capacity=queue_capacity)
    cfg.segmenter = planted_segmenter_config()
    cfg.scorer = ScorerConfig(kind=scorer_kind, weights=overrides.pop("weights", None),
                              bias=overrides.pop("bias", 0.0))
    cfg.retrieval = RetrievalConfig(temperature=PLANTED_RETRIEVAL_TEMPERATURE)
    cfg.reaction = ReactionConfig(
        silent_margin=PLANTED_SILENT_MARGIN,
        latency=LatencyModel(kind="fixed", ms=latency_ms),
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def fast_scenario(seed=3, n_segments=7, relevant=(2,)):
    """Planted scenario at 100 ms frame period (stream of a few seconds)."""
    return make_planted_scenario(
        seed,
        dim=16,
        n_segments=n_segments,
        relevant_indices=relevant,
        noise_sigma=0.1,
        frame_period_ms=100,
        irrelevant_frames=(6,),
        span_grace_ms=300,
    )


class TestOracleRun:
    def test_answers_inside_every_span_none_outside(self):
        sc = make_planted_corpus(1, seed0=77)[0]
        tl = run(sc, harness_cfg())
        answers = tl.of_kind(ANSWER_EMITTED)
        spans = sc.questions[0].relevant_spans_ms
        assert len(answers) == len(spans)
        for a in answers:
            assert any(s <= a.payload["trigger_t_ms"] < e for s, e in spans)
        report = compute_metrics(tl, sc)
        assert report.tvg_f1 == 1.0

    def test_no_questions_no_decisions(self):
        sc = make_planted_scenario(5, n_segments=4, relevant_indices=(1,))
        sc.questions.clear()
        tl = run(sc, harness_cfg())
        assert tl.of_kind(DECISION) == []
        assert tl.of_kind(CLIP_EMITTED)
        assert len(tl.of_kind(STREAM_ENDED)) == 1

    def test_clip_cadence_one_decision_or_suppression_per_clip(self):
        sc = make_planted_corpus(1, seed0=12)[0]
        tl = run(sc, harness_cfg())
        q_t = sc.questions[0].t_ms
        clips_after_q = [e for e in tl.of_kind(CLIP_EMITTED) if e.t_ms >= q_t]
        decided = len(tl.of_kind(DECISION)) + len(tl.of_kind(SUPPRESSED))
        assert decided == len(clips_after_q)


class TestNonBlocking:
    def test_async_perception_never_stalls(self):
        sc = fast_scenario()
        tl = run(sc, harness_cfg(latency_ms=2000))
        report = compute_metrics(tl, sc)
        assert report.perception_stall_ms == 0
        assert report.frames_dropped == 0

        starts = tl.of_kind(REACTION_START)
        ends = tl.of_kind(REACTION_END)
        assert starts, "expected at least one reaction"
        assert len(starts) == len(ends)
        for s, e in zip(starts, ends):
            inside = [
                f for f in tl.of_kind(FRAME_ARRIVED) if s.t_ms < f.t_ms < e.t_ms
            ]
            assert len(inside) >= 19
            for f in inside:
                assert f.t_ms == f.payload["nominal_t_ms"]

    def test_frames_at_nominal_timestamps_during_reactions(self):
        sc = fast_scenario(seed=9)
        tl = run(sc, harness_cfg(latency_ms=2000))
        for f in tl.of_kind(FRAME_ARRIVED):
            assert f.t_ms == f.payload["nominal_t_ms"]


class TestSerialBaseline:
    def test_queue_drops_and_stall(self):
        sc = fast_scenario()
        cfg = harness_cfg(mode="serial", latency_ms=2000, queue_capacity=5)
        tl = run_serial_baseline(sc, cfg)
        report = compute_metrics(tl, sc)
        n_reactions = len(tl.of_kind(REACTION_START))
        assert n_reactions >= 1
        assert report.frames_dropped >= 14 * n_reactions
        assert report.perception_stall_ms >= 2000 * n_reactions

    def test_no_decisions_while_blocked(self):
        sc = fast_scenario()
        cfg = harness_cfg(mode="serial", latency_ms=2000, queue_capacity=5)
        tl = run_serial_baseline(sc, cfg)
        open_interval = None
        for e in tl.events:
            if e.kind == REACTION_START:
                open_interval = e.t_ms
            elif e.kind == REACTION_END:
                open_interval = None
            elif e.kind == DECISION and open_interval is not None:
                assert not (open_interval < e.t_ms < e.t_ms), "decision inside block"
                # Decisions at the completion timestamp are fine (queue drain).
                assert e.t_ms >= open_interval

    def test_unbounded_capacity_zero_drops_positive_stall(self):
        sc = fast_scenario()
        cfg = harness_cfg(mode="serial", latency_ms=2000, queue_capacity=None)
        tl = run_serial_baseline(sc, cfg)
        report = compute_metrics(tl, sc)
        assert report.frames_dropped == 0
        assert report.perception_stall_ms > 0

    def test_event_conservation(self):
        sc = fast_scenario()
        cfg = harness_cfg(mode="serial", latency_ms=2000, queue_capacity=3)
        tl = run_serial_baseline(sc, cfg)
        n = len(tl.of_kind(FRAME_ARRIVED)) + len(tl.of_kind(FRAME_DROPPED))
        assert n == len(sc.frames)

    def test_serial_answers_no_earlier_than_async(self):
        sc = fast_scenario()
        async_tl = run(sc, harness_cfg(latency_ms=2000))
        serial_tl = run_serial_baseline(
            sc, harness_cfg(mode="serial", latency_ms=2000, queue_capacity=5)
        )
        async_emits = [e.payload["emit_t_ms"] for e in async_tl.of_kind(ANSWER_EMITTED)]
        serial_emits = [e.payload["emit_t_ms"] for e in serial_tl.of_kind(ANSWER_EMITTED)]
        for s, a in zip(serial_emits, async_emits):
            assert s >= a

    def test_zero_questions_matches_async(self):
        sc = fast_scenario()
        sc.questions.clear()
        async_tl = run(sc, harness_cfg())
        serial_tl = run_serial_baseline(sc, harness_cfg(mode="serial"))
        assert async_tl.to_json() == serial_tl.to_json()

    def test_mode_guards(self):
        sc = fast_scenario()
        with pytest.raises(InvalidConfigError):
            run(sc, harness_cfg(mode="serial"))
        with pytest.raises(InvalidConfigError):
            run_serial_baseline(sc, harness_cfg())


class TestDeterminism:
    def test_bit_identical_reruns(self):
        sc = make_planted_corpus(1, seed0=21)[0]
        a = run(sc, harness_cfg(seed=7)).to_json()
        b = run(sc, harness_cfg(seed=7)).to_json()
        assert a == b

    def test_uniform_latency_seeded(self):
        sc = fast_scenario()
        cfg = harness_cfg()
        cfg.reaction.latency = LatencyModel(kind="uniform", lo_ms=500, hi_ms=2500)
        a = execute(sc, cfg).to_json()
        b = execute(sc, cfg).to_json()
        assert a == b


class TestSuppression:
    def test_in_flight_clips_are_suppressed_not_decided(self):
        sc = fast_scenario()
        tl = run(sc, harness_cfg(latency_ms=2000))
        starts = {e.t_ms for e in tl.of_kind(REACTION_START)}
        ends = {e.t_ms for e in tl.of_kind(REACTION_END)}
        assert tl.of_kind(SUPPRESSED), "latency spans several clips: expect suppression"
        for e in tl.of_kind(SUPPRESSED):
            assert e.payload["reason"] == "in_flight"
        # No decision event lands strictly inside any reaction interval.
        intervals = list(zip(sorted(starts), sorted(ends)))
        for d in tl.of_kind(DECISION):
            for s, e in intervals:
                assert not (s < d.t_ms < e)


class TestSilentPath:
    def silent_cfg(self, **over):
        # Zero-weight head responds at every clip; diffuse retrieval with a
        # high margin drives the generator silent.
        cfg = harness_cfg("heuristic", latency_ms=500, **over)
        cfg.retrieval = RetrievalConfig(temperature=5.0)
        cfg.reaction = ReactionConfig(
            silent_margin=40.0, latency=LatencyModel(kind="fixed", ms=500)
        )
        return cfg

    def test_silent_answers_suppress_output(self):
        sc = make_planted_corpus(1, seed0=31)[0]
        tl = run(sc, self.silent_cfg())
        silents = tl.of_kind(SILENT)
        answers = tl.of_kind(ANSWER_EMITTED)
        assert silents, "expected silent outcomes"
        # The flat-retrieval bar is capped at 0.5, so only the first (one- or
        # two-clip history) triggers can answer; the rest go silent.
        assert len(answers) <= 2
        silent_triggers = {e.payload["trigger_t_ms"] for e in silents}
        assert not any(a.payload["trigger_t_ms"] in silent_triggers for a in answers)
        # Every reaction still closes.
        assert len(tl.of_kind(REACTION_START)) == len(tl.of_kind(REACTION_END))
        # Ordinal freezes once outcomes go silent.
        final_ordinal = len(answers) + 1
        for e in tl.of_kind(REACTION_START):
            assert e.payload["ordinal"] <= final_ordinal

    def test_no_silent_ablation_forces_answers(self):
        sc = make_planted_corpus(1, seed0=31)[0]
        cfg = self.silent_cfg()
        cfg.ablations.no_silent_token = True
        tl = run(sc, cfg)
        assert tl.of_kind(SILENT) == []
        assert tl.of_kind(ANSWER_EMITTED)

    def test_silent_increases_nothing_in_decision_stream(self):
        sc = make_planted_corpus(1, seed0=31)[0]
        base = run(sc, self.silent_cfg())
        abl = run(sc, self.silent_cfg())
        assert [e.payload for e in base.of_kind(DECISION)] == [
            e.payload for e in abl.of_kind(DECISION)
        ]


class TestAnsAtModes:
    def test_non_silent_runs_identical_answers(self):
        sc = make_planted_corpus(1, seed0=41)[0]
        tl_completion = run(sc, harness_cfg())
        tl_trigger = run(sc, harness_cfg(ans_at="trigger"))
        a = [e.payload for e in tl_completion.of_kind(ANSWER_EMITTED)]
        b = [e.payload for e in tl_trigger.of_kind(ANSWER_EMITTED)]
        assert a == b

    def test_trigger_mode_survives_silent_outcomes(self):
        sc = make_planted_corpus(1, seed0=31)[0]
        cfg = harness_cfg("heuristic", ans_at="trigger", latency_ms=500)
        cfg.retrieval = RetrievalConfig(temperature=5.0)
        cfg.reaction = ReactionConfig(
            silent_margin=40.0, latency=LatencyModel(kind="fixed", ms=500)
        )
        tl = run(sc, cfg)
        assert tl.of_kind(SILENT)
        assert len(tl.of_kind(STREAM_ENDED)) == 1

    def test_trigger_mode_evaluates_during_flight(self):
        sc = fast_scenario()
        tl = run(sc, harness_cfg(ans_at="trigger", latency_ms=2000))
        starts = [e.t_ms for e in tl.of_kind(REACTION_START)]
        ends = [e.t_ms for e in tl.of_kind(REACTION_END)]
        in_flight_decisions = [
            d
            for d in tl.of_kind(DECISION)
            if any(s < d.t_ms < e for s, e in zip(starts, ends))
        ]
        assert in_flight_decisions, "trigger mode keeps evaluating during reactions"


class TestFailurePaths:
    def test_external_backend_down_logs_failed_and_continues(self):
        sc = make_planted_corpus(1, seed0=51)[0]
        cfg = harness_cfg()
        cfg.reaction = ReactionConfig(
            backend="external",
            endpoint="http://127.0.0.1:1",
            timeout_ms=100,
            latency=LatencyModel(kind="fixed", ms=1000),
        )
        tl = run(sc, cfg)
        failed = [e for e in tl.events if e.kind == "Failed" and e.payload["during"] == "reaction"]
        assert failed
        assert len(tl.of_kind(REACTION_START)) == len(failed)
        assert len(tl.of_kind(STREAM_ENDED)) == 1
        # Decisions continue after the failure.
        assert max(e.t_ms for e in tl.of_kind(DECISION)) > failed[0].t_ms

    def test_second_question_becomes_failed_event(self):
        sc = make_planted_corpus(1, seed0=61)[0]
        q = sc.questions[0]
        from streamweave.scenario import Question

        sc.questions.append(
            Question(
                id="q_dup",
                t_ms=q.t_ms + 5000,
                text="second",
                q_embed=q.q_embed,
                relevant_spans_ms=(),
            )
        )
        tl = run(sc, harness_cfg())
        failed = [e for e in tl.events if e.kind == "Failed" and e.payload["during"] == "question"]
        assert len(failed) == 1
        assert len(tl.of_kind(QUESTION_INSERTED)) == 2
        assert len(tl.of_kind(STREAM_ENDED)) == 1


class TestDecisionPurity:
    def test_generated_text_never_influences_decisions(self, monkeypatch):
        sc = make_planted_corpus(1, seed0=71)[0]
        base = run(sc, harness_cfg())

        original = reaction_mod.mock_generate

        def scrambled(req, backend, *, never_silent=False):
            text, silent = original(req, backend, never_silent=never_silent)
            return ("xx " + text[::-1], silent)

        monkeypatch.setattr(reaction_mod, "mock_generate", scrambled)
        altered = run(sc, harness_cfg())
        assert [e.payload for e in base.of_kind(DECISION)] == [
            e.payload for e in altered.of_kind(DECISION)
        ]
        assert [e.t_ms for e in base.of_kind(REACTION_START)] == [
            e.t_ms for e in altered.of_kind(REACTION_START)
        ]
        # Texts differ, proving the runs actually diverged downstream.
        a = [e.payload["text"] for e in base.of_kind(ANSWER_EMITTED)]
        b = [e.payload["text"] for e in altered.of_kind(ANSWER_EMITTED)]
        assert a != b


class TestTimelineExport:
    def test_round_trip(self, tmp_path):
        sc = make_planted_corpus(1, seed0=81)[0]
        tl = run(sc, harness_cfg())
        path = tmp_path / "timeline.json"
        tl.dump(path)
        from streamweave.timeline import Timeline

        loaded = Timeline.load(path)
        assert loaded.to_json() == tl.to_json()
        data = json.loads(path.read_text())
        assert all(set(e) == {"t_ms", "kind", "payload"} for e in data)
