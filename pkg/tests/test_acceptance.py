"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with: pytest tests/test_acceptance.py -v
"""

import json
import math
import time

import numpy as np
import pytest
from helpers import (
    drive_random_ops,
    random_frame_stream,
    random_segmenter_config,
    random_unit,
)

from streamweave.cli import main as cli_main
from streamweave.decision import train_decision_head
from streamweave.metrics import compute_metrics, pooled_metrics
from streamweave.orchestrator import execute, run, run_serial_baseline
from streamweave.reaction import LatencyModel
from streamweave.retrieval import retrieval_loss_grad_projection
from streamweave.runconfig import (
    ReactionConfig,
    RetrievalConfig,
    RunConfig,
    ScorerConfig,
    config_from_dict,
)
from streamweave.scenario import (
    make_planted_scenario,
    make_two_scene_scenario,
    save_scenario,
)
from streamweave.segmenter import StreamSegmenter, segment_offline
from streamweave.timeline import (
    ANSWER_EMITTED,
    FRAME_ARRIVED,
    REACTION_END,
    REACTION_START,
)
from streamweave.training import (
    PLANTED_RETRIEVAL_TEMPERATURE,
    build_pooled_sets,
    make_planted_corpus,
    planted_segmenter_config,
    recall_at_1,
)
from streamweave.vectorops import (
    bce_with_grad,
    logistic,
    retrieval_loss_with_grad,
)


def harness_cfg(scorer_kind="oracle", *, mode="async", latency_ms=2000, seed=0, **over):
    cfg = RunConfig(mode=mode, seed=seed, queue_capacity=over.pop("queue_capacity", 5))
    cfg.segmenter = planted_segmenter_config()
    cfg.scorer = ScorerConfig(kind=scorer_kind)
    cfg.retrieval = RetrievalConfig(temperature=PLANTED_RETRIEVAL_TEMPERATURE)
    cfg.reaction = ReactionConfig(
        silent_margin=1.0, latency=LatencyModel(kind="fixed", ms=latency_ms)
    )
    for key, value in over.items():
        setattr(cfg, key, value)
    return cfg


def fast_scenario(seed=3):
    return make_planted_scenario(
        seed,
        dim=16,
        n_segments=7,
        relevant_indices=(2,),
        noise_sigma=0.1,
        frame_period_ms=100,
        irrelevant_frames=(6,),
        span_grace_ms=300,
    )


class TestNonBlockingContract:
    """Async: zero stall/drops, >=19 frames inside each reaction interval.
    Serial: >=2000 ms stall and >=14 drops per reaction at queue capacity 5."""

    def test_non_blocking_contract(self):
        started = time.monotonic()
        scenario = fast_scenario()

        async_tl = run(scenario, harness_cfg(latency_ms=2000, seed=11))
        report = compute_metrics(async_tl, scenario)
        assert report.perception_stall_ms == 0
        assert report.frames_dropped == 0
        starts = async_tl.of_kind(REACTION_START)
        ends = async_tl.of_kind(REACTION_END)
        assert starts and len(starts) == len(ends)
        for s, e in zip(starts, ends):
            inside = [f for f in async_tl.of_kind(FRAME_ARRIVED) if s.t_ms < f.t_ms < e.t_ms]
            assert len(inside) >= 19

        serial_tl = run_serial_baseline(
            scenario, harness_cfg(mode="serial", latency_ms=2000, seed=11, queue_capacity=5)
        )
        serial_report = compute_metrics(serial_tl, scenario)
        n_reactions = len(serial_tl.of_kind(REACTION_START))
        assert n_reactions >= 1
        assert serial_report.perception_stall_ms >= 2000 * n_reactions
        assert serial_report.frames_dropped >= 14 * n_reactions

        assert time.monotonic() - started < 5.0


class TestSegmentationOracleEquivalence:
    """Streaming output equals the offline scan on 1,000 seeded random streams."""

    def test_streaming_equals_offline_1000_streams(self):
        started = time.monotonic()
        for seed in range(1000):
            frames = random_frame_stream(seed)
            config = random_segmenter_config(seed)
            segmenter = StreamSegmenter(config=config, frame_period_ms=1000)
            streamed = []
            for frame in frames:
                streamed.extend(segmenter.push_frame(frame))
            tail = segmenter.finalize()
            if tail is not None:
                streamed.append(tail)
            offline = segment_offline(frames, config, frame_period_ms=1000)
            assert len(streamed) == len(offline), f"seed {seed}"
            for a, b in zip(streamed, offline):
                assert a.clip == b.clip, f"seed {seed}"
                assert a.cause == b.cause, f"seed {seed}"
                assert a.boundary_sim == b.boundary_sim, f"seed {seed}"
                assert np.array_equal(a.F, b.F), f"seed {seed}"
                assert np.array_equal(a.F_hat, b.F_hat), f"seed {seed}"
        assert time.monotonic() - started < 30.0


class TestSequenceGrammar:
    """10,000 random legal op interleavings never breach the sequence invariants."""

    def test_ten_thousand_interleavings(self):
        rng = np.random.default_rng(123)
        for i in range(10_000):
            n_ops = int(rng.integers(6, 22))
            drive_random_ops(
                i,
                n_ops,
                no_ans=bool(i % 5 == 0),
                no_todo=bool(i % 7 == 0),
            )


class TestGradientChecks:
    """Chained analytic gradients match central finite differences (h=1e-5)."""

    H = 1e-5

    def test_bce_chain_1000_draws(self):
        started = time.monotonic()
        rng = np.random.default_rng(42)
        for _ in range(1000):
            dim = int(rng.integers(2, 8))
            w = rng.standard_normal(dim)
            b = float(rng.standard_normal())
            x = rng.standard_normal(dim)
            y = int(rng.integers(0, 2))

            def loss_at(w_vec, bias):
                p = logistic(float(np.dot(w_vec, x)) + bias)
                return bce_with_grad(p, y).loss

            p = logistic(float(w @ x) + b)
            res = bce_with_grad(p, y)
            dlogit = float(res.grad[0]) * p * (1.0 - p)
            analytic_w = dlogit * x
            analytic_b = dlogit

            for j in range(dim):
                hi, lo = w.copy(), w.copy()
                hi[j] += self.H
                lo[j] -= self.H
                numeric = (loss_at(hi, b) - loss_at(lo, b)) / (2 * self.H)
                assert abs(analytic_w[j] - numeric) / max(abs(numeric), 1e-6) <= 1e-4
            numeric_b = (loss_at(w, b + self.H) - loss_at(w, b - self.H)) / (2 * self.H)
            assert abs(analytic_b - numeric_b) / max(abs(numeric_b), 1e-6) <= 1e-4
        assert time.monotonic() - started < 10.0

    def test_retrieval_chain_100_draws(self):
        started = time.monotonic()
        rng = np.random.default_rng(43)
        for _ in range(100):
            dim = int(rng.integers(3, 8))
            n = int(rng.integers(2, 7))
            w = np.eye(dim) + 0.3 * rng.standard_normal((dim, dim))
            embed = random_unit(rng, dim)
            indicators = np.stack([random_unit(rng, dim) for _ in range(n)])
            k = int(rng.integers(1, n + 1))
            relevant = set(rng.choice(n, size=k, replace=False).tolist())
            temperature = float(rng.uniform(0.3, 2.0))

            _, analytic = retrieval_loss_grad_projection(
                w, embed, indicators, relevant, temperature
            )
            numeric = np.zeros_like(w)
            for r in range(dim):
                for c in range(dim):
                    hi, lo = w.copy(), w.copy()
                    hi[r, c] += self.H
                    lo[r, c] -= self.H
                    numeric[r, c] = (
                        retrieval_loss_grad_projection(hi, embed, indicators, relevant, temperature)[0]
                        - retrieval_loss_grad_projection(lo, embed, indicators, relevant, temperature)[0]
                    ) / (2 * self.H)
            denom = np.maximum(np.abs(numeric), 1e-6)
            assert float(np.max(np.abs(analytic - numeric) / denom)) <= 1e-4
        assert time.monotonic() - started < 10.0


class TestLossIdentities:
    """Closed-form values of the relevance-matching loss, at 1e-9."""

    def test_identities(self):
        perfect = retrieval_loss_with_grad([1.0, 0.0, 0.0], {0})
        assert abs(perfect.loss - 0.0) <= 1e-9

        for k in (2, 3, 4, 7):
            p = np.zeros(k + 3)
            p[:k] = 1.0 / k
            res = retrieval_loss_with_grad(p, set(range(k)))
            assert abs(res.loss - math.log(k) / k) <= 1e-9

        res = retrieval_loss_with_grad([0.25, 0.25, 0.25, 0.25], {0, 1})
        assert abs(res.loss - 0.5 * math.log(4)) <= 1e-9


class TestEndToEndLearnedPipeline:
    """Train both heads on 50 scenarios, evaluate on 20 held-out ones."""

    def test_learned_pipeline(self, tmp_path):
        started = time.monotonic()
        train_dir = tmp_path / "train"
        train_dir.mkdir()
        train_scenarios = make_planted_corpus(50, seed0=1000)
        for i, sc in enumerate(train_scenarios):
            save_scenario(sc, train_dir / f"train_{i:03d}.json")
        held_scenarios = make_planted_corpus(20, seed0=5000)

        config_path = tmp_path / "config.json"
        cfg_dict = json.loads(json.dumps(_harness_config_dict()))
        config_path.write_text(json.dumps(cfg_dict))

        decision_params = tmp_path / "decision.json"
        retrieval_params = tmp_path / "retrieval.json"
        assert (
            cli_main(
                [
                    "train", "decision",
                    "--data", str(train_dir),
                    "--config", str(config_path),
                    "--epochs", "300",
                    "--out", str(decision_params),
                ]
            )
            == 0
        )
        assert (
            cli_main(
                [
                    "train", "retrieval",
                    "--data", str(train_dir),
                    "--config", str(config_path),
                    "--epochs", "300",
                    "--out", str(retrieval_params),
                ]
            )
            == 0
        )
        dec = json.loads(decision_params.read_text())
        ret = json.loads(retrieval_params.read_text())
        assert dec["loss_curve"][-1] < 0.1, "final mean BCE below 0.1"

        learned_cfg = harness_cfg("learned")
        learned_cfg.scorer.weights = dec["weights"]
        learned_cfg.scorer.bias = dec["bias"]
        learned_cfg.retrieval.projection = ret["projection"]
        learned_pairs = [(execute(sc, learned_cfg), sc) for sc in held_scenarios]
        learned_report = pooled_metrics(learned_pairs)
        assert learned_report.tvg_f1 >= 0.9

        held_sets = build_pooled_sets(held_scenarios, planted_segmenter_config())
        recall = recall_at_1(
            np.asarray(ret["projection"]), held_sets.retrieval, PLANTED_RETRIEVAL_TEMPERATURE
        )
        assert recall >= 0.9

        oracle_pairs = [(execute(sc, harness_cfg("oracle")), sc) for sc in held_scenarios]
        oracle_report = pooled_metrics(oracle_pairs)
        assert oracle_report.tvg_f1 == 1.0

        assert time.monotonic() - started < 120.0

    def test_trained_head_separates_clear_cases(self, tmp_path):
        # The trained head pushed far from the boundary: confident respond on
        # a fresh relevant clip, confident wait on distractor-only states.
        train_sets = build_pooled_sets(make_planted_corpus(50, seed0=1000), planted_segmenter_config())
        weights, bias, _ = train_decision_head(train_sets.decision, epochs=300, lr=10.0)
        held_sets = build_pooled_sets(make_planted_corpus(20, seed0=5000), planted_segmenter_config())
        p_rel = [logistic(float(weights @ x) + bias) for x, y in held_sets.decision if y == 1]
        p_irr = [logistic(float(weights @ x) + bias) for x, y in held_sets.decision if y == 0]
        assert float(np.mean(p_rel)) > 0.8
        assert float(np.mean(p_irr)) < 0.1
        assert min(p_rel) > max(p_irr)


class TestAblationDirections:
    """Desk-scale directional checks of the three config ablations."""

    def test_scene_segmentation_beats_uniform(self):
        scenarios = [make_two_scene_scenario(seed, noise_sigma=0.1) for seed in range(5)]
        scene_pairs = [(execute(sc, harness_cfg()), sc) for sc in scenarios]
        uniform_cfg = harness_cfg()
        uniform_cfg.segmenter.mode = "uniform"
        uniform_pairs = [(execute(sc, uniform_cfg), sc) for sc in scenarios]
        scene_f1 = pooled_metrics(scene_pairs).tvg_f1
        uniform_f1 = pooled_metrics(uniform_pairs).tvg_f1
        assert scene_f1 >= uniform_f1

    def test_disabling_answer_marker_strictly_increases_false_positives(self):
        # Multi-answer script: two wide relevant spans, several clips each.
        scenario = make_planted_scenario(
            17,
            dim=16,
            n_segments=5,
            relevant_indices=(1, 3),
            relevant_frames=24,
            irrelevant_frames=(6,),
            noise_sigma=0.1,
            span_grace_ms=3000,
        )
        base = compute_metrics(execute(scenario, harness_cfg(seed=2)), scenario)
        ablated_cfg = harness_cfg(seed=2)
        ablated_cfg.ablations.no_ans_token = True
        ablated_tl = execute(scenario, ablated_cfg)
        ablated = compute_metrics(ablated_tl, scenario)
        assert ablated.fp > base.fp
        # The extra responses all come after the first answer.
        answers = sorted(
            e.payload["trigger_t_ms"] for e in ablated_tl.of_kind(ANSWER_EMITTED)
        )
        first = answers[0]
        assert sum(1 for t in answers if t > first) >= ablated.fp

    def test_disabling_silent_filter_strictly_increases_false_positives(self):
        # Spurious-trigger scorer: a zero head responds at every clip; the
        # silent filter should absorb the flat-retrieval triggers.
        scenario = make_planted_scenario(
            23,
            dim=16,
            n_segments=6,
            relevant_indices=(4,),
            irrelevant_frames=(6,),
            noise_sigma=0.1,
            span_grace_ms=3000,
        )

        def spurious_cfg():
            cfg = harness_cfg("heuristic", latency_ms=500, seed=5)
            cfg.retrieval = RetrievalConfig(temperature=1.0)
            cfg.reaction = ReactionConfig(
                silent_margin=2.0, latency=LatencyModel(kind="fixed", ms=500)
            )
            return cfg

        filtered_tl = execute(scenario, spurious_cfg())
        filtered = compute_metrics(filtered_tl, scenario)
        ablated_cfg = spurious_cfg()
        ablated_cfg.ablations.no_silent_token = True
        ablated = compute_metrics(execute(scenario, ablated_cfg), scenario)
        assert filtered_tl.of_kind("Silent"), "filter must fire on spurious triggers"
        assert ablated.fp > filtered.fp


class TestDeterminism:
    """Fixed seeds reproduce byte-identical timeline and report files."""

    def test_run_and_compare_reproduce_identical_files(self, tmp_path):
        corpus_dir = tmp_path / "corpus"
        assert cli_main(["synth", "--out", str(corpus_dir), "--count", "3", "--seed", "7"]) == 0
        scenario = str(sorted(corpus_dir.glob("planted_*.json"))[0])
        config = str(corpus_dir / "harness_config.json")

        outputs = []
        for attempt in ("a", "b"):
            timeline = tmp_path / f"timeline_{attempt}.json"
            report = tmp_path / f"report_{attempt}.json"
            compare = tmp_path / f"compare_{attempt}.json"
            assert (
                cli_main(
                    [
                        "run",
                        "--scenario", scenario,
                        "--config", config,
                        "--seed", "13",
                        "--out", str(timeline),
                        "--report", str(report),
                    ]
                )
                == 0
            )
            assert (
                cli_main(
                    [
                        "compare",
                        "--scenario-dir", str(corpus_dir),
                        "--axis", "tokens",
                        "--seed", "13",
                        "--out", str(compare),
                    ]
                )
                == 0
            )
            outputs.append(
                (timeline.read_bytes(), report.read_bytes(), compare.read_bytes())
            )
        assert outputs[0] == outputs[1]


def _harness_config_dict():
    from streamweave.cli import harness_config_dict

    return harness_config_dict()
