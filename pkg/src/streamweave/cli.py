"""Command-line harness: run scenarios, train heads, compare configs, serve."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .decision import train_decision_head
from .errors import PipelineError
from .metrics import MetricsReport, pooled_metrics
from .orchestrator import execute
from .retrieval import train_retrieval
from .runconfig import RunConfig, config_from_dict, load_config
from .scenario import load_scenario, make_two_scene_scenario, save_scenario
from .training import (
    PLANTED_DECISION_LR,
    PLANTED_RETRIEVAL_LR,
    PLANTED_RETRIEVAL_TEMPERATURE,
    PLANTED_SEGMENTER,
    PLANTED_SILENT_MARGIN,
    build_pooled_sets,
    make_planted_corpus,
)

log = logging.getLogger("streamweave")

EXIT_OK = 0
EXIT_ERROR = 2


def harness_config_dict(seed: int = 0) -> dict:
    """Run-config preset matching the planted scenario corpus."""
    return {
        "mode": "async",
        "seed": seed,
        "segmenter": {
            "mode": "scene",
            "threshold": PLANTED_SEGMENTER["boundary_threshold"],
            "exclusion_window": PLANTED_SEGMENTER["exclusion_window_frames"],
            "min_frames": PLANTED_SEGMENTER["min_clip_frames"],
            "max_frames": PLANTED_SEGMENTER["max_clip_frames"],
        },
        "scorer": {"kind": "oracle"},
        "retrieval": {"policy": "threshold", "alpha": 2.0, "cap": 8,
                      "temperature": PLANTED_RETRIEVAL_TEMPERATURE},
        "reaction": {
            "backend": "mock",
            "silent_margin": PLANTED_SILENT_MARGIN,
            "latency": {"kind": "fixed", "ms": 2000},
        },
    }


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = config_from_dict(harness_config_dict())
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "decision_params", None):
        params = json.loads(Path(args.decision_params).read_text())
        cfg.scorer.kind = "learned"
        cfg.scorer.weights = params["weights"]
        cfg.scorer.bias = params["bias"]
    if getattr(args, "retrieval_params", None):
        params = json.loads(Path(args.retrieval_params).read_text())
        cfg.retrieval.projection = params["projection"]
        cfg.retrieval.temperature = params.get("temperature", cfg.retrieval.temperature)
    cfg.validate()
    return cfg


def _scenario_paths(directory: Path) -> list[Path]:
    return sorted(p for p in directory.glob("*.json") if p.name != "harness_config.json")


def _dump_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        cfg = _load_run_config(args)
        timeline = execute(scenario, cfg)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = pooled_metrics([(timeline, scenario)])
    if args.out:
        timeline.dump(args.out)
        log.info("timeline written to %s", args.out)
    if args.report:
        _dump_json(args.report, report.to_dict())
    print(f"run complete: mode={cfg.mode} events={len(timeline.events)}")
    for line in report.summary_lines():
        print("  " + line)
    return EXIT_OK


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    paths = _scenario_paths(data_dir) if data_dir.is_dir() else []
    if not paths:
        print(f"error: no scenarios found in {args.data}", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg = _load_run_config(args)
        scenarios = [load_scenario(p) for p in paths]
        sets = build_pooled_sets(scenarios, cfg.segmenter)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    if args.target == "decision":
        if not sets.decision:
            print("error: empty decision dataset", file=sys.stderr)
            return EXIT_ERROR
        weights, bias, losses = train_decision_head(
            sets.decision, epochs=args.epochs, lr=args.lr
        )
        payload = {
            "kind": "decision",
            "weights": [float(x) for x in weights],
            "bias": float(bias),
            "loss_curve": losses,
            "epochs": args.epochs,
            "lr": args.lr,
            "samples": len(sets.decision),
        }
        final = losses[-1] if losses else None
    else:
        if not sets.retrieval:
            print("error: empty retrieval dataset", file=sys.stderr)
            return EXIT_ERROR
        projection, losses = train_retrieval(
            sets.retrieval,
            epochs=args.epochs,
            lr=args.lr,
            temperature=cfg.retrieval.temperature,
        )
        payload = {
            "kind": "retrieval",
            "projection": [[float(x) for x in row] for row in projection],
            "temperature": cfg.retrieval.temperature,
            "loss_curve": losses,
            "epochs": args.epochs,
            "lr": args.lr,
            "samples": len(sets.retrieval),
        }
        final = losses[-1] if losses else None
    if args.out:
        _dump_json(args.out, payload)
    print(
        f"trained {args.target} on {payload['samples']} samples"
        + (f"; final loss {final:.6f}" if final is not None else "; epochs=0")
    )
    return EXIT_OK


_TOKEN_ROWS = [
    ("ans=off todo=off silent=off", dict(no_ans_token=True, no_todo_token=True, no_silent_token=True)),
    ("ans=off todo=off silent=on", dict(no_ans_token=True, no_todo_token=True, no_silent_token=False)),
    ("ans=on todo=off silent=on", dict(no_ans_token=False, no_todo_token=True, no_silent_token=False)),
    ("ans=off todo=on silent=on", dict(no_ans_token=True, no_todo_token=False, no_silent_token=False)),
    ("ans=on todo=on silent=off", dict(no_ans_token=False, no_todo_token=False, no_silent_token=True)),
    ("ans=on todo=on silent=on", dict(no_ans_token=False, no_todo_token=False, no_silent_token=False)),
]


def _compare_rows(axis: str, base: dict) -> list[tuple[str, dict]]:
    rows = []
    if axis == "segmenter":
        for label, seg_mode in (("scene-based", "scene"), ("uniform-16", "uniform")):
            cfg = json.loads(json.dumps(base))
            cfg.setdefault("segmenter", {})["mode"] = seg_mode
            rows.append((label, cfg))
    elif axis == "tokens":
        for label, flags in reversed(_TOKEN_ROWS):
            cfg = json.loads(json.dumps(base))
            cfg["ablations"] = flags
            rows.append((label, cfg))
    elif axis == "mode":
        for mode in ("async", "serial"):
            cfg = json.loads(json.dumps(base))
            cfg["mode"] = mode
            rows.append((mode, cfg))
    return rows


_DELTA_FIELDS = ("tvg_f1", "precision", "recall", "caption_token_f1",
                 "perception_stall_ms", "frames_dropped")


def cmd_compare(args) -> int:
    directory = Path(args.scenario_dir)
    paths = _scenario_paths(directory) if directory.is_dir() else []
    if not paths:
        print(f"error: no scenarios found in {args.scenario_dir}", file=sys.stderr)
        return EXIT_ERROR
    base = (
        json.loads(Path(args.config).read_text())
        if args.config
        else harness_config_dict()
    )
    base["seed"] = args.seed
    rows = _compare_rows(args.axis, base)
    if not rows:
        print(f"error: unknown axis {args.axis}", file=sys.stderr)
        return EXIT_ERROR

    try:
        scenarios = [load_scenario(p) for p in paths]
        results: list[tuple[str, MetricsReport]] = []
        for label, cfg_dict in rows:
            cfg = config_from_dict(cfg_dict)
            pairs = [(execute(sc, cfg), sc) for sc in scenarios]
            results.append((label, pooled_metrics(pairs)))
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    baseline = results[0][1].to_dict()
    out_rows = []
    print(f"compare axis={args.axis} scenarios={len(scenarios)} seed={args.seed}")
    header = f"{'config':<28}" + "".join(f"{f:>20}" for f in _DELTA_FIELDS)
    print(header)
    for label, report in results:
        d = report.to_dict()
        deltas = {f: d[f] - baseline[f] for f in _DELTA_FIELDS}
        out_rows.append({"label": label, "metrics": d, "deltas": deltas})
        print(f"{label:<28}" + "".join(f"{d[f]:>20.4f}" for f in _DELTA_FIELDS))
    if args.out:
        _dump_json(
            args.out,
            {"axis": args.axis, "seed": args.seed, "baseline": results[0][0], "rows": out_rows},
        )
    return EXIT_OK


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.profile == "planted":
        scenarios = make_planted_corpus(
            args.count, seed0=args.seed, dim=args.dim, noise_sigma=args.noise,
            frame_period_ms=args.period,
        )
    else:
        scenarios = [
            make_two_scene_scenario(args.seed + i, dim=args.dim, noise_sigma=args.noise,
                                    frame_period_ms=args.period)
            for i in range(args.count)
        ]
    for i, sc in enumerate(scenarios):
        save_scenario(sc, out_dir / f"{args.profile}_{i:03d}.json")
    _dump_json(out_dir / "harness_config.json", harness_config_dict(args.seed))
    print(f"wrote {len(scenarios)} scenarios to {out_dir}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .gateway import serve

    try:
        serve(
            host=args.host,
            port=args.port,
            scenario_dir=Path(args.scenario_dir) if args.scenario_dir else None,
            config=_load_run_config(args) if args.config else None,
        )
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamweave",
        description="Streaming video-QA pipeline: run, train, compare, serve.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and report metrics")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--config")
    p_run.add_argument("--mode", choices=["async", "serial"])
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out", help="timeline JSON output path")
    p_run.add_argument("--report", help="metrics JSON output path")
    p_run.add_argument("--decision-params", help="trained decision head JSON")
    p_run.add_argument("--retrieval-params", help="trained retrieval projection JSON")
    p_run.set_defaults(func=cmd_run)

    p_train = sub.add_parser("train", help="train the decision or retrieval head")
    p_train.add_argument("target", choices=["decision", "retrieval"])
    p_train.add_argument("--data", required=True, help="directory of scenario JSON files")
    p_train.add_argument("--epochs", type=int, default=300)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--config")
    p_train.add_argument("--out", help="parameters JSON output path")
    p_train.set_defaults(func=cmd_train)

    p_cmp = sub.add_parser("compare", help="run a config grid over a scenario set")
    p_cmp.add_argument("--scenario-dir", required=True)
    p_cmp.add_argument("--axis", required=True, choices=["segmenter", "tokens", "mode"])
    p_cmp.add_argument("--seed", type=int, required=True)
    p_cmp.add_argument("--config")
    p_cmp.add_argument("--out")
    p_cmp.set_defaults(func=cmd_compare)

    p_synth = sub.add_parser("synth", help="generate a synthetic scenario corpus")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--count", type=int, default=10)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--dim", type=int, default=16)
    p_synth.add_argument("--noise", type=float, default=0.1)
    p_synth.add_argument("--period", type=int, default=1000)
    p_synth.add_argument("--profile", choices=["planted", "two-scene"], default="planted")
    p_synth.set_defaults(func=cmd_synth)

    p_serve = sub.add_parser("serve", help="serve live sessions over HTTP")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.add_argument("--scenario-dir")
    p_serve.add_argument("--config")
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("STREAMWEAVE_LOG", "error").lower()
    logging.basicConfig(
        level={"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
            level, logging.ERROR
        )
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "lr", "absent") is None:
        args.lr = PLANTED_DECISION_LR if args.target == "decision" else PLANTED_RETRIEVAL_LR
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
