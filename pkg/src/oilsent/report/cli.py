"""Command-line entry point: ``oilsent <stage> --out RUN_DIR``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..extraction import AdapterError, ScoreValidationError
from ..ingestion import IngestionError
from . import config as runconfig
from . import pipeline
from .bundle import emit_report_bundle

STAGES = ("fetch", "extract", "features", "evaluate", "explain", "report", "replay")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oilsent",
                                     description="Weekly oil-news sentiment features and models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--out", type=Path, default=Path("."), help="run directory")
        p.add_argument("--config", type=Path, help="config file (default: RUN_DIR/config.json)")
        p.add_argument("--seed", type=int)
        p.add_argument("--sets", help="comma-separated feature sets")
        p.add_argument("--stub", action="store_true", help="use the offline stub adapters")
    return parser


def _overrides(args) -> dict:
    over: dict = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.stub:
        over["stub"] = True
    if args.sets:
        sets = [s.strip() for s in args.sets.split(",") if s.strip()]
        over["sets"] = sets
    return over


def _load_config(args) -> dict:
    path = args.config or (args.out / runconfig.CONFIG_NAME)
    base = runconfig.load(path) if path.exists() else {}
    if args.config and not path.exists():
        raise runconfig.ConfigError(f"config file {path} does not exist")
    cfg = runconfig._merge(base, _overrides(args))
    if "sets" in cfg and cfg.get("explain", {}).get("set") not in cfg["sets"]:
        cfg.setdefault("explain", {})["set"] = cfg["sets"][0]
    return runconfig.resolve(cfg)


def _fail(kind: str, message: str, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True)
                     + "\n")
    return 1


def dispatch(args) -> dict | None:
    run_dir: Path = args.out
    if args.command == "replay":
        over = _overrides(args)
        seed = over.pop("seed", 0)
        if "sets" in over and "gpt" not in over["sets"]:
            over["explain"] = {"set": over["sets"][0]}
        return pipeline.run_replay(run_dir, seed, over)
    if args.command == "report":
        return {"files": [str(p) for p in emit_report_bundle(run_dir)]}
    cfg = _load_config(args)
    run_dir.mkdir(parents=True, exist_ok=True)
    runconfig.save(run_dir, cfg)
    if args.command == "fetch":
        return pipeline.run_fetch(run_dir, cfg)
    if args.command == "extract":
        return pipeline.run_extract(run_dir, cfg)
    if args.command == "features":
        return pipeline.run_features(run_dir, cfg)
    if args.command == "evaluate":
        reports = pipeline.run_evaluate(run_dir, cfg)
        return {r.feature_set: {"auroc": r.mean("auroc")} for r in reports}
    if args.command == "explain":
        shap = pipeline.run_explain(run_dir, cfg)
        return {"explained_rows": int(shap.values.shape[0])}
    raise AssertionError(args.command)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = dispatch(args)
    except pipeline.MissingInputs as exc:
        return _fail("missing_inputs", str(exc), missing=exc.paths)
    except runconfig.ConfigError as exc:
        return _fail("config", str(exc))
    except (IngestionError, AdapterError, ScoreValidationError) as exc:
        return _fail(type(exc).__name__, str(exc))
    except (OSError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc))
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
