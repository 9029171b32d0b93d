"""Command-line entry point: ``gnno <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from gnno.config import ConfigError, load_config
from gnno.dataset import DataError
from gnno.evaluation import EvaluationError
from gnno.negsampler import SAMPLERS, EmptySupportError
from gnno.witg import GraphFormatError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

STAGE_COMMANDS = {
    "ingest": "ingest",
    "build-graph": "graph",
    "build-overlap": "overlap",
    "train": "train",
    "eval": "eval",
    "analyze": "analyze",
}


class UsageError(Exception):
    pass


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    for flag, key in (("seed", "seed"), ("out", "out"), ("input", "data"), ("window", "window"),
                      ("tau", "tau"), ("preset", "preset")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = str(value)
    if getattr(args, "self_loops", None) is not None:
        out["self_loops"] = str(args.self_loops)
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value experiment config file")
    p.add_argument("--out", help="run directory (artifacts and manifest)")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--preset", choices=["beauty", "toys", "phones"], help="sampler hyper-parameter profile")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--force", action="store_true", help="rebuild cached artifacts with a different config")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnno", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, k-core filter and store an interaction log")
    _common(p)
    p.add_argument("--input", help="interaction log (user, item, timestamp)")

    p = sub.add_parser("build-graph", help="build the weighted item transition graph")
    _common(p)
    p.add_argument("--window", type=int, help="maximum hop distance")
    p.add_argument("--self-loops", dest="self_loops", action="store_const", const=True, default=None)

    p = sub.add_parser("build-overlap", help="build the Jaccard overlap index")
    _common(p)
    p.add_argument("--tau", type=float, help="minimum edge weight kept before overlap")

    for name, text in (("train", "train the recommender"), ("eval", "evaluate the trained model"),
                       ("analyze", "overlap-group similarity histograms")):
        p = sub.add_parser(name, help=text)
        _common(p)

    p = sub.add_parser("run", help="run several pipeline stages")
    _common(p)
    p.add_argument("--stages", default="all", help="comma-separated stages or 'all'")

    p = sub.add_parser("compare", help="train/evaluate one model per sampler and seed")
    _common(p)
    p.add_argument("--samplers", required=True, help=f"comma-separated subset of {','.join(SAMPLERS)}")
    p.add_argument("--seeds", default=None, help="comma-separated seeds (default: --seed)")

    p = sub.add_parser("synth-data", help="write a block-structured synthetic interaction log")
    _common(p)
    p.add_argument("--output", required=True, help="destination log path")
    return parser


def _run(args) -> int:
    from gnno import pipeline

    cfg = load_config(args.config, _overrides(args))
    if args.command in STAGE_COMMANDS:
        stages = [STAGE_COMMANDS[args.command]]
    elif args.command == "run":
        stages = list(pipeline.STAGES) if args.stages == "all" else [s.strip() for s in args.stages.split(",") if s.strip()]
        unknown = set(stages) - set(pipeline.STAGES)
        if unknown:
            raise UsageError(f"unknown stages: {', '.join(sorted(unknown))}")
    elif args.command == "compare":
        samplers = [s.strip() for s in args.samplers.split(",") if s.strip()]
        if not samplers or set(samplers) - set(SAMPLERS):
            raise UsageError(f"--samplers must list one or more of {', '.join(SAMPLERS)}")
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
        result = pipeline.compare_samplers(cfg, samplers, seeds)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.json").write_text(result.to_json() + "\n", encoding="utf-8")
        with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
            result.to_csv(fh)
        for row in result.table:
            cells = "  ".join(f"{c}={row[c]['mean']:.4f}±{row[c]['std']:.4f}" for c in result.columns)
            print(f"{row['sampler']:8s} {cells}")
        return EXIT_OK
    elif args.command == "synth-data":
        from gnno.synthetic import block_records, write_log

        records = block_records(cfg.data.synthetic)
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        with open(args.output, "w", encoding="utf-8") as fh:
            write_log(records, fh, cfg.data.delimiter)
        print(f"wrote {len(records)} interactions to {args.output}")
        return EXIT_OK
    else:
        raise UsageError(f"unknown command {args.command}")

    for result in pipeline.run_pipeline(cfg, stages, force=args.force):
        status = "cached" if result.skipped else f"done in {result.seconds:.2f}s"
        print(f"{result.stage:8s} {status}")
    return EXIT_OK


def main(argv=None) -> int:
    from gnno.pipeline import PipelineError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except (UsageError, ConfigError, PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GraphFormatError, EvaluationError, EmptySupportError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
