"""``emojitransfer`` command line.

Exit codes: 0 success, 1 partial success (row-level input errors),
2 config error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from emojitransfer import pipeline
from emojitransfer.errors import ConfigError, DataError
from emojitransfer.pipeline import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_RUNTIME, ExperimentConfig

log = logging.getLogger("emojitransfer")

STAGES = ("preprocess", "embed", "cluster", "build-st", "run")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    default = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=default, help="experiment config (JSON)")
    p.add_argument("--jobs", type=int, default=argparse.SUPPRESS if suppress else 1,
                   help="upper bound on worker processes")
    p.add_argument("--seed", type=int, default=default, help="override the master seed")
    p.add_argument("--out", type=Path, default=default, help="override the output directory")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emojitransfer", parents=[_global_flags(False)],
                                     description="Emoji-based source tasks and encoder transfer experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    flags = _global_flags(True)
    sub.add_parser("preprocess", parents=[flags], help="tokenize and normalize each language corpus")
    sub.add_parser("embed", parents=[flags], help="train CBOW embeddings on the source-task corpus")
    sub.add_parser("cluster", parents=[flags], help="build emoji inventories and cluster specs")
    sub.add_parser("build-st", parents=[flags], help="emit the selected source-task datasets")
    sub.add_parser("run", parents=[flags], help="baseline and transfer runs over all seeds")
    rep = sub.add_parser("report", parents=[flags], help="print a finished report")
    rep.add_argument("--format", choices=("text", "json", "tsv"), default="text")
    sub.add_parser("all", parents=[flags], help="run every stage in order")
    syn = sub.add_parser("synth", help="write synthetic fixtures and a matching config")
    syn.add_argument("directory", type=Path)
    syn.add_argument("--n-source", type=int, default=4000)
    syn.add_argument("--n-tt", type=int, default=300)
    syn.add_argument("--seed", type=int, default=0)
    return parser


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    overrides = {"master_seed": args.seed}
    if args.out is not None:
        overrides["output_dir"] = str(args.out.resolve())
    return ExperimentConfig.load(args.config, **overrides)


def _dispatch(args) -> int:
    if args.command == "synth":
        from emojitransfer.synthetic import write_fixtures

        print(write_fixtures(args.directory, args.n_source, args.n_tt, args.seed))
        return EXIT_OK
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    cfg = _load_config(args)
    if args.command == "report":
        sys.stdout.write(pipeline.cmd_report(cfg, args.format))
        return EXIT_OK
    steps = STAGES if args.command == "all" else (args.command,)
    if "run" in steps:
        cfg.require_target_tasks()
    worst = EXIT_OK
    for step in steps:
        log.info("stage %s", step)
        if step == "preprocess":
            code = pipeline.cmd_preprocess(cfg)
        elif step == "embed":
            code = pipeline.cmd_embed(cfg)
        elif step == "cluster":
            code = pipeline.cmd_cluster(cfg)
        elif step == "build-st":
            code = pipeline.cmd_build_st(cfg)
        else:
            code = pipeline.cmd_run(cfg, args.jobs)
            sys.stdout.write(pipeline.cmd_report(cfg, "text"))
        worst = max(worst, code)
    return worst


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    verbosity = getattr(args, "verbose", 0) or 0
    logging.basicConfig(level=logging.DEBUG if verbosity > 1 else logging.INFO if verbosity else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
