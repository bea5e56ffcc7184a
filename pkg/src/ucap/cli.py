"""Command-line entry point: ``ucap <command> [--config FILE] [overrides]``."""

import argparse
import logging
import sys
import time

from . import pipeline
from .config import FIELDS, ConfigError, parse_config

COMMANDS = ("gen-world", "init-pipeline", "train", "generate", "evaluate", "all")

log = logging.getLogger("ucap")


def _add_overrides(parser):
    for name, f in FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if name == "out_dir":
            parser.add_argument("--out", "--out-dir", dest=name, help=f.metadata["help"])
        elif f.type is bool:
            parser.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction,
                                default=None, help=f.metadata["help"] or None)
        else:
            parser.add_argument(flag, dest=name, default=None, metavar=f.type.__name__.upper(),
                                help=f.metadata["help"] or None)


def build_parser():
    parser = argparse.ArgumentParser(prog="ucap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="sectioned key = value config file")
        sp.add_argument("-v", "--verbose", action="store_true")
        _add_overrides(sp)
    return parser


def _progress(tr, rec):
    if rec["step"] % 25 == 0:
        log.info("step %d  l_adv=%.4f l_im=%.4f l_sen=%.4f r_c=%.3f concepts=%.3f", rec["step"],
                 rec["l_adv"], rec["l_im"], rec["l_sen"], rec["mean_r_c"], rec["avg_concepts"])


def run(command, cfg):
    """Execute one stage (or all of them, in order)."""
    pipeline.echo_config(cfg)
    stages = {
        "gen-world": lambda: pipeline.gen_world(cfg),
        "init-pipeline": lambda: pipeline.run_init(cfg),
        "train": lambda: pipeline.run_train(cfg, _progress),
        "generate": lambda: pipeline.run_generate(cfg),
        "evaluate": lambda: pipeline.run_evaluate(cfg),
    }
    if command == "all":
        order = list(stages)
        if not cfg.synthetic:
            order.remove("gen-world")
        if cfg.skip_init:
            order.remove("init-pipeline")
    else:
        order = [command]
    result = None
    for name in order:
        t0 = time.perf_counter()
        result = stages[name]()
        log.info("%s finished in %.1fs", name, time.perf_counter() - t0)
    return result


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in FIELDS}
    try:
        cfg = parse_config(args.config, overrides)
        report = run(args.command, cfg)
    except (ConfigError, pipeline.StageError) as exc:
        print(f"ucap {args.command}: error: {exc}", file=sys.stderr)
        return 2
    if args.command in ("evaluate", "all") and report is not None:
        print(report.to_json())
    return 0


if __name__ == "__main__":
    sys.exit(main())
