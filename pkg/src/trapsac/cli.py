"""Command line entry point: ``trapsac {demo-collect,train,eval,rollout}``.

Settings resolve in this order, later wins: preset, ``--config`` file,
``TRAPSAC_<SECTION>_<KEY>`` environment variables, ``--set section.key=value``
and finally the dedicated flags (``--seed``, ``--episodes``, ...).
"""

import argparse
from dataclasses import replace
import logging
import sys

from . import _accel
from .config import (
    PRESETS, ConfigError, ExperimentConfig, apply_assignments, apply_environ, apply_file, dump,
    preset,
)
from .demos import DemoFormatError, ReplayConfigError
from .sac import SacConfigError

log = logging.getLogger("trapsac")

EXIT_OK = 0
EXIT_ERROR = 1

_ERRORS = (ConfigError, DemoFormatError, ReplayConfigError, SacConfigError, OSError, ValueError)


def build_config(args) -> ExperimentConfig:
    cfg = preset(args.preset)
    if args.config:
        cfg = apply_file(cfg, args.config)
    cfg = apply_environ(cfg)
    cfg = apply_assignments(cfg, args.set)
    flags = {}
    if args.seed is not None:
        flags["seed"] = args.seed
    for name in ("episodes", "demo_episodes", "eval_episodes", "eval_every"):
        if getattr(args, name, None) is not None:
            flags[name] = getattr(args, name)
    mode = getattr(args, "demo_mode", None)
    if mode is not None:
        # the mode and the buffer switch only make sense together
        flags["demo_mode"] = mode
        flags["demo_buffer"] = mode != "none"
    if getattr(args, "demos", None):
        flags["demo_path"] = args.demos
    return replace(cfg, **flags) if flags else cfg


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", default="sac", choices=sorted(PRESETS),
                   help="ablation preset (default: sac)")
    p.add_argument("--config", metavar="FILE", help="INI file with [section] key = value lines")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one setting; repeatable")
    p.add_argument("--seed", type=int)
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved configuration and exit")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trapsac", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-collect", help="roll out the rule demonstrator, save a dataset")
    _common(p)
    p.add_argument("--out", required=True, help="demonstration file to write")
    p.add_argument("--csv", help="also export the transitions as CSV")
    p.add_argument("--episodes", dest="demo_episodes", type=int)
    p.add_argument("--deterministic", action="store_true",
                   help="always take the rule action (no off-rule sampling)")

    p = sub.add_parser("train", help="train an agent and write metrics and a checkpoint")
    _common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--episodes", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int)
    p.add_argument("--demo-mode", choices=("none", "margin", "reward-aug"))
    p.add_argument("--demos", metavar="FILE", help="demonstration file (collected if omitted)")

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint or of the rule preset")
    _common(p)
    p.add_argument("--checkpoint", help="checkpoint.npz written by train")
    p.add_argument("--episodes", dest="eval_episodes", type=int)
    p.add_argument("--csv", help="per-episode metrics CSV")

    p = sub.add_parser("rollout", help="export one episode as a trajectory CSV")
    _common(p)
    p.add_argument("--out", required=True, help="trajectory CSV to write")
    p.add_argument("--policy", default="rule", choices=("rule", "stochastic-rule", "agent"))
    p.add_argument("--checkpoint")
    p.add_argument("--episode", type=int, default=0, help="episode index (selects the seed)")
    p.add_argument("--stochastic", action="store_true", help="sample agent actions")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = build_config(args)
        if args.print_config:
            print(dump(cfg))
            return EXIT_OK
        log.info("kernel backend: %s", _accel.backend())
        return _dispatch(args, cfg)
    except _ERRORS as exc:
        print(f"trapsac: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _dispatch(args, cfg: ExperimentConfig) -> int:
    from . import train

    if args.command == "demo-collect":
        data = train.run_demo_collect(cfg, args.out, args.deterministic, args.csv)
        print(f"demonstrations: {len(data.episode_success)} episodes, {len(data)} transitions, "
              f"success rate {100.0 * data.success_rate:.1f}%")
        return EXIT_OK

    if args.command == "train":
        result = train.run_train(cfg, args.out, progress=args.verbose)
        final = result.final_eval
        if final is not None:
            print(final.table_row(args.preset))
        print(f"wrote {result.out_dir}")
        return EXIT_OK

    if args.command == "eval":
        _, summary = train.run_eval(cfg, args.checkpoint, None, args.csv)
        label = "rule" if cfg.rule_only else args.preset
        print(summary.table_row(label))
        return EXIT_OK

    if args.command == "rollout":
        rec = train.rollout(cfg, args.out, args.policy, args.checkpoint, args.episode,
                            greedy=not args.stochastic)
        print(f"episode {rec.episode}: success {int(rec.success)} collision {int(rec.collision)} "
              f"reward {rec.accumulated_reward:.3f} distance {rec.travel_distance:.1f}")
        return EXIT_OK

    raise ConfigError(f"unknown command {args.command}")  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
