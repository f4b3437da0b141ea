"""Command-line entry point: ``bro <command> --config FILE [--seed S] [--scale small|paper] [--out DIR]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as C
from .errors import ConfigError, DomainError
from .experiments import RUNNERS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bro", description="Bayesian risk optimization experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in C.COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment configuration")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--scale", choices=("small", "paper"), default=None, help="apply a scale preset from the config")
        p.add_argument("--out", default="out", help="output directory")
    return parser


def run(command: str, config_path, seed=None, scale=None, out="out") -> dict[str, str]:
    cfg = C.load_config(config_path, scale, seed)
    C.validate(cfg, command)
    files = RUNNERS[command](cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)
    return files


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        files = run(args.command, args.config, args.seed, args.scale, args.out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except DomainError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    summary = files.get("summary.txt")
    if summary:
        sys.stdout.write(summary)
    print(f"wrote {len(files)} file(s) to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
