"""Command-line entry point: train, ablate, eval, dump-dataset, show-schedule.

Exit codes: 0 success, 2 invalid config or usage, 3 missing file, 1 runtime
failure. Errors print one line to stderr as ``error [category]: message``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .concepts import dataset_text, dump_dataset
from .config import ConfigError, apply_overrides, load_config, validate_config
from .runs import (RunDirectory, build_components, default_out_root, execute_ablate,
                   execute_eval, execute_train, export_schedule_text)
from .trainer import TrainingDiverged


def _resolved_config(args) -> dict:
    cfg = load_config(args.config)
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return validate_config(cfg)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="YAML config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, repeatable")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpgdiff",
        description="Train and evaluate desk-scale diffusion policies with "
                    "critic-estimated rewards.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training configuration")
    _add_common(p_train)
    p_train.add_argument("--out", type=Path, default=None, help="run directory")
    p_train.add_argument("--no-figures", action="store_true",
                         help="skip figure rendering")

    p_ablate = sub.add_parser("ablate", help="Cartesian grid of runs + comparison table")
    _add_common(p_ablate)
    p_ablate.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                          help="grid axis as comma-separated values, repeatable")
    p_ablate.add_argument("--out", type=Path, default=None, help="grid root directory")
    p_ablate.add_argument("--no-figures", action="store_true")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint of an existing run")
    p_eval.add_argument("--run", type=Path, required=True, help="run directory")
    p_eval.add_argument("--checkpoint", default="final")
    p_eval.add_argument("--seed", type=int, default=None, help="evaluation noise seed")
    p_eval.add_argument("--no-figures", action="store_true")

    p_dump = sub.add_parser("dump-dataset", help="write the config's reference set")
    _add_common(p_dump)
    p_dump.add_argument("--out", type=Path, default=None,
                        help="output file (default: stdout)")

    p_sched = sub.add_parser("show-schedule", help="print the noise-schedule table")
    _add_common(p_sched)
    p_sched.add_argument("--out", type=Path, default=None,
                         help="output file (default: stdout)")
    return parser


def _parse_grid(items: list[str]) -> dict[str, list]:
    import yaml

    grid: dict[str, list] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(item, "grid axis must look like key.path=v1,v2")
        key, raw = item.split("=", 1)
        values = [yaml.safe_load(v) for v in raw.split(",") if v != ""]
        if not values:
            raise ConfigError(key, "grid axis has no values")
        grid[key] = values
    return grid


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            cfg = _resolved_config(args)
            run = execute_train(cfg, args.out, render=not args.no_figures)
            print(run.path)
        elif args.command == "ablate":
            cfg = _resolved_config(args)
            grid = _parse_grid(args.grid)
            if not grid:
                raise ConfigError("--grid", "at least one grid axis is required")
            cells = execute_ablate(cfg, grid, args.out, render=not args.no_figures)
            for cell in cells:
                print(cell.path)
        elif args.command == "eval":
            out = execute_eval(args.run, args.checkpoint, args.seed,
                               render=not args.no_figures)
            print(out)
        elif args.command == "dump-dataset":
            cfg = _resolved_config(args)
            refs = build_components(cfg)["refs"]
            if args.out is None:
                sys.stdout.write(dataset_text(refs))
            else:
                dump_dataset(args.out, refs)
                print(args.out)
        elif args.command == "show-schedule":
            cfg = _resolved_config(args)
            text = export_schedule_text(cfg)
            if args.out is None:
                sys.stdout.write(text)
            else:
                Path(args.out).write_text(text)
                print(args.out)
    except ConfigError as e:
        print(f"error [config-invalid]: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error [not-found]: {e}", file=sys.stderr)
        return 3
    except TrainingDiverged as e:
        print(f"error [diverged]: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error [runtime]: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
