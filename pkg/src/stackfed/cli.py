"""Command-line interface.

Two subcommands:

  stackfed run     --config cfg.json [--strategy aswm] [--seed 1] ...
  stackfed compare --config cfg.json --strategies fedavg,dswm,aswm ...

The config file is a flat JSON object whose keys are the ExperimentConfig
fields; every key can also be overridden by the matching flag. ``compare``
always runs the fedavg baseline as reference even when it is not listed.
Exit code 0 means every repetition succeeded.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from .errors import StackfedError
from .harness import ExperimentConfig, compare_strategies, emit_results, run_experiment
from .strategies import STRATEGY_TAGS


def _csv_floats(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _csv_ints(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _sigma_arg(text: str):
    values = _csv_floats(text)
    return values[0] if len(values) == 1 else values


# flag name -> (config field, parser) for everything beyond plain int/float/str
_SPECIAL_FLAGS = {
    "target_sizes": _csv_floats,
    "split_fractions": _csv_floats,
    "hidden_sizes": _csv_ints,
    "noise_sigma": _sigma_arg,
}
_FLAG_ALIASES = {"base_seed": "seed", "out_dir": "out"}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in fields(ExperimentConfig):
        flag = "--" + _FLAG_ALIASES.get(f.name, f.name).replace("_", "-")
        kwargs: dict = {"default": None, "dest": f.name}
        if f.name in _SPECIAL_FLAGS:
            kwargs["type"] = _SPECIAL_FLAGS[f.name]
            kwargs["metavar"] = "A,B,..."
        elif f.name == "strategy":
            kwargs["choices"] = STRATEGY_TAGS
        elif f.type in ("int", int):
            kwargs["type"] = int
        elif f.type in ("float", float):
            kwargs["type"] = float
        else:
            kwargs["type"] = str
        parser.add_argument(flag, **kwargs)


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    if args.config:
        values.update(ExperimentConfig.from_file(args.config).__dict__)
    for f in fields(ExperimentConfig):
        override = getattr(args, f.name, None)
        if override is not None:
            values[f.name] = override
    return ExperimentConfig.from_dict(values)


def _report(table, out_dir: str) -> int:
    emit_results(table, "csv", out_dir)
    emit_results(table, "json", Path(out_dir) / "results.json")
    for row in table.summary:
        delta = "" if row.delta_vs_fedavg_pct is None else f"  delta_vs_fedavg={row.delta_vs_fedavg_pct:+.2f}%"
        print(
            f"{row.strategy:>9}  node {row.node_id} ({row.role:<8})  "
            f"auc {row.mean_auc:.4f} +/- {row.std_auc:.4f}  loss {row.mean_loss:.4f}{delta}"
        )
    for failure in table.failures:
        print(f"FAILED {failure.strategy} rep {failure.rep}: {failure.error}", file=sys.stderr)
    print(f"wrote results.csv, summary.csv, results.json to {out_dir}")
    return 1 if table.failures else 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="stackfed",
        description="Federated learning simulator with game-theoretic contribution weighting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="run one strategy over all repetitions")
    run_parser.add_argument("--config", default=None, help="flat JSON config file")
    _add_config_flags(run_parser)

    cmp_parser = sub.add_parser("compare", help="run several strategies on identical data")
    cmp_parser.add_argument("--config", default=None, help="flat JSON config file")
    cmp_parser.add_argument(
        "--strategies",
        default=",".join(STRATEGY_TAGS),
        help="comma-separated strategy tags (fedavg is always added as reference)",
    )
    _add_config_flags(cmp_parser)

    args = parser.parse_args(argv)
    try:
        config = _build_config(args)
        if args.command == "run":
            table = run_experiment(config)
        else:
            tags = [t.strip() for t in args.strategies.split(",") if t.strip()]
            table = compare_strategies(config, tags)
        return _report(table, config.out_dir)
    except (StackfedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
