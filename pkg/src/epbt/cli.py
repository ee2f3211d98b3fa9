"""Command-line front end.

Subcommands:
    run         execute a configured experiment (EPBT or a baseline)
    dry-run     print the evaluation counters a config would produce
    loss-curve  project a loss-coefficient vector to a 2D curve (CSV + PNG)
    ancestry    dump the lineage of an individual from a finished run

Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import plots
from .errors import ConfigError, DataFormatError
from .evolution import predict_counters
from .experiment import GENERATIONS_LOG, read_generations_jsonl, run_from_config
from .population import ancestry_rows, write_ancestry_csv
from .runconfig import load_run_config
from .taylor_loss import LossCurve, project_binary, write_loss_curve_csv

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epbt",
        description="Evolve loss functions and training hyperparameters while training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment from a config file")
    p_run.add_argument("--config", required=True, help="path to the JSON run config")
    p_run.add_argument("--workers", type=int, default=None, help="override the worker count")
    p_run.add_argument(
        "--resume", action="store_true", help="continue from the latest checkpoint"
    )

    p_dry = sub.add_parser("dry-run", help="print evaluation counters without training")
    p_dry.add_argument("--config", required=True)

    p_curve = sub.add_parser("loss-curve", help="dump a 2D projection of a loss vector")
    p_curve.add_argument(
        "--theta", nargs=8, type=float, required=True, metavar="V", help="eight coefficients"
    )
    p_curve.add_argument("--resolution", type=int, default=101)
    p_curve.add_argument("--out", required=True, help="output CSV path (PNG written alongside)")

    p_anc = sub.add_parser("ancestry", help="dump an individual's lineage from a run directory")
    p_anc.add_argument("--run", required=True, help="run directory containing generations.jsonl")
    p_anc.add_argument("--id", type=int, required=True, help="individual id to trace")
    p_anc.add_argument("--resolution", type=int, default=101, help="loss-curve sampling density")
    return parser


def _cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
        cfg.validate()
    summary = run_from_config(cfg, resume=args.resume)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_dry_run(args) -> int:
    cfg = load_run_config(args.config)
    counters = predict_counters(cfg.strategy, cfg.to_evolution_config())
    print(f"strategy: {cfg.strategy}")
    print(f"unique genomes to evaluate: {counters.genomes_evaluated}")
    print(f"training epochs (actually run): {counters.epochs_trained}")
    print(f"training epochs (accounted budget): {counters.epochs_accounted}")
    return EXIT_OK


def _cmd_loss_curve(args) -> int:
    if args.resolution < 2:
        raise ConfigError("resolution must be at least 2")
    curve = project_binary(args.theta, args.resolution)
    out = Path(args.out)
    write_loss_curve_csv(curve, out)
    plots.save_loss_curve_plot(curve, out.with_suffix(".png"))
    print(f"wrote {out} and {out.with_suffix('.png')}")
    return EXIT_OK


def _cmd_ancestry(args) -> int:
    run_dir = Path(args.run)
    records = read_generations_jsonl(run_dir / GENERATIONS_LOG)
    try:
        rows = ancestry_rows(records, args.id)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    out_dir = run_dir / f"ancestry_{args.id}"
    out_dir.mkdir(parents=True, exist_ok=True)
    write_ancestry_csv(rows, out_dir / "ancestry.csv")
    curves: list[tuple[str, LossCurve]] = []
    for row in rows:
        curve = project_binary(row.genome.theta, args.resolution)
        name = f"loss_curve_gen{row.generation:03d}_id{row.id}.csv"
        write_loss_curve_csv(curve, out_dir / name)
        curves.append((f"gen {row.generation} (id {row.id})", curve))
    plots.save_ancestry_plot(
        curves, out_dir / "ancestry.png", title=f"lineage of individual {args.id}"
    )
    print(f"wrote {len(rows)} ancestors to {out_dir}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "dry-run": _cmd_dry_run,
        "loss-curve": _cmd_loss_curve,
        "ancestry": _cmd_ancestry,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
