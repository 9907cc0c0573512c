"""Command-line entry point: ``plinfer {gen-ref,run,sweep,report}``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import runner
from .runner import ConfigError
from .textio import read_metrics, write_table

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("plinfer")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML file overlaid on the desk profile")
    p.add_argument("--profile", help="named base profile shipped with the package (desk, full)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output root (default ${runner.OUTPUT_ENV} or ./runs)")
    p.add_argument("--threads", type=int)
    p.add_argument("--task")
    p.add_argument("--method")
    p.add_argument("--n-obs", type=int, dest="n_obs")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. pli.iterations=5 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plinfer", description="Pseudo-likelihood inference experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("gen-ref", help="simulate and store reference observations"))
    _common(sub.add_parser("run", help="execute one configured run"))
    sw = sub.add_parser("sweep", help="run or collect a task x method x N x seed grid")
    _common(sw)
    sw.add_argument("--collect-only", action="store_true", help="aggregate existing rows without running")
    rp = sub.add_parser("report", help="aggregate the metrics table over seeds")
    rp.add_argument("--out")
    return parser


def _config(args) -> dict:
    cfg = runner.load_config(args.config, args.profile, args.set)
    for key in ("seed", "threads", "task", "method", "n_obs"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _emit(table, columns, path: Path):
    text = write_table(path, table, columns)
    sys.stdout.write(text)


def cmd_gen_ref(args) -> int:
    cfg = _config(args)
    rc = runner.validate(cfg)
    root = runner.output_root(args.out)
    runner.generate_reference(runner.build_task(cfg), rc.n_obs, rc.seed, root)
    for path in runner.reference_paths(root, rc.task, rc.n_obs, rc.seed):
        if path.exists():
            print(path)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    runner.validate(cfg)
    manifest = runner.run(cfg, args.out)
    print(f"{manifest['status']}: {manifest['metrics']['task']}/{manifest['metrics']['method']} "
          f"N={manifest['metrics']['N']} seed={manifest['master_seed']} "
          f"({manifest['wall_seconds']:.1f} s)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    grid = cfg.pop("grid", None) or {}
    root = runner.output_root(args.out)
    table, missing = runner.sweep(cfg, grid, root, execute=not args.collect_only)
    if not runner.grid_cells(grid, cfg):
        log.warning("empty grid: nothing to run")
    for cell in missing:
        log.warning("missing cell: task=%s method=%s N=%s seed=%s", *cell)
    _emit(table, runner.aggregate_columns(), root / "aggregate.csv")
    return EXIT_RUNTIME if missing and not args.collect_only else EXIT_OK


def cmd_report(args) -> int:
    root = runner.output_root(args.out)
    rows = read_metrics(root / "metrics.csv")
    if not rows:
        log.warning("no metrics rows under %s", root)
    _emit(runner.aggregate(rows), runner.aggregate_columns(), root / "aggregate.csv")
    return EXIT_OK


COMMANDS = {"gen-ref": cmd_gen_ref, "run": cmd_run, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure inside a run maps to one exit code
        log.error("run failed: %s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
