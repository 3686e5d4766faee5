"""Command-line entry point: ``mfgvv <subcommand> --config PATH``.

Exit codes: 0 success, 2 configuration error, 3 every cell failed, 4 a ``--check``
threshold was breached.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from .config import load_config
from .errors import ConfigurationError
from .experiments import RUNS, AllCellsFailed

EXIT_OK, EXIT_CONFIG, EXIT_ALL_FAILED, EXIT_CHECK = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfgvv", description="Vanishing-viscosity experiments for 1-D mean field games.")
    ap.add_argument("command", choices=sorted(RUNS))
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--check", action="store_true", help="exit 4 if a configured threshold is breached")
    ap.add_argument("--workers", type=int, default=None, help="process-pool size (default: config value)")
    ap.add_argument("--seed", type=int, default=None, help="base seed for particle and FBSDE runs")
    ap.add_argument("--out", default=None, help="override output.dir")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _summary_lines(command: str, report: dict) -> list[str]:
    lines = [f"{command}: config {report['config_hash']}"]
    if command == "sweep-beta":
        for k, r in report["rates"].items():
            lines.append(f"  slope ({k}) = {r['slope']:.4f}  r^2 = {r['r_squared']:.6f}  points = {r['n_points']}")
        for k, v in sorted(report["reference_slopes"].items()):
            lines.append(f"  reference slope ({k}) = {v}")
        lines.append(f"  numerical viscosity sqrt(2 dx^2/dt) = {report['numerical_viscosity']:.4f}")
    for c in report.get("checks", []):
        lines.append(f"  [{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: {c['value']} vs {c['threshold']}")
    return lines


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg["output"]["dir"] = args.out
        if args.workers is not None and args.workers < 1:
            raise ConfigurationError("--workers must be at least 1")
        run = RUNS[args.command]
        kwargs = {"workers": args.workers}
        if args.command in ("particles", "fbsde"):
            kwargs["seed"] = args.seed
        t0 = time.perf_counter()
        report = run(cfg, **kwargs)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AllCellsFailed as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED
    for line in _summary_lines(args.command, report):
        print(line)
    print(f"  elapsed {time.perf_counter() - t0:.1f}s, outputs in {cfg['output']['dir']}")
    if args.check and not all(c["passed"] for c in report.get("checks", [])):
        failed = [c["name"] for c in report["checks"] if not c["passed"]]
        print(f"threshold breach: {json.dumps(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
