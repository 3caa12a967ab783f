"""Command-line entry point: ``sptmle simulate|analyze|selftest``.

Exit codes are 0 on success, 1 on a runtime failure and 2 on a
configuration or input-data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import replace
from importlib import metadata

from . import config as cfgmod
from .exceptions import ConfigError, InputDataError, SptmleError
from .seeding import derive_seed

log = logging.getLogger("sptmle")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _versions() -> dict:
    import numpy
    import scipy

    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover
        pkg = "unknown"
    return {"sptmle": pkg, "python": platform.python_version(), "numpy": numpy.__version__,
            "scipy": scipy.__version__}


def _write(path: str, text: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)


def _write_json(path: str, obj) -> None:
    _write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(command: str, cfg, seeds: dict, started: float, outputs: list, threads: int) -> dict:
    return {
        "report_type": "manifest",
        "command": command,
        "config": cfg.to_dict(),
        "seeds": seeds,
        "threads": threads,
        "versions": _versions(),
        "wall_time_s": round(time.time() - started, 3),
        "outputs": sorted(outputs),
    }


def _load_section(path: str, section: str):
    cfg = cfgmod.load(path)
    part = getattr(cfg, section)
    if part is None:
        raise ConfigError(f"config has no {section!r} section", section, 1)
    return cfg, part


def cmd_simulate(args) -> int:
    from .ingest import write_dataset_csv
    from .simlab import monte_carlo, simulate_dataset

    started = time.time()
    cfg, sim = _load_section(args.config, "simulate")
    scenarios = sim.scenarios
    if args.seed is not None:
        # one override seed, distinct streams per scenario
        scenarios = [replace(sc, master_seed=derive_seed(args.seed, sc.name) % (2 ** 63)) for sc in scenarios]
        cfg.simulate.scenarios = scenarios
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = []
    table = None
    for sc in scenarios:
        log.info("scenario %s: %d reps of n=%d", sc.name, sc.reps, sc.n)
        part = monte_carlo(sc, workers=args.threads)
        if table is None:
            table = part
        else:
            table.extend(part)
    _write(os.path.join(args.out_dir, "metrics.csv"), table.to_csv())
    report = table.to_json()
    if args.diagnostics:
        report["failures"] = [{"scenario": s, "estimator": e, "rep": rep, "error": msg}
                              for (s, e), fails in table.failures.items() for rep, msg in sorted(fails.items())]
    _write_json(os.path.join(args.out_dir, "metrics.json"), report)
    outputs += ["metrics.csv", "metrics.json"]
    if args.dump_data or sim.dump_data:
        data_dir = os.path.join(args.out_dir, "data")
        os.makedirs(data_dir, exist_ok=True)
        for sc in scenarios:
            fname = sc.name.replace("/", "_") + ".csv"
            write_dataset_csv(os.path.join(data_dir, fname), simulate_dataset(sc, 0))
            outputs.append(f"data/{fname}")
    if args.figures:
        from .plotting import simulation_figure

        outputs += [os.path.basename(p) for p in simulation_figure(table, args.out_dir)]
    seeds = {sc.name: sc.master_seed for sc in scenarios}
    _write_json(os.path.join(args.out_dir, "manifest.json"),
                _manifest("simulate", cfg, seeds, started, outputs + ["manifest.json"], args.threads))
    print(table.to_csv(), end="")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .analysis import run_analysis

    started = time.time()
    cfg, ana = _load_section(args.config, "analyze")
    if args.seed is not None:
        ana.seed = args.seed
    base = os.path.dirname(os.path.abspath(args.config))
    from threadpoolctl import threadpool_limits

    with threadpool_limits(max(1, args.threads)):
        report = run_analysis(ana, base, diagnostics=args.diagnostics)
    os.makedirs(args.out_dir, exist_ok=True)
    _write(os.path.join(args.out_dir, "comparison.csv"), report.comparison_csv())
    _write_json(os.path.join(args.out_dir, "comparison.json"), report.to_json())
    _write(os.path.join(args.out_dir, "intervals.csv"), report.intervals_csv())
    outputs = ["comparison.csv", "comparison.json", "intervals.csv"]
    if args.figures:
        from .plotting import intervals_figure

        outputs += [os.path.basename(p) for p in intervals_figure(report, args.out_dir)]
    _write_json(os.path.join(args.out_dir, "manifest.json"),
                _manifest("analyze", cfg, {"seed": ana.seed}, started, outputs + ["manifest.json"],
                          args.threads))
    if report.ingest.rows_dropped:
        log.warning("dropped %d of %d rows with missing values", report.ingest.rows_dropped,
                    report.ingest.rows_read)
    print(report.comparison_csv(), end="")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_checks

    failed = 0
    for name, ok, detail in run_checks():
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        failed += not ok
    print(f"{failed} failed" if failed else "all checks passed")
    return EXIT_RUNTIME if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sptmle", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON run configuration")
            p.add_argument("--out-dir", default="out", help="directory for reports (default: out)")
            p.add_argument("--seed", type=int, default=None, help="override the configured seed(s)")
            p.add_argument("--diagnostics", action="store_true", help="include per-fold diagnostics")
            p.add_argument("--figures", action="store_true", help="also render PNG figures (matplotlib)")
        p.add_argument("--threads", type=int, default=1, help="worker processes / BLAS threads (default: 1)")

    p = sub.add_parser("simulate", help="run Monte Carlo scenarios")
    common(p)
    p.add_argument("--dump-data", action="store_true", help="write replication 0 of each scenario as CSV")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("analyze", help="analyze a CSV dataset")
    common(p)
    p.set_defaults(func=cmd_analyze)
    p = sub.add_parser("selftest", help="run fast built-in property checks")
    common(p, needs_config=False)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except (ConfigError, InputDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SptmleError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
