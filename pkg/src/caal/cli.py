"""Command-line front end.

    caal run CONFIG [--output DIR]
    caal sweep CONFIG --param beta|lambda --values 0,1,10
    caal compare CONFIG --strategies caal,qbc,random
    caal chi POPULATION.csv [--grouping chemical|optical]
    caal vr DIAMETERS.csv

Failures print one JSON object on stderr and exit with 2 (config), 3 (data),
4 (numeric) or 5 (I/O).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import aerosol
from .acquisition import STRATEGIES
from .bench import MatchResult, curve_to_match
from .config import ExperimentConfig, load_config
from .errors import CaalError, ConfigError, DataError, NumericError
from .loop import run_experiment, write_outputs

OUTPUT_ROOT_ENV = "CAAL_OUTPUT_ROOT"
EXIT_IO = 5
SWEEP_PARAMS = {"beta": ("strategy", "beta"), "lambda": ("objective", "lambda")}

log = logging.getLogger("caal")


def output_dir_for(config: ExperimentConfig, explicit=None) -> Path:
    """Resolve where a run writes. Relative paths hang off $CAAL_OUTPUT_ROOT when set."""
    target = explicit or config.output_dir or str(Path("runs") / config.hash())
    target = Path(target)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not target.is_absolute():
        target = Path(root) / target
    return target


def _read_config(path) -> ExperimentConfig:
    cfg = load_config(path)
    if cfg.data.source == "csv" and not Path(cfg.data.csv_path).is_absolute():
        # csv paths are relative to the config file
        resolved = str((Path(path).parent / cfg.data.csv_path).resolve())
        cfg = cfg.with_overrides("data", path=resolved)
    return cfg


def _run_one(config: ExperimentConfig, out: Path):
    # Everything is computed before anything is written, so a failed run leaves no files.
    result = run_experiment(config)
    write_outputs(result, config, out)
    return result.curve


def cmd_run(args) -> int:
    cfg = _read_config(args.config)
    out = output_dir_for(cfg, args.output)
    curve = _run_one(cfg, out)
    last = curve.records[-1]
    print(f"wrote {out / 'learning_curve.csv'} rounds={len(curve.records)} "
          f"final_r2={last.r2:.6g} final_rmse={last.rmse:.6g}")
    return 0


def parse_values(text: str) -> list:
    try:
        values = [float(v) for v in text.split(",")] if text.strip() else []
    except ValueError as exc:
        raise ConfigError(f"cannot parse sweep values {text!r}") from exc
    if not values:
        raise ConfigError("sweep needs at least one value")
    if len(set(values)) != len(values):
        raise ConfigError(f"duplicate sweep values in {text!r}")
    return values


def _fan_out(jobs, n_workers):
    """Run (config, out) pairs, optionally in worker processes; results keep input order."""
    if n_workers <= 1 or len(jobs) <= 1:
        return [_run_one(cfg, out) for cfg, out in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(_run_one, cfg, out) for cfg, out in jobs]
        return [f.result() for f in futures]


def _write_summary(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_sweep(args) -> int:
    cfg = _read_config(args.config)
    values = parse_values(args.values)
    section, key = SWEEP_PARAMS[args.param]
    root = output_dir_for(cfg, args.output)
    jobs = []
    for v in values:
        sub = cfg.with_overrides(section, **{key: v})
        jobs.append((sub, root / f"{args.param}_{v:g}"))
    curves = _fan_out(jobs, args.jobs)
    rows = []
    for v, (sub, _), curve in zip(values, jobs, curves):
        rows.append([repr(v), repr(curve.best_r2()), repr(curve.best_rmse()), sub.hash()])
    _write_summary(root / "summary.csv", ("value", "best_r2", "best_rmse", "config_hash"), rows)
    print(f"wrote {root / 'summary.csv'} ({len(rows)} runs)")
    return 0


def cmd_compare(args) -> int:
    cfg = _read_config(args.config)
    names = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if not names:
        raise ConfigError("compare needs at least one strategy")
    if len(set(names)) != len(names):
        raise ConfigError("duplicate strategies")
    bad = [s for s in names if s not in STRATEGIES]
    if bad:
        raise ConfigError(f"unknown strategies {bad}; choose from {list(STRATEGIES)}")
    root = output_dir_for(cfg, args.output)
    jobs = [(cfg.with_overrides("strategy", kind=s), root / s) for s in names]
    curves = _fan_out(jobs, args.jobs)
    rows = []
    for s, (sub, _), curve in zip(names, jobs, curves):
        last = curve.records[-1]
        match = curve_to_match(curve) if curve.r2_full is not None else MatchResult(None, None)
        rows.append([s, repr(curve.best_r2()), repr(curve.best_rmse()), repr(last.r2), repr(last.rmse),
                     str(match), sub.hash()])
    _write_summary(root / "summary.csv",
                   ("strategy", "best_r2", "best_rmse", "final_r2", "final_rmse", "data_to_match",
                    "config_hash"), rows)
    print(f"wrote {root / 'summary.csv'} ({len(rows)} strategies)")
    return 0


def cmd_chi(args) -> int:
    header, masses = aerosol.read_table(args.population)
    if args.grouping == "optical":
        masses = aerosol.merge_species(masses, header, aerosol.optical_groups(header))
    res = aerosol.mixing_state_index(masses)
    extra = " degenerate=1" if res.degenerate else ""
    print(f"chi={res.chi:.10g} D_alpha={res.D_alpha:.10g} D_gamma={res.D_gamma:.10g}{extra}")
    return 0


def cmd_vr(args) -> int:
    header, table = aerosol.read_table(args.diameters)
    try:
        Dp, Dc = table[:, header.index("Dp")], table[:, header.index("Dc")]
    except ValueError as exc:
        raise DataError(f"{args.diameters}: need columns Dp and Dc") from exc
    print(f"VR={aerosol.coating_volume_ratio(Dp, Dc):.10g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="caal", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-round progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one active-learning experiment")
    r.add_argument("config")
    r.add_argument("--output", help="output directory (overrides output_dir in the config)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="repeat a run over beta or lambda values")
    s.add_argument("config")
    s.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    s.add_argument("--values", required=True, help="comma separated, e.g. 0,1,10")
    s.add_argument("--output")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", help="run several strategies on one config")
    c.add_argument("config")
    c.add_argument("--strategies", required=True)
    c.add_argument("--output")
    c.add_argument("--jobs", type=int, default=1)
    c.set_defaults(func=cmd_compare)

    x = sub.add_parser("chi", help="mixing-state index of a particle population")
    x.add_argument("population", help="CSV, one row per particle, one column per species mass")
    x.add_argument("--grouping", choices=("chemical", "optical"), default="chemical")
    x.set_defaults(func=cmd_chi)

    v = sub.add_parser("vr", help="coating volume ratio from Dp, Dc columns")
    v.add_argument("diameters")
    v.set_defaults(func=cmd_vr)
    return p


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "exit_code": code, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else _fail(2, "usage", "invalid command line")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(over="ignore", under="ignore"):
            return args.func(args)
    except CaalError as exc:
        return _fail(exc.exit_code, exc.kind, str(exc))
    except FloatingPointError as exc:
        return _fail(NumericError.exit_code, "numeric", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
