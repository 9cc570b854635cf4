#!/usr/bin/env python3
"""
mfbrw command line

    python cli.py spectrum  [--r R] ...      rate profile, pressure curve, spectrum table, summary
    python cli.py check     [--list] ...     acceptance suite
    python cli.py simulate  [--n N] ...      Monte Carlo level-set statistics
    python cli.py oracle    --kind KIND ...  exact desk-scale oracles
"""
import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from acceptance import list_criteria, run_acceptance
from config import CAP_ENV, BrwConfig, reset_config
from errors import ConfigError, MfbrwError, OutOfPhase
from first_passage import clear_solvers
from free_group import LetterCounts
from oracles import (BALL_COLUMNS, LENGTH_COLUMNS, ball_dp, conditional_profile, count_words_by_counts,
                     expected_level_count, length_distribution, log_partition_function)
from rates import PRESSURE_COLUMNS, PROFILE_COLUMNS, clear_rates, get_rates
from run_logger import RunRecorder, pin_or_compare
from simulator import (RAY_COLUMNS, STATS_COLUMNS, ray_speeds, run_brw, run_replicates, speed_histogram)
from spectra import SPECTRUM_COLUMNS, clear_spectra, get_spectra

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_CONFIG = 2
EXIT_ACCEPTANCE = 3

LEVEL_RATE_COLUMNS = ["m", "empirical", "analytic", "gap", "mean_count", "expected_count", "stderr"]


def _set_dotted(target: Dict[str, Any], dotted: str, value: Any):
    keys = dotted.split(".")
    node = target
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def parse_overrides(pairs: List[str]) -> Dict[str, Any]:
    """--set section.key=value pairs, values parsed as YAML scalars or lists"""
    overrides: Dict[str, Any] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like section.key=value")
        key, raw = pair.split("=", 1)
        _set_dotted(overrides, key.strip(), yaml.safe_load(raw))
    return overrides


def _merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def _command_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        _set_dotted(overrides, "simulation.seed", args.seed)
    if args.threads is not None:
        _set_dotted(overrides, "simulation.threads", args.threads)
    if args.out is not None:
        _set_dotted(overrides, "output.directory", args.out)
    if args.command == "spectrum" and args.r is not None:
        _set_dotted(overrides, "spectrum.r", args.r)
    if args.command == "simulate":
        if args.n is not None:
            _set_dotted(overrides, "simulation.n", args.n)
        if args.replicates is not None:
            _set_dotted(overrides, "simulation.replicates", args.replicates)
        if args.r is not None:
            _set_dotted(overrides, "offspring.kind", "geometric")
            _set_dotted(overrides, "offspring.mean", args.r)
    if args.command == "oracle":
        for name in ("kind", "n", "L", "m", "l", "delta", "beta", "r"):
            value = getattr(args, name, None)
            if value is not None:
                _set_dotted(overrides, f"oracle.{name}", value)
        if args.lam is not None:
            _set_dotted(overrides, "oracle.lam", args.lam)
        if args.counts is not None:
            _set_dotted(overrides, "oracle.counts", args.counts)
    return overrides


def load_config(path: Optional[str], overrides: Dict[str, Any]) -> BrwConfig:
    if path and not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    config = reset_config(path or "config.yaml", overrides)
    clear_solvers()
    clear_rates()
    clear_spectra()
    return config


# -- spectrum --

def cmd_spectrum(config: BrwConfig) -> int:
    mu = config.get_step_distribution()
    spectrum_cfg = config.get_spectrum_config()
    threads = int(config.get_simulation_config()["threads"])
    rates = get_rates(mu)
    spectra = get_spectra(mu)
    r = spectra.R if spectrum_cfg["r"] is None else float(spectrum_cfg["r"])
    window = spectra.speed_window(r)
    print(f"[Spectrum] {mu}: R = {spectra.R:.12g}, r = {r:.12g}")

    recorder = RunRecorder(config, "spectrum")
    profile = rates.rate_profile(points=int(spectrum_cfg["q_points"]), workers=threads)
    recorder.write_csv("rate_profile.csv", PROFILE_COLUMNS, profile.rows())
    curve = rates.pressure_curve(span=float(spectrum_cfg["s_span"]), points=int(spectrum_cfg["s_points"]), workers=threads)
    recorder.write_csv("pressure_curve.csv", PRESSURE_COLUMNS, curve.rows())
    table = spectra.spectrum_table(r, int(spectrum_cfg["alpha_points"]), workers=threads)
    recorder.write_csv("spectrum_table.csv", SPECTRUM_COLUMNS, table.rows())

    star = spectra.alpha_star(r)
    report = spectra.hypothesis_report()
    summary = {
        "mu": mu.to_mapping(),
        "R": spectra.R,
        "r": r,
        "C_RW": window.c_rw,
        "I_lower": window.lower,
        "I_upper": window.upper,
        "I_upper_clipped": window.clipped,
        "alpha_r": star.alpha,
        "dim_H_Lambda_r": star.dimension,
        "dim_routes": star.routes,
        "L_star_one": rates.rate_L_one(),
        "clt_variance": rates.clt_variance(),
        "hypothesis_one_max_g": report.max_g,
        "hypothesis_one_argmax_s": report.argmax_s,
        "hypothesis_one_lower_limit": report.lower_limit,
        "exact_interval_formula": spectra.exact_interval_formula(),
    }
    recorder.write_summary("spectrum_summary.json", summary)
    recorder.finish()
    print(f"[Spectrum] ✅ I(r) = [{window.lower:.8f}, {window.upper:.8f}], "
          f"alpha(r) = {star.alpha:.8f}, dim_H = {star.dimension:.10f}")
    return EXIT_OK


# -- check --

def cmd_check(config: BrwConfig, ids: Optional[List[int]], include_slow: bool) -> int:
    results = run_acceptance(config, ids, include_slow)
    recorder = RunRecorder(config, "check")
    verdicts = [r.as_dict() for r in results]
    failed = [r.id for r in results if not r.passed]
    recorder.write_summary("check.json", {"criteria": verdicts, "failed": failed})
    recorder.finish("ok" if not failed else "failed")
    if failed:
        print(f"[Check] ❌ {len(failed)} of {len(results)} criteria failed: {failed}")
        return EXIT_ACCEPTANCE
    print(f"[Check] ✅ all {len(results)} criteria passed")
    return EXIT_OK


# -- simulate --

def simulate_to_directory(config: BrwConfig, out: str, overrides: Optional[Dict[str, Any]] = None) -> str:
    """Run the configured simulation into `out`; returns the path of the statistics CSV"""
    merged = _merge(config.as_dict(), overrides or {})
    _set_dotted(merged, "output.directory", out)
    run_config = BrwConfig(None, merged)
    _simulate(run_config)
    return os.path.join(out, "level_stats.csv")


def _simulate(config: BrwConfig) -> Dict[str, Any]:
    mu = config.get_step_distribution()
    offspring = config.get_offspring_distribution()
    sim = config.get_simulation_config()
    n, replicates, seed, threads = int(sim["n"]), int(sim["replicates"]), int(sim["seed"]), int(sim["threads"])
    recorder = RunRecorder(config, "simulate")

    summary = run_replicates(mu, offspring, n, replicates, seed, threads)
    recorder.write_csv("level_stats.csv", STATS_COLUMNS, summary.rows())

    rates = get_rates(mu)
    law = length_distribution(mu, n)
    ln_r = np.log(offspring.mean)
    mean_counts = summary.mean_counts()
    errors = summary.standard_errors() if replicates > 1 else np.zeros(n + 1)
    rows = []
    for m in range(n + 1):
        empirical = summary.median_level_rate(m)
        analytic = ln_r - rates.rate_L(m / n) if n > 0 else ln_r
        expected = float(np.exp(n * ln_r + law.log_probabilities[m]))
        rows.append([m, empirical, analytic, empirical - analytic, mean_counts[m], expected, errors[m]])
    recorder.write_csv("level_rates.csv", LEVEL_RATE_COLUMNS, rows)

    arena = run_brw(mu, offspring, n, seed, replicate=0)
    speeds = ray_speeds(arena, int(sim["ray_count"]), seed)
    recorder.write_csv("ray_speeds.csv", RAY_COLUMNS, speed_histogram(speeds))

    values = {
        "n": n,
        "replicates": replicates,
        "offspring_mean": offspring.mean,
        "mean_population": float(np.mean([s.population for s in summary.stats])),
        "expected_population": offspring.mean ** n,
        "C_RW": rates.escape_rate(),
        "mean_ray_speed": float(speeds.mean()),
        "median_max_multiplicity_rate": summary.median_max_multiplicity_rate(),
    }
    recorder.write_summary("simulate_summary.json", values)
    recorder.finish()
    return values


def cmd_simulate(config: BrwConfig) -> int:
    values = _simulate(config)
    print(f"[Simulate] ✅ {values['replicates']} replicates to depth {values['n']}, "
          f"mean population {values['mean_population']:.1f} (expected {values['expected_population']:.1f})")
    return EXIT_OK


# -- oracle --

def cmd_oracle(config: BrwConfig, pin: Optional[str] = None) -> int:
    mu = config.get_step_distribution()
    opts = config.get_oracle_config()
    kind = opts["kind"]
    recorder = RunRecorder(config, "oracle")
    values: Dict[str, Any] = {"kind": kind}

    if kind == "length":
        law = length_distribution(mu, int(opts["n"]))
        columns, rows = LENGTH_COLUMNS, law.rows()
        values.update({"n": law.n, "mean": law.mean(), "variance": law.variance()})
    elif kind == "ball":
        table = ball_dp(mu, int(opts["n"]), int(opts["L"]))
        columns = BALL_COLUMNS
        rows = [[str(w), w.length, p] for m in range(table.L + 1) for w, p in table.sphere_items(m)]
        values.update({"n": table.n, "L": table.L, "overflow": table.overflow, "total": table.total})
    elif kind == "conditional":
        n = int(opts["n"])
        l = int(opts["l"]) if opts["l"] is not None else n // 2
        profile = conditional_profile(mu, n, l, deltas=(float(opts["delta"]),))
        columns = ["k"] + [f"P_{j}" for j in range(n + 1)]
        rows = [[k] + list(row) for k, row in enumerate(profile.matrix)]
        values.update({"n": n, "l": l, "exceedance": {str(k): v for k, v in profile.exceedance.items()}})
    elif kind == "partition":
        lam = np.asarray(opts["lam"] or np.zeros(mu.alphabet.size), dtype=float)
        n, beta = int(opts["n"]), float(opts["beta"])
        log_z = log_partition_function(lam, beta, n)
        columns, rows = ["n", "beta", "log_Z"], [[n, beta, log_z]]
        values.update({"log_Z": log_z, "free_energy": log_z / n})
    elif kind == "counts":
        counts = LetterCounts(tuple(int(c) for c in opts["counts"]))
        count = count_words_by_counts(mu.rank, counts.counts)
        columns, rows = ["counts", "words"], [[" ".join(map(str, counts.counts)), count]]
        values.update({"words": count, "total": counts.total})
    elif kind == "level":
        r = float(opts["r"]) if opts["r"] is not None else config.get_offspring_distribution().mean
        n, m = int(opts["n"]), int(opts["m"])
        value = expected_level_count(mu, r, n, m)
        columns, rows = ["n", "m", "r", "expected_count"], [[n, m, r, value]]
        values.update({"expected_count": value})
    else:
        raise ConfigError(f"unknown oracle kind {kind!r}", "oracle.kind")

    recorder.write_csv(f"oracle_{kind}.csv", columns, rows)
    if pin:
        mismatches = pin_or_compare(pin, columns, rows)
        values["pin_mismatches"] = mismatches
        if mismatches:
            for line in mismatches[:10]:
                print(f"[Oracle] ❌ {line}")
    recorder.write_summary("oracle_summary.json", values)
    recorder.finish()
    print(f"[Oracle] ✅ {kind}: {len(rows)} rows written")
    return EXIT_ACCEPTANCE if values.get("pin_mismatches") else EXIT_OK


# -- entry point --

def build_parser() -> argparse.ArgumentParser:
    caps = ", ".join(f"{env} ({name})" for name, env in CAP_ENV.items())
    parser = argparse.ArgumentParser(
        prog="mfbrw",
        description="Multifractal analysis of transient branching random walks on free groups",
        epilog=f"Resource caps can be overridden from the environment: {caps}.",
    )
    parser.add_argument("--config", default=None, help="YAML or JSON config file (default config.yaml)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed")
    parser.add_argument("--threads", type=int, default=None, help="worker threads")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. walk.mu=[0.3,0.2]")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    spectrum = sub.add_parser("spectrum", help="rate functions and dimension spectra")
    spectrum.add_argument("--r", type=float, default=None, help="offspring mean in (1, R]; default R")

    check = sub.add_parser("check", help="run the acceptance suite")
    check.add_argument("--list", action="store_true", help="print criterion ids without running")
    check.add_argument("--only", type=int, nargs="+", default=None, help="criterion ids to run")
    check.add_argument("--skip-slow", action="store_true", help="leave out the slow criteria")

    simulate = sub.add_parser("simulate", help="Monte Carlo BRW level-set statistics")
    simulate.add_argument("--n", type=int, default=None, help="depth")
    simulate.add_argument("--replicates", type=int, default=None)
    simulate.add_argument("--r", type=float, default=None, help="offspring mean (truncated geometric law)")

    oracle = sub.add_parser("oracle", help="exact oracles")
    oracle.add_argument("--kind", choices=["length", "ball", "conditional", "partition", "counts", "level"])
    oracle.add_argument("--n", type=int, default=None)
    oracle.add_argument("--L", type=int, default=None)
    oracle.add_argument("--m", type=int, default=None)
    oracle.add_argument("--l", type=int, default=None)
    oracle.add_argument("--delta", type=float, default=None)
    oracle.add_argument("--beta", type=float, default=None)
    oracle.add_argument("--r", type=float, default=None)
    oracle.add_argument("--lam", type=float, nargs="+", default=None)
    oracle.add_argument("--counts", type=int, nargs="+", default=None)
    oracle.add_argument("--pin", default=None, help="regression CSV: written on first use, compared later")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")

    if args.command == "check" and args.list:
        for line in list_criteria():
            print(line)
        return EXIT_OK

    try:
        config = load_config(args.config, _command_overrides(args))
        if args.command == "spectrum":
            return cmd_spectrum(config)
        if args.command == "check":
            return cmd_check(config, args.only, not args.skip_slow)
        if args.command == "simulate":
            return cmd_simulate(config)
        return cmd_oracle(config, args.pin)
    except (ConfigError, OutOfPhase) as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MfbrwError as e:
        print(f"❌ Numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"❌ Invalid input: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
