"""Command-line entry point: synth-population, simulate, monitor, amoc.

Exit codes: 0 success, 1 validation error (bad config, file or input),
2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from . import region as region_mod
from .bn_core import NetworkError
from .cases import EdCase, ParseError, format_timestamp, parse_timestamp, read_numbered_cases, write_cases
from .config import ConfigError, RunConfig, Setup, resolve
from .engine import EngineError
from .evaluation import AmocPoint, compute_amoc, read_trace, write_amoc
from .monitor import run_monitor
from .person_model import build_person_model, default_params, serialize_person_model
from .simulator import (BackgroundRates, OutbreakSimParams, ReleaseScenario, background_rates, complete_cases,
                        generate_background, generate_outbreak, inject, load_weather, sample_release)

log = logging.getLogger("biosurv")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
DEFAULT_START = datetime.fromisoformat("2002-01-01T00:00:00+00:00")


@dataclass
class Simulation:
    scenario: ReleaseScenario
    background: list[EdCase]
    outbreak: list[EdCase]
    stream: list[EdCase]


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    # background, outbreak and demographics draw from separate streams so the
    # background stays fixed while the release varies
    return tuple(np.random.default_rng([seed, k]) for k in range(3))  # type: ignore[return-value]


def run_simulate(setup: Setup, scenario: ReleaseScenario, start: datetime, end: datetime, seed: int = 0,
                 sim_params: OutbreakSimParams = OutbreakSimParams(),
                 rates: BackgroundRates | None = None) -> Simulation:
    """Background over ``[start, end)`` with the scenario's outbreak injected.

    Outbreak cases falling at or after ``end`` are dropped.
    """
    reg = setup.region
    if scenario.release_zip not in reg.centroids:
        raise ConfigError(f"release zip {scenario.release_zip!r} is not in the region")
    bg_rng, ob_rng, demo_rng = _streams(seed)
    rates = rates or background_rates(reg.census, setup.person_net)
    background = generate_background(reg.census, setup.person_net, start, end, bg_rng, rates=rates)
    raw = [c for c in generate_outbreak(scenario, reg.zip_population(), reg.centroids, sim_params, ob_rng)
           if start <= c.timestamp < end]
    outbreak = complete_cases(raw, setup.person_net, demo_rng)
    return Simulation(scenario, background, outbreak, inject(background, outbreak))


def sample_batch(setup: Setup, n: int, amount: float, start: datetime, end: datetime, seed: int = 0,
                 lead_hours: float = 72.0, weather_path=None,
                 sim_params: OutbreakSimParams = OutbreakSimParams()) -> list[ReleaseScenario]:
    """``n`` scenarios with distinct release zips, each leaving 144 h of follow-up before ``end``."""
    reg = setup.region
    if n > len(reg.zips):
        raise ConfigError(f"cannot place {n} distinct releases in {len(reg.zips)} zips")
    lo = start + timedelta(hours=lead_hours)
    hi = end - timedelta(hours=144)
    if hi <= lo:
        raise ConfigError("simulation window is too short for the lead time plus 144 h follow-up")
    rng = np.random.default_rng([seed, 99])
    weather = load_weather(weather_path)
    centroids = {z: reg.centroids[z] for z in reg.zips}
    pop = reg.zip_population()
    out: list[ReleaseScenario] = []
    for _ in range(n):
        out.append(sample_release(centroids, pop, rng, amount, lo, hi, weather,
                                  exclude=[s.release_zip for s in out], params=sim_params))
    return out


def run_amoc(traces: Sequence[tuple[str, datetime]]) -> list[AmocPoint]:
    loaded = []
    for path, release in traces:
        with open(path, encoding="utf-8") as fh:
            loaded.append((read_trace(fh), release))
    return compute_amoc(loaded)


def read_manifest(path: str) -> list[tuple[str, datetime]]:
    """CSV ``trace,release_time``; relative trace paths are taken from the manifest's folder."""
    base = Path(path).parent
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"trace", "release_time"} <= set(reader.fieldnames):
            raise ParseError("manifest needs trace and release_time columns", 1)
        return [(str(base / r["trace"]), parse_timestamp(r["release_time"])) for r in reader]


# -- argument handling ----------------------------------------------------------

def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig keys")
    p.add_argument("--variant", choices=("nonspatial", "spatial"))
    p.add_argument("--params", dest="params_path", help="serialized person model")
    p.add_argument("--census", dest="census_path")
    p.add_argument("--centroids", dest="centroids_path")
    p.add_argument("--p-release", type=float)
    p.add_argument("--location-prior", choices=("uniform", "population"))
    p.add_argument("--hourly-ed-rate", type=float)
    p.add_argument("--cadence-per-hour", type=int)
    p.add_argument("--resync-interval", type=int)
    p.add_argument("--utc-offset-hours", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-zips", type=int)
    p.add_argument("--population", type=int)


CONFIG_KEYS = ("variant", "params_path", "census_path", "centroids_path", "p_release", "location_prior",
               "hourly_ed_rate", "cadence_per_hour", "resync_interval", "utc_offset_hours", "seed",
               "n_zips", "population")


def _config(args) -> RunConfig:
    return RunConfig.load(args.config, {k: getattr(args, k) for k in CONFIG_KEYS})


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="biosurv", description="Bayesian ED surveillance for airborne anthrax releases")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-population", help="write a synthetic census and zip centroids")
    p.add_argument("--out", required=True, help="output folder")
    p.add_argument("--n-zips", type=int, default=101)
    p.add_argument("--population", type=int, default=1_400_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--write-params", choices=("nonspatial", "spatial"),
                   help="also write the default person model of this variant")

    p = sub.add_parser("simulate", help="background stream with an injected release")
    _config_args(p)
    p.add_argument("--scenario", help="key = value scenario file")
    p.add_argument("--batch", type=int, help="sample this many scenarios with distinct release zips")
    p.add_argument("--amount", type=float, default=1.0, help="release amount for --batch")
    p.add_argument("--start", default=format_timestamp(DEFAULT_START))
    p.add_argument("--days", type=float, default=14.0)
    p.add_argument("--weather", help="weather CSV (defaults to the shipped table)")
    p.add_argument("--out", required=True, help="case CSV, or a folder with --batch")

    p = sub.add_parser("monitor", help="replay a case stream and write hourly posteriors")
    _config_args(p)
    p.add_argument("--cases", required=True)
    p.add_argument("--start")
    p.add_argument("--end")
    p.add_argument("--out", required=True, help="trace CSV")

    p = sub.add_parser("amoc", help="AMOC curve from posterior traces")
    p.add_argument("--manifest", help="CSV with trace,release_time columns")
    p.add_argument("--trace", action="append", default=[])
    p.add_argument("--release-time", action="append", default=[])
    p.add_argument("--out", required=True)
    return ap


def _cmd_synth(args) -> None:
    reg = region_mod.synthesize_region(args.n_zips, args.population, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "census.csv", "w", encoding="utf-8") as fh:
        region_mod.write_census(reg.census, fh)
    with open(out / "centroids.csv", "w", encoding="utf-8") as fh:
        region_mod.write_centroids(reg.centroids, fh)
    if args.write_params:
        net = build_person_model(default_params(reg.census, reg.zips, reg.centroids), args.write_params)
        (out / f"person_{args.write_params}.txt").write_text(serialize_person_model(net), encoding="utf-8")


def _write_simulation(sim: Simulation, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_cases(sim.stream, fh)
    path.with_suffix(".scenario.txt").write_text(sim.scenario.to_text(), encoding="utf-8")


def _cmd_simulate(args) -> None:
    cfg = _config(args)
    setup = resolve(cfg)
    start = parse_timestamp(args.start)
    end = start + timedelta(days=args.days)
    if (args.scenario is None) == (args.batch is None):
        raise ConfigError("give exactly one of --scenario and --batch")
    if args.scenario:
        scenario = ReleaseScenario.from_text(Path(args.scenario).read_text(encoding="utf-8"))
        _write_simulation(run_simulate(setup, scenario, start, end, cfg.seed), Path(args.out))
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rates = background_rates(setup.region.census, setup.person_net)
    scenarios = sample_batch(setup, args.batch, args.amount, start, end, cfg.seed, weather_path=args.weather)
    rows = []
    for k, sc in enumerate(scenarios):
        name = f"scenario_{k:03d}.csv"
        _write_simulation(run_simulate(setup, sc, start, end, cfg.seed + k, rates=rates), out / name)
        rows.append((name, format_timestamp(sc.release_datetime)))
    with open(out / "manifest.csv", "w", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cases", "release_time"])
        w.writerows(rows)


def _cmd_monitor(args) -> None:
    cfg = _config(args)
    with open(args.cases, encoding="utf-8") as fh:
        numbered = read_numbered_cases(fh)
    cases = [c for _, c in numbered]
    start = parse_timestamp(args.start) if args.start else None
    end = parse_timestamp(args.end) if args.end else None
    result = run_monitor(cfg, cases, start, end, [n for n, _ in numbered])
    with open(args.out, "w", encoding="utf-8") as fh:
        result.write(fh)
    if result.skipped:
        log.warning("%d cases skipped: no one left in their background class", result.skipped)


def _cmd_amoc(args) -> None:
    traces = read_manifest(args.manifest) if args.manifest else []
    if len(args.trace) != len(args.release_time):
        raise ConfigError("each --trace needs a matching --release-time")
    traces += [(t, parse_timestamp(r)) for t, r in zip(args.trace, args.release_time)]
    if not traces:
        raise ConfigError("no traces given")
    points = run_amoc(traces)
    with open(args.out, "w", encoding="utf-8") as fh:
        write_amoc(points, fh)


COMMANDS = {"synth-population": _cmd_synth, "simulate": _cmd_simulate, "monitor": _cmd_monitor, "amoc": _cmd_amoc}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except EngineError as exc:
        print(f"biosurv: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, ParseError, NetworkError, ValueError, KeyError, OSError) as exc:
        print(f"biosurv: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        print(f"biosurv: runtime error: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
