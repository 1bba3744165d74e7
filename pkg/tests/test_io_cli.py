import io
import json
import logging
import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from biosurv import cli
from biosurv.cases import EdCase, ParseError, local_date, read_cases, write_cases
from biosurv.config import ConfigError, RunConfig, Setup, resolve
from biosurv.engine import EngineError
from biosurv.evaluation import InsufficientCoverage, hourly_grid, read_amoc, read_trace
from biosurv.exposure_spatial import ZipCentroid
from biosurv.monitor import CaseError, run_monitor
from biosurv.outbreak_model import OutbreakPriors, build_outbreak_model
from biosurv.person_model import GENDERS, PersonEvidence, build_person_model, default_params, person_likelihood
from biosurv.region import Region, UnknownZip, parse_census
from biosurv.simulator import ReleaseScenario, generate_background

T0 = datetime(2002, 3, 1, tzinfo=timezone.utc)


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    d = tmp_path_factory.mktemp("region")
    assert cli.main(["synth-population", "--out", str(d), "--n-zips", "9", "--population", "40000",
                     "--seed", "2"]) == 0
    return d


def small_args(d):
    return ["--census", str(d / "census.csv"), "--centroids", str(d / "centroids.csv")]


# -- census ---------------------------------------------------------------------

def test_parse_census_rows():
    text = "zip,age_decile,gender,count\n1,0,female,5\n1,1,male,7\n2,8,female,0\n"
    assert parse_census(io.StringIO(text)) == {("1", 0, "female"): 5, ("1", 1, "male"): 7, ("2", 8, "female"): 0}


def test_parse_census_errors():
    with pytest.raises(ParseError) as e:
        parse_census(io.StringIO("zip,age_decile,gender,count\n1,0,female,5\n1,1,male,-2\n"))
    assert e.value.line == 3
    with pytest.raises(ParseError):
        parse_census(io.StringIO("zip,age,gender,count\n"))
    with pytest.raises(ParseError):
        parse_census(io.StringIO("zip,age_decile,gender,count\n1,9,female,5\n"))
    with pytest.raises(UnknownZip):
        parse_census(io.StringIO("zip,age_decile,gender,count\n3,0,female,5\n"), known_zips=["1", "2"])


def test_parse_census_duplicates_summed(caplog):
    with caplog.at_level(logging.WARNING):
        out = parse_census(io.StringIO("zip,age_decile,gender,count\n1,0,female,5\n1,0,female,2\n"))
    assert out == {("1", 0, "female"): 7}
    assert "summed" in caplog.text


def test_case_file_round_trip():
    cases = [EdCase(T0 + timedelta(seconds=17), "1", 3, "male", "false"), EdCase(T0 + timedelta(hours=2), "2")]
    buf = io.StringIO()
    write_cases(cases, buf)
    assert read_cases(io.StringIO(buf.getvalue())) == cases
    with pytest.raises(ParseError) as e:
        read_cases(io.StringIO(buf.getvalue() + "garbage,1,2,female,true\n"))
    assert e.value.line == 4


# -- config -----------------------------------------------------------------------

def test_config_load_and_overrides(tmp_path, small):
    (tmp_path / "c.json").write_text(json.dumps({"variant": "spatial", "p_release": 0.01,
                                                 "census_path": str(small / "census.csv"),
                                                 "centroids_path": str(small / "centroids.csv")}))
    cfg = RunConfig.load(str(tmp_path / "c.json"), {"p_release": 0.02, "seed": None})
    assert cfg.variant == "spatial" and cfg.p_release == 0.02 and cfg.seed == 0
    assert RunConfig.from_mapping(json.loads(cfg.to_json())) == cfg
    setup = resolve(cfg)
    assert len(setup.model.configs) == 1 + 3 * 9 * 8


def test_config_relative_paths(tmp_path, small):
    (tmp_path / "census.csv").write_text((small / "census.csv").read_text())
    (tmp_path / "centroids.csv").write_text((small / "centroids.csv").read_text())
    (tmp_path / "c.json").write_text(json.dumps({"census_path": "census.csv", "centroids_path": "centroids.csv"}))
    cfg = RunConfig.load(str(tmp_path / "c.json"))
    assert cfg.census_path == str(tmp_path / "census.csv")


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig(variant="cubist")
    with pytest.raises(ConfigError):
        RunConfig(cadence_per_hour=7)
    with pytest.raises(ConfigError):
        RunConfig(cadence_per_hour=0)
    with pytest.raises(ConfigError):
        RunConfig(census_path=str(tmp_path / "missing.csv"), centroids_path=str(tmp_path / "missing2.csv"))
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"colour": "red"})
    (tmp_path / "bad.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        RunConfig.load(str(tmp_path / "bad.json"))


# -- monitor ------------------------------------------------------------------------

def small_setup(small, **kw):
    return resolve(RunConfig(census_path=str(small / "census.csv"), centroids_path=str(small / "centroids.csv"), **kw))


def test_empty_stream_gives_equal_rows(small):
    res = run_monitor(small_setup(small), [], T0 + timedelta(hours=5), T0 + timedelta(hours=29))
    assert len(res.rows) == 24
    assert len({r.p_release for r in res.rows}) == 1
    assert res.rows[0].timestamp == T0 + timedelta(hours=6)


def test_cadence(small):
    res = run_monitor(small_setup(small, cadence_per_hour=4), [], T0, T0 + timedelta(hours=2))
    assert [r.timestamp for r in res.rows] == [T0 + timedelta(minutes=15 * k) for k in range(1, 9)]


def test_monitor_rejects_bad_streams(small):
    setup = small_setup(small)
    z = setup.region.zips[0]
    late, early = EdCase(T0 + timedelta(hours=3), z, 1, "female"), EdCase(T0 + timedelta(hours=1), z, 1, "female")
    with pytest.raises(ValueError):
        run_monitor(setup, [late, early], T0, T0 + timedelta(hours=5))
    with pytest.raises(ValueError):
        run_monitor(setup, [late], T0, T0 + timedelta(hours=2))
    with pytest.raises(CaseError) as e:
        run_monitor(setup, [EdCase(T0, "00000", 1, "female")], T0, T0 + timedelta(hours=1), line_numbers=[7])
    assert e.value.line == 7
    with pytest.raises(CaseError):
        run_monitor(setup, [EdCase(T0, z)], T0, T0 + timedelta(hours=1))


def toy_setup():
    """Four residents in two zips; a release is likely enough to move the posterior."""
    zips = ("1", "2")
    census = {(z, a, g): 0 for z in zips + ("other",) for a in range(9) for g in GENDERS}
    people = [("1", 2, "female"), ("1", 2, "female"), ("2", 5, "male"), ("2", 7, "female")]
    for p in people:
        census[p] += 1
    cents = {"1": ZipCentroid("1", 40.44, -80.0), "2": ZipCentroid("2", 40.46, -80.0)}
    region = Region(zips, cents, census)
    params = default_params(census, zips, cents, hourly_ed_rate=0.005, anthrax_attack_rate=0.5)
    net = build_person_model(params)
    model = build_outbreak_model(zips, priors=OutbreakPriors(p_release=0.2))
    return Setup(RunConfig(p_release=0.2), region, net, model), people


def oracle_posterior(setup, people, cases, t):
    """P(release | evidence at t), summing over configs of the per-person product in linear space."""
    evidence = [PersonEvidence(*p) for p in people]
    used = set()
    for c in cases:
        if c.timestamp >= t:
            continue
        lag = (local_date(t) - local_date(c.timestamp)).days
        k = next(i for i, p in enumerate(people) if i not in used and p == (c.zip, c.age_decile, c.gender))
        used.add(k)
        if lag <= 2:
            day = ("today", "yesterday", "day_before")[lag]
            evidence[k] = PersonEvidence(c.zip, c.age_decile, c.gender, day, c.respiratory)
    model = setup.model
    prior = model.prior_matrix()
    joint = {}
    for r, state in enumerate(model.target_states):
        total = 0.0
        for cfg, w in zip(model.configs, prior[r]):
            if w > 0:
                total += w * math.prod(person_likelihood(setup.person_net, e, cfg) for e in evidence)
        joint[state] = total * model.global_prior(state)
    return joint["yes"] / (joint["yes"] + joint["no"])


def test_toy_monitor_matches_oracle():
    setup, people = toy_setup()
    start = T0 + timedelta(hours=18)
    cases = [EdCase(T0 + timedelta(hours=20, minutes=30), "1", 2, "female", "true"),
             EdCase(T0 + timedelta(hours=30), "2", 7, "female", "false"),
             EdCase(T0 + timedelta(hours=47, minutes=59), "1", 2, "female", "true")]
    res = run_monitor(setup, cases, start, start + timedelta(hours=80))
    values = [r.p_release for r in res.rows]
    assert max(values) - min(values) > 0.1
    for r in res.rows:
        assert r.p_release == pytest.approx(oracle_posterior(setup, people, cases, r.timestamp), abs=1e-9)
    assert res.rows[-1].p_release == pytest.approx(res.rows[0].p_release, abs=1e-12)


def test_monitor_skips_exhausted_class(caplog):
    setup, _ = toy_setup()
    cases = [EdCase(T0 + timedelta(hours=1), "2", 5, "male", "true"),
             EdCase(T0 + timedelta(hours=2), "2", 5, "male", "true")]
    with caplog.at_level(logging.WARNING):
        res = run_monitor(setup, cases, T0, T0 + timedelta(hours=3))
    assert res.skipped == 1 and "skipping" in caplog.text
    with pytest.raises(CaseError):
        run_monitor(setup, cases, T0, T0 + timedelta(hours=3), skip_missing_origin=False)


# -- simulate ---------------------------------------------------------------------

def test_zero_amount_stream_is_background(small):
    setup = small_setup(small)
    sc = ReleaseScenario(setup.region.zips[0], 50.0, 0.0, T0 + timedelta(hours=5), 200.0, 6.0, "D")
    sim = cli.run_simulate(setup, sc, T0, T0 + timedelta(days=3), seed=4)
    assert sim.outbreak == [] and sim.stream == sim.background
    bg = generate_background(setup.region.census, setup.person_net, T0, T0 + timedelta(days=3),
                             np.random.default_rng([4, 0]))
    assert sim.background == bg


def test_cli_end_to_end_is_deterministic(tmp_path, small):
    sc = ReleaseScenario("15203", 80.0, 1.0, datetime(2002, 1, 3, 9, tzinfo=timezone.utc), 250.0, 7.0, "D")
    (tmp_path / "s.txt").write_text(sc.to_text())
    for k in (1, 2):
        assert cli.main(["simulate", *small_args(small), "--seed", "5", "--scenario", str(tmp_path / "s.txt"),
                         "--days", "10", "--out", str(tmp_path / f"cases{k}.csv")]) == 0
        assert cli.main(["monitor", *small_args(small), "--cases", str(tmp_path / f"cases{k}.csv"),
                         "--start", "2002-01-01T00:00:00Z", "--end", "2002-01-11T00:00:00Z",
                         "--out", str(tmp_path / f"trace{k}.csv")]) == 0
    assert (tmp_path / "cases1.csv").read_bytes() == (tmp_path / "cases2.csv").read_bytes()
    assert (tmp_path / "trace1.csv").read_bytes() == (tmp_path / "trace2.csv").read_bytes()
    assert ReleaseScenario.from_text((tmp_path / "cases1.scenario.txt").read_text()) == sc
    header = (tmp_path / "trace1.csv").read_text().splitlines()[0]
    assert header == "timestamp,p_release,log_lik_yes,log_lik_no,map_location,map_time,map_angle"
    with open(tmp_path / "trace1.csv") as fh:
        trace = read_trace(fh)
    assert len(trace) == 10 * 24
    assert cli.main(["amoc", "--trace", str(tmp_path / "trace1.csv"), "--release-time", "2002-01-03T09:00:00Z",
                     "--out", str(tmp_path / "amoc.csv")]) == 0
    with open(tmp_path / "amoc.csv") as fh:
        assert read_amoc(fh)


def test_batch_has_distinct_zips(tmp_path):
    d = tmp_path / "pop"
    assert cli.main(["synth-population", "--out", str(d), "--n-zips", "101", "--population", "20000"]) == 0
    out = tmp_path / "batch"
    assert cli.main(["simulate", *small_args(d), "--batch", "96", "--days", "10", "--amount", "0.5",
                     "--out", str(out)]) == 0
    streams = sorted(out.glob("scenario_*[0-9].csv"))
    assert len(streams) == 96
    zips = {ReleaseScenario.from_text(p.with_suffix(".scenario.txt").read_text()).release_zip for p in streams}
    assert len(zips) == 96
    rows = (out / "manifest.csv").read_text().splitlines()
    assert rows[0] == "cases,release_time" and len(rows) == 97


# -- amoc -------------------------------------------------------------------------

def write_step_trace(path, release, step_hour):
    start = release - timedelta(hours=30)
    with open(path, "w") as fh:
        fh.write("timestamp,p_release\n")
        for t in hourly_grid(start, 200):
            h = (t - release).total_seconds() / 3600
            fh.write(f"{t.isoformat().replace('+00:00', 'Z')},{1.0 if h >= step_hour else 0.0}\n")


def test_amoc_step_trace_two_points(tmp_path):
    rel = datetime(2002, 2, 1, 6, tzinfo=timezone.utc)
    write_step_trace(tmp_path / "t.csv", rel, 30)
    (tmp_path / "m.csv").write_text(f"trace,release_time\nt.csv,{rel.isoformat()}\n")
    assert cli.main(["amoc", "--manifest", str(tmp_path / "m.csv"), "--out", str(tmp_path / "a.csv")]) == 0
    with open(tmp_path / "a.csv") as fh:
        pts = read_amoc(fh)
    assert [(p.threshold, p.fp_fraction, p.mean_detection_hours) for p in pts] == [(1.0, 0.0, 30.0), (0.0, 1.0, 1.0)]
    again = cli.run_amoc([(str(tmp_path / "t.csv"), rel)])
    assert [(p.threshold, p.fp_fraction, p.mean_detection_hours) for p in again] == \
        [(p.threshold, p.fp_fraction, p.mean_detection_hours) for p in pts]


def test_amoc_coverage_error(tmp_path, capsys):
    rel = datetime(2002, 2, 1, 6, tzinfo=timezone.utc)
    write_step_trace(tmp_path / "t.csv", rel, 30)
    with pytest.raises(InsufficientCoverage):
        cli.run_amoc([(str(tmp_path / "t.csv"), rel + timedelta(days=30))])
    assert cli.main(["amoc", "--trace", str(tmp_path / "t.csv"), "--release-time", "2002-03-01T00:00:00Z",
                     "--out", str(tmp_path / "a.csv")]) == 1
    assert "needs release" in capsys.readouterr().err


# -- exit codes -------------------------------------------------------------------

def test_exit_codes(tmp_path, small, monkeypatch):
    assert cli.main(["monitor", "--cases", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "t.csv")]) == 1
    assert cli.main(["simulate", "--variant", "spatial", "--census", str(small / "census.csv"),
                     "--out", str(tmp_path / "x.csv"), "--batch", "2"]) == 1
    (tmp_path / "bad.csv").write_text("timestamp,zip,age_decile,gender,respiratory\n2002-01-01T00:00:00Z,1,x,f,true\n")
    assert cli.main(["monitor", *small_args(small), "--cases", str(tmp_path / "bad.csv"),
                     "--out", str(tmp_path / "t.csv")]) == 1

    def engine_failure(args):
        raise EngineError("accumulators out of sync")

    def crash(args):
        raise RuntimeError("boom")

    monkeypatch.setitem(cli.COMMANDS, "amoc", engine_failure)
    assert cli.main(["amoc", "--out", "x"]) == 2
    monkeypatch.setitem(cli.COMMANDS, "amoc", crash)
    assert cli.main(["amoc", "--out", "x"]) == 2
