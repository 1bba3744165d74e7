"""Synthetic outbreak and background ED case streams.

Outbreaks follow a ground-level Gaussian plume from a point release.
Each zip is treated as a square of equal-population cells; the plume
concentration at a cell's center sets the infection probability of its
residents, and infected residents reach the ED after a fixed 24 hour
minimum plus a gamma-distributed delay that shortens with dose. All of
the plume, dose-response and incubation constants are stand-ins with
documented defaults in :class:`OutbreakSimParams`.

Background arrivals are drawn from the person model itself under the
no-release configuration.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, fields
from datetime import datetime, timedelta, timezone
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from . import bn_core
from .bn_core import Network
from .cases import EdCase, format_timestamp, parse_timestamp
from .exposure_spatial import MILES_PER_DEGREE_LAT, MissingCentroid, ZipCentroid, local_offset
from .person_model import (ADMISSION_TRIPLE, ADMIT, AGE, ANGLE, GENDER, GENDERS, HOME_ZIP, LOCATION,
                           NOWHERE, RESP_ADMIT, RESP_ADMIT_STATES, TIME, demographic_conditional)

METERS_PER_MILE = 1609.344
MPS_PER_MPH = 0.44704
METERS_PER_FOOT = 0.3048
STABILITY_CLASSES = ("A", "B", "C", "D", "E", "F")

# power-law dispersion: sigma_y = a * x**b, sigma_z = c * x**d, x in km, sigma in m
DISPERSION = {
    "A": (213.0, 0.894, 440.8, 1.941),
    "B": (156.0, 0.894, 106.6, 1.149),
    "C": (104.0, 0.894, 61.0, 0.911),
    "D": (68.0, 0.894, 33.2, 0.725),
    "E": (50.5, 0.894, 22.8, 0.678),
    "F": (34.0, 0.894, 14.35, 0.740),
}


class UnsortedInput(ValueError):
    pass


@dataclass(frozen=True)
class ReleaseScenario:
    """A release. ``wind_direction`` is where the wind blows from, degrees clockwise from north."""

    release_zip: str
    height: float            # feet
    amount: float            # dimensionless
    release_datetime: datetime
    wind_direction: float
    wind_speed: float        # mph
    stability_class: str

    def __post_init__(self):
        if self.amount < 0:
            raise ValueError("amount must be nonnegative")
        if self.height < 0:
            raise ValueError("height must be nonnegative")
        if not self.wind_speed > 0:
            raise ValueError("wind_speed must be positive")
        if self.stability_class not in DISPERSION:
            raise ValueError(f"stability class must be one of {STABILITY_CLASSES}")
        if self.release_datetime.tzinfo is None:
            object.__setattr__(self, "release_datetime",
                               self.release_datetime.replace(tzinfo=timezone.utc))

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {format_timestamp(v) if isinstance(v, datetime) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ReleaseScenario":
        kv = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, sep, v = line.partition("=")
            if not sep:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            kv[k.strip()] = v.strip()
        names = {f.name for f in fields(cls)}
        if set(kv) != names:
            raise ValueError(f"scenario keys {sorted(kv)} differ from {sorted(names)}")
        return cls(kv["release_zip"], float(kv["height"]), float(kv["amount"]),
                   parse_timestamp(kv["release_datetime"]), float(kv["wind_direction"]),
                   float(kv["wind_speed"]), kv["stability_class"])


@dataclass
class OutbreakSimParams:
    dose_scale: float = 8000.0            # infection probability = 1 - exp(-dose_scale * C)
    zip_radius: float = 1.35              # miles; half the side of the square standing in for a zip
    subarea_grid: int = 5                 # each zip is split into subarea_grid**2 cells
    incubation_shape: float = 3.0
    incubation_min_mean: float = 12.0     # hours beyond the 24 h floor, at very high dose
    incubation_span: float = 60.0         # extra mean hours at vanishing dose
    incubation_dose_ref: float = 5e-3     # infection probability at which the span decays by 1/e


@dataclass(frozen=True)
class WeatherRow:
    date: str
    wind_direction: float
    wind_speed: float
    stability_class: str


def load_weather(path=None) -> list[WeatherRow]:
    """Weather table ``date,wind_direction,wind_speed,stability_class``; defaults to the shipped one."""
    if path is None:
        text = resources.files("biosurv").joinpath("data/weather.csv").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    reader = csv.DictReader(text.splitlines())
    return [WeatherRow(r["date"], float(r["wind_direction"]), float(r["wind_speed"]),
                       r["stability_class"].strip()) for r in reader]


def _wind_frame(scenario: ReleaseScenario) -> tuple[float, float]:
    toward = math.radians(scenario.wind_direction + 180.0)
    return math.sin(toward), math.cos(toward)


def _plume(scenario: ReleaseScenario, down_miles: np.ndarray, cross_miles: np.ndarray) -> np.ndarray:
    down = np.asarray(down_miles, dtype=np.float64)
    cross = np.asarray(cross_miles, dtype=np.float64)
    out = np.zeros(np.broadcast(down, cross).shape)
    if scenario.amount == 0.0:
        return out
    a, b, c, d = DISPERSION[scenario.stability_class]
    pos = np.broadcast_to(down > 0.0, out.shape)
    x_km = np.broadcast_to(down, out.shape)[pos] * METERS_PER_MILE / 1000.0
    y = np.broadcast_to(cross, out.shape)[pos] * METERS_PER_MILE
    sy = a * x_km ** b
    sz = c * x_km ** d
    u = scenario.wind_speed * MPS_PER_MPH
    h = scenario.height * METERS_PER_FOOT
    out[pos] = (scenario.amount / (np.pi * u * sy * sz)
                * np.exp(-y * y / (2.0 * sy * sy)) * np.exp(-h * h / (2.0 * sz * sz)))
    return out


def plume_at_offset(scenario: ReleaseScenario, downwind_miles: float, crosswind_miles: float) -> float:
    """Ground-level concentration at a point given in wind-frame miles."""
    return float(_plume(scenario, downwind_miles, crosswind_miles))


def _wind_coords(scenario: ReleaseScenario, east, north):
    ux, uy = _wind_frame(scenario)
    return east * ux + north * uy, -east * uy + north * ux


def plume_concentration(scenario: ReleaseScenario, target: ZipCentroid,
                        centroids: Mapping[str, ZipCentroid]) -> float:
    """Ground-level Gaussian plume concentration at ``target`` (zero upwind)."""
    try:
        origin = centroids[scenario.release_zip]
    except KeyError:
        raise MissingCentroid(f"no centroid for release zip {scenario.release_zip!r}") from None
    down, cross = _wind_coords(scenario, *local_offset(origin, target))
    return plume_at_offset(scenario, down, cross)


def subarea_offsets(params: "OutbreakSimParams") -> np.ndarray:
    """(n, 2) east/north offsets in miles of the sub-area centers of a zip."""
    k = params.subarea_grid
    g = ((np.arange(k) + 0.5) / k * 2.0 - 1.0) * params.zip_radius
    e, n = np.meshgrid(g, g, indexing="xy")
    return np.column_stack([e.ravel(), n.ravel()])


def subarea_concentrations(scenario: ReleaseScenario, centroids: Mapping[str, ZipCentroid],
                           params: "OutbreakSimParams") -> dict[str, np.ndarray]:
    """Concentration at each sub-area center of every zip.

    A zip is a square of side ``2 * zip_radius`` around its centroid cut
    into ``subarea_grid**2`` equal cells, each with an equal share of the
    residents.
    """
    try:
        origin = centroids[scenario.release_zip]
    except KeyError:
        raise MissingCentroid(f"no centroid for release zip {scenario.release_zip!r}") from None
    offs = subarea_offsets(params)
    names = list(centroids)
    lat = np.array([centroids[z].lat for z in names])
    lon = np.array([centroids[z].lon for z in names])
    east = (lon - origin.lon) * math.cos(math.radians(origin.lat)) * MILES_PER_DEGREE_LAT
    north = (lat - origin.lat) * MILES_PER_DEGREE_LAT
    down, cross = _wind_coords(scenario, east[:, None] + offs[None, :, 0], north[:, None] + offs[None, :, 1])
    conc = _plume(scenario, down, cross)
    return {z: conc[k] for k, z in enumerate(names)}


def zip_concentrations(scenario: ReleaseScenario, centroids: Mapping[str, ZipCentroid],
                       params: "OutbreakSimParams" = None) -> dict[str, float]:
    """Mean sub-area concentration per zip."""
    params = params or OutbreakSimParams()
    return {z: float(v.mean()) for z, v in subarea_concentrations(scenario, centroids, params).items()}


def infection_probability(conc: float, params: OutbreakSimParams = OutbreakSimParams()) -> float:
    return -math.expm1(-params.dose_scale * conc)


def mean_incubation_delay(conc: float, params: OutbreakSimParams = OutbreakSimParams()) -> float:
    """Mean hours from release to ED arrival; strictly decreasing in concentration."""
    p = infection_probability(conc, params)
    return 24.0 + params.incubation_min_mean + params.incubation_span * math.exp(-p / params.incubation_dose_ref)


def sample_incubation_delays(conc: float, n: int, rng: np.random.Generator,
                             params: OutbreakSimParams = OutbreakSimParams()) -> np.ndarray:
    extra_mean = mean_incubation_delay(conc, params) - 24.0
    return 24.0 + rng.gamma(params.incubation_shape, extra_mean / params.incubation_shape, n)


def _rng(rng_seed) -> np.random.Generator:
    return rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)


def sample_height(rng: np.random.Generator, n: int | None = None):
    """Release height in feet: gamma(2, 350), so about 93% fall under 1500 ft."""
    return rng.gamma(2.0, 350.0, n)


def expected_infections(scenario: ReleaseScenario, centroids: Mapping[str, ZipCentroid],
                        population: Mapping[str, float], params: OutbreakSimParams = OutbreakSimParams()) -> float:
    sub = subarea_concentrations(scenario, centroids, params)
    return float(sum(population.get(z, 0) * (-np.expm1(-params.dose_scale * c)).mean() for z, c in sub.items()))


def sample_release(centroids: Mapping[str, ZipCentroid], population: Mapping[str, float], rng_seed=None,
                   amount: float = 1.0, start: datetime | None = None, end: datetime | None = None,
                   weather: Sequence[WeatherRow] | None = None, exclude: Sequence[str] = (),
                   params: OutbreakSimParams = OutbreakSimParams()) -> ReleaseScenario:
    """Draw a release scenario.

    Weather comes from a random row of the table; height from
    :func:`sample_height`; the release zip with probability proportional
    to the expected number of infections it would cause under that
    weather (plus a small floor so every zip stays possible). ``exclude``
    removes zips, e.g. ones already used in a batch.
    """
    rng = _rng(rng_seed)
    zips = [z for z in centroids if z not in set(exclude)]
    if not zips:
        raise ValueError("no candidate release zips")
    weather = weather or load_weather()
    w = weather[int(rng.integers(len(weather)))]
    height = float(sample_height(rng))
    start = start or datetime(2002, 1, 1, tzinfo=timezone.utc)
    end = end or datetime(2003, 1, 1, tzinfo=timezone.utc)
    minutes = int((end - start).total_seconds() // 60)
    when = start + timedelta(minutes=int(rng.integers(minutes)))
    scores = np.array([expected_infections(
        ReleaseScenario(z, height, 1.0, when, w.wind_direction, w.wind_speed, w.stability_class),
        centroids, population, params) for z in zips]) if len(zips) > 1 else np.ones(1)
    scores = scores + 1e-3 * max(scores.max(), 1e-12)
    z = zips[int(rng.choice(len(zips), p=scores / scores.sum()))]
    return ReleaseScenario(z, height, amount, when, w.wind_direction, w.wind_speed, w.stability_class)


def generate_outbreak(scenario: ReleaseScenario, population: Mapping[str, int],
                      centroids: Mapping[str, ZipCentroid], params: OutbreakSimParams = OutbreakSimParams(),
                      rng_seed=None) -> list[EdCase]:
    """Outbreak ED arrivals (zip and time only), sorted by time."""
    rng = _rng(rng_seed)
    sub = subarea_concentrations(scenario, centroids, params)
    cases = []
    for z in sorted(sub):
        n_pop = int(population.get(z, 0))
        conc = sub[z]
        if n_pop <= 0 or not (conc > 0).any():
            continue
        shares = np.full(conc.size, n_pop // conc.size)
        shares[: n_pop % conc.size] += 1
        infected = rng.binomial(shares, -np.expm1(-params.dose_scale * conc))
        for c, n in zip(conc, infected):
            if n == 0:
                continue
            for h in sample_incubation_delays(float(c), int(n), rng, params):
                ts = scenario.release_datetime + timedelta(seconds=round(float(h) * 3600.0))
                cases.append(EdCase(ts, z, None, None, "true"))
    cases.sort(key=lambda c: (c.timestamp, c.zip))
    return cases


def complete_cases(cases: Sequence[EdCase], person_net: Network, rng_seed=None) -> list[EdCase]:
    """Fill in age and gender from the person model given zip and a respiratory admission."""
    rng = _rng(rng_seed)
    tables: dict[str, np.ndarray] = {}
    by_zip: dict[str, list[int]] = {}
    for k, c in enumerate(cases):
        by_zip.setdefault(c.zip, []).append(k)
    out: list[EdCase | None] = [None] * len(cases)
    for z in sorted(by_zip):
        idx = by_zip[z]
        if z not in tables:
            tables[z] = demographic_conditional(person_net, z)
        p = tables[z].ravel()
        draws = rng.choice(p.size, size=len(idx), p=p / p.sum())
        for k, d in zip(idx, draws):
            age, g = divmod(int(d), len(GENDERS))
            c = cases[k]
            out[k] = EdCase(c.timestamp, c.zip, age, GENDERS[g], "true")
    return out  # type: ignore[return-value]


@dataclass
class BackgroundRates:
    """Per-cell daily admission probability and respiratory status given admission."""

    cells: list[tuple[str, int, str]]
    counts: np.ndarray
    admit_prob: np.ndarray          # per person per day
    resp_given_admit: np.ndarray    # (n_cells, 3) over RESP_ADMIT_STATES

    @property
    def hourly_rate(self) -> float:
        return float((self.counts * self.admit_prob).sum() / 24.0)


def background_rates(census: Mapping[tuple[str, int, str], int], person_net: Network) -> BackgroundRates:
    """Admission rates implied by the person model when there is no release."""
    given = {TIME: "never", LOCATION: NOWHERE}
    interface = [TIME, LOCATION]
    if ANGLE in person_net:
        given[ANGLE] = person_net.states(ANGLE)[0]
        interface.append(ANGLE)
    f = bn_core.joint_factor(person_net, given, keep=(HOME_ZIP, AGE, GENDER, ADMIT, RESP_ADMIT), drop=interface)
    today = person_net.state_index(ADMIT, ADMISSION_TRIPLE["today"])
    cells = sorted(c for c, n in census.items() if n > 0)
    zi = np.array([person_net.state_index(HOME_ZIP, z) for z, _, _ in cells], dtype=np.intp)
    ai = np.array([person_net.state_index(AGE, str(a)) for _, a, _ in cells], dtype=np.intp)
    gi = np.array([person_net.state_index(GENDER, g) for _, _, g in cells], dtype=np.intp)
    cell_f = f[zi, ai, gi]                       # (n_cells, n_admit, 3)
    marg = cell_f.sum(axis=(1, 2))
    admitted = cell_f[:, today, :]
    admit_prob = admitted.sum(axis=1) / marg
    with np.errstate(invalid="ignore", divide="ignore"):
        resp = np.where(admitted.sum(axis=1, keepdims=True) > 0,
                        admitted / admitted.sum(axis=1, keepdims=True), 0.0)
    counts = np.array([census[c] for c in cells], dtype=np.float64)
    return BackgroundRates(cells, counts, admit_prob, resp)


def generate_background(census: Mapping[tuple[str, int, str], int], person_net: Network,
                        start: datetime, end: datetime, rng_seed=None, rate_scale: float = 1.0,
                        rates: BackgroundRates | None = None) -> list[EdCase]:
    """Non-anthrax ED arrivals, Poisson per hour, uniform within the hour."""
    rng = _rng(rng_seed)
    rates = rates or background_rates(census, person_net)
    weight = rates.counts * rates.admit_prob * rate_scale
    lam = float(weight.sum() / 24.0)
    out: list[EdCase] = []
    if lam <= 0.0:
        return out
    p = weight / weight.sum()
    cum_resp = np.cumsum(rates.resp_given_admit, axis=1)
    t = start
    while t < end:
        hour_end = min(t + timedelta(hours=1), end)
        span = (hour_end - t).total_seconds()
        n = int(rng.poisson(lam * span / 3600.0))
        if n:
            cells = rng.choice(len(p), size=n, p=p)
            offsets = np.sort(rng.uniform(0.0, span, n))
            u = rng.random(n)
            for cell, off, uu in zip(cells, offsets, u):
                z, a, g = rates.cells[int(cell)]
                r = RESP_ADMIT_STATES[int(np.searchsorted(cum_resp[cell], uu * cum_resp[cell, -1], side="right"))]
                ts = t + timedelta(seconds=int(off))
                out.append(EdCase(ts, z, a, g, r))
        t = hour_end
    return out


def _check_sorted(stream: Sequence[EdCase], name: str) -> None:
    for a, b in zip(stream, stream[1:]):
        if b.timestamp < a.timestamp:
            raise UnsortedInput(f"{name} stream is not sorted by timestamp")


def inject(background: Sequence[EdCase], outbreak: Sequence[EdCase]) -> list[EdCase]:
    """Merge two time-sorted streams; background first on equal timestamps."""
    _check_sorted(background, "background")
    _check_sorted(outbreak, "outbreak")
    return list(heapq.merge(background, outbreak, key=lambda c: c.timestamp))
