"""Synthetic monitored region: zip centroids and a census.

Stands in for real census tables. The default region has 101 zips laid
out on a jittered grid about 2.7 miles apart around downtown Pittsburgh,
plus the catch-all ``other`` zip for out-of-region ED patients.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .cases import GENDERS, ParseError
from .exposure_spatial import ZipCentroid, offset_point
from .person_model import OTHER_ZIP

log = logging.getLogger(__name__)

CENTER = ZipCentroid("center", 40.4406, -79.9959)
AGE_PYRAMID = (0.12, 0.12, 0.13, 0.13, 0.14, 0.14, 0.10, 0.07, 0.05)
Census = Mapping[tuple[str, int, str], int]


class UnknownZip(ParseError):
    pass


@dataclass
class Region:
    zips: tuple[str, ...]
    centroids: dict[str, ZipCentroid]
    census: dict[tuple[str, int, str], int]
    other_zip: str = OTHER_ZIP

    @property
    def home_zips(self) -> tuple[str, ...]:
        return self.zips + (self.other_zip,)

    @property
    def population_size(self) -> int:
        return sum(self.census.values())

    def zip_population(self) -> dict[str, int]:
        out = {z: 0 for z in self.home_zips}
        for (z, _, _), n in self.census.items():
            out[z] += n
        return out


def synthesize_region(n_zips: int = 101, population: int = 1_400_000, seed: int = 0,
                      spacing_miles: float = 2.7, other_fraction: float = 0.02,
                      n_ages: int = 9) -> Region:
    rng = np.random.default_rng(seed)
    zips = tuple(str(15201 + k) for k in range(n_zips))
    side = int(np.ceil(np.sqrt(n_zips)))
    cells = [(r, c) for r in range(side) for c in range(side)][:n_zips]
    centroids = {}
    for z, (r, c) in zip(zips, cells):
        east = (c - (side - 1) / 2) * spacing_miles + rng.uniform(-0.3, 0.3) * spacing_miles
        north = ((side - 1) / 2 - r) * spacing_miles + rng.uniform(-0.3, 0.3) * spacing_miles
        p = offset_point(CENTER, east, north, z)
        centroids[z] = ZipCentroid(z, round(p.lat, 6), round(p.lon, 6))
    weights = rng.lognormal(0.0, 0.5, n_zips)
    share = np.concatenate([weights / weights.sum() * (1.0 - other_fraction), [other_fraction]])
    per_zip = rng.multinomial(population, share)
    pyramid = np.resize(np.asarray(AGE_PYRAMID), n_ages)
    pyramid = pyramid / pyramid.sum()
    census: dict[tuple[str, int, str], int] = {}
    for z, n in zip(zips + (OTHER_ZIP,), per_zip):
        ages = rng.dirichlet(300.0 * pyramid)
        female = rng.beta(520, 480)
        probs = np.concatenate([ages * female, ages * (1.0 - female)])
        counts = rng.multinomial(int(n), probs)
        for gi, g in enumerate(GENDERS):
            for a in range(n_ages):
                census[(z, a, g)] = int(counts[gi * n_ages + a])
    return Region(zips, centroids, census)


def single_zip_region(zip: str = "15213", population: int = 10_000, seed: int = 0) -> Region:
    r = synthesize_region(1, population, seed, other_fraction=0.0)
    old = r.zips[0]
    census = {(zip if z == old else z, a, g): n for (z, a, g), n in r.census.items()}
    c = r.centroids[old]
    return Region((zip,), {zip: ZipCentroid(zip, c.lat, c.lon)}, census)


# -- file formats -------------------------------------------------------------

def write_centroids(centroids: Mapping[str, ZipCentroid], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["zip", "lat", "lon"])
    for z, c in centroids.items():
        w.writerow([z, repr(c.lat), repr(c.lon)])


def read_centroids(fh) -> dict[str, ZipCentroid]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["zip", "lat", "lon"]:
        raise ParseError("expected header zip,lat,lon", 1)
    out = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            z, lat, lon = (x.strip() for x in row)
            c = ZipCentroid(z, float(lat), float(lon))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if z in out:
            raise ParseError(f"duplicate zip {z}", lineno)
        out[z] = c
    return out


def write_census(census: Census, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["zip", "age_decile", "gender", "count"])
    for (z, a, g), n in census.items():
        w.writerow([z, a, g, n])


def parse_census(fh, known_zips=None, n_ages: int = 9) -> dict[tuple[str, int, str], int]:
    """Read a ``zip,age_decile,gender,count`` CSV.

    Duplicate cells are summed with a warning. Zips outside ``known_zips``
    (when given) are rejected.
    """
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["zip", "age_decile", "gender", "count"]:
        raise ParseError("expected header zip,age_decile,gender,count", 1)
    known = set(known_zips) if known_zips is not None else None
    out: dict[tuple[str, int, str], int] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", lineno)
        z, a, g, n = (x.strip() for x in row)
        try:
            age, count = int(a), int(n)
        except ValueError:
            raise ParseError("age_decile and count must be integers", lineno) from None
        if count < 0:
            raise ParseError(f"negative count {count}", lineno)
        if not 0 <= age < n_ages:
            raise ParseError(f"age decile {age} out of range", lineno)
        if g not in GENDERS:
            raise ParseError(f"unknown gender {g!r}", lineno)
        if known is not None and z not in known:
            raise UnknownZip(f"unknown zip {z!r}", lineno)
        key = (z, age, g)
        if key in out:
            log.warning("census line %d repeats cell %s; counts summed", lineno, key)
            out[key] += count
        else:
            out[key] = count
    return out
