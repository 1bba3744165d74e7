"""Rotated-strip exposure regions around a hypothesized release zip."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

EARTH_RADIUS_MILES = 3958.8
MILES_PER_DEGREE_LAT = 2.0 * math.pi * EARTH_RADIUS_MILES / 360.0

ANGLES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
_S = math.sqrt(0.5)
# unit vectors in the local (east, north) frame
ANGLE_VECTORS = {
    "N": (0.0, 1.0), "NE": (_S, _S), "E": (1.0, 0.0), "SE": (_S, -_S),
    "S": (0.0, -1.0), "SW": (-_S, -_S), "W": (-1.0, 0.0), "NW": (-_S, _S),
}


class MissingCentroid(KeyError):
    pass


@dataclass(frozen=True)
class ZipCentroid:
    zip: str
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} out of range for zip {self.zip}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} out of range for zip {self.zip}")


@dataclass(frozen=True)
class ExposureParams:
    half_distance: float = 3.0   # miles over which exposure halves
    rect_width: float = 3.0      # miles

    def __post_init__(self):
        if not (self.half_distance > 0 and self.rect_width > 0):
            raise ValueError("half_distance and rect_width must be positive")


def centroid_distance(a: ZipCentroid, b: ZipCentroid) -> float:
    """Great-circle (haversine) distance in statute miles."""
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dp = p2 - p1
    dl = math.radians(b.lon - a.lon)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2.0 * EARTH_RADIUS_MILES * math.asin(min(1.0, math.sqrt(h)))


def local_offset(origin: ZipCentroid, point: ZipCentroid) -> tuple[float, float]:
    """Equirectangular (east, north) offset of ``point`` from ``origin`` in miles."""
    east = (point.lon - origin.lon) * math.cos(math.radians(origin.lat)) * MILES_PER_DEGREE_LAT
    north = (point.lat - origin.lat) * MILES_PER_DEGREE_LAT
    return east, north


def offset_point(origin: ZipCentroid, east: float, north: float, zip: str = "") -> ZipCentroid:
    """Inverse of :func:`local_offset`."""
    lat = origin.lat + north / MILES_PER_DEGREE_LAT
    lon = origin.lon + east / (MILES_PER_DEGREE_LAT * math.cos(math.radians(origin.lat)))
    return ZipCentroid(zip, lat, lon)


def in_rotated_rectangle(release: ZipCentroid, angle: str, point: ZipCentroid,
                         params: ExposureParams = ExposureParams()) -> bool:
    """Whether ``point`` lies in the half-infinite strip leaving ``release`` along ``angle``.

    The strip is ``params.rect_width`` wide, centred on the ray; its edge at
    the release centroid counts as inside.
    """
    ux, uy = ANGLE_VECTORS[angle]
    east, north = local_offset(release, point)
    along = east * ux + north * uy
    across = -east * uy + north * ux
    return along >= 0.0 and abs(across) <= params.rect_width / 2.0


def exposure_probability(release_zip: str, angle: str, home_zip: str,
                         centroids: Mapping[str, ZipCentroid],
                         params: ExposureParams = ExposureParams()) -> float:
    """Probability that a resident of ``home_zip`` is exposed to a release.

    Residents of the release zip are exposed with certainty whatever the
    angle. Elsewhere, zips whose centroid falls in the strip get
    ``0.5 ** (distance / half_distance)``, everything else 0.
    """
    if release_zip == home_zip:
        return 1.0
    try:
        rel = centroids[release_zip]
        home = centroids[home_zip]
    except KeyError as exc:
        raise MissingCentroid(f"no centroid for zip {exc.args[0]!r}") from None
    if not in_rotated_rectangle(rel, angle, home, params):
        return 0.0
    # nanomile quantization keeps whole-mile distances exact
    d = round(centroid_distance(rel, home), 9)
    return 0.5 ** (d / params.half_distance)
