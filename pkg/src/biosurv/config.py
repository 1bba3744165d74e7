"""Run configuration and the objects it resolves to.

A config is a JSON object whose keys are :class:`RunConfig` fields;
command-line flags override individual keys.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from . import region as region_mod
from .bn_core import Network
from .engine import DEFAULT_RESYNC_INTERVAL
from .outbreak_model import OutbreakModel, OutbreakPriors, build_outbreak_model, population_location_prior
from .person_model import (DEFAULT_HOURLY_ED_RATE, NONSPATIAL, VARIANTS, build_person_model, default_params,
                           parse_person_model)
from .region import Region


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    variant: str = NONSPATIAL
    params_path: str | None = None       # serialized person model; built from the census when absent
    census_path: str | None = None       # synthetic region when absent
    centroids_path: str | None = None
    p_release: float = 0.001
    location_prior: str = "population"   # or "uniform"
    time_probs: dict[str, float] | None = None
    angle_probs: dict[str, float] | None = None
    hourly_ed_rate: float = DEFAULT_HOURLY_ED_RATE
    cadence_per_hour: int = 1
    resync_interval: int = DEFAULT_RESYNC_INTERVAL
    utc_offset_hours: float = 0.0
    seed: int = 0
    n_zips: int = 101
    population: int = 1_400_000

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.location_prior not in ("uniform", "population"):
            raise ConfigError("location_prior must be 'uniform' or 'population'")
        if not 0.0 <= self.p_release <= 1.0:
            raise ConfigError("p_release must lie in [0, 1]")
        if int(self.cadence_per_hour) != self.cadence_per_hour or self.cadence_per_hour < 1:
            raise ConfigError("cadence_per_hour must be an integer >= 1")
        if 60 % int(self.cadence_per_hour):
            raise ConfigError("cadence_per_hour must divide 60")
        if self.resync_interval < 0:
            raise ConfigError("resync_interval must be nonnegative")
        if (self.census_path is None) != (self.centroids_path is None):
            raise ConfigError("census_path and centroids_path go together")
        for p in (self.params_path, self.census_path, self.centroids_path):
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"no such file: {p}")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**dict(data))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | None, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        data: dict[str, Any] = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    data = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a JSON object")
            base = Path(path).parent
            for k in ("params_path", "census_path", "centroids_path"):
                if data.get(k) is not None:
                    data[k] = str(base / data[k])
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass
class Setup:
    """Everything a run needs, resolved from a config."""

    config: RunConfig
    region: Region
    person_net: Network
    model: OutbreakModel
    extra: dict = field(default_factory=dict)


def load_region(config: RunConfig) -> Region:
    if config.census_path is None:
        return region_mod.synthesize_region(config.n_zips, config.population, config.seed)
    with open(config.centroids_path, encoding="utf-8") as fh:
        centroids = region_mod.read_centroids(fh)
    zips = tuple(centroids)
    with open(config.census_path, encoding="utf-8") as fh:
        census = region_mod.parse_census(fh, known_zips=zips + (region_mod.OTHER_ZIP,))
    return Region(zips, centroids, census)


def resolve(config: RunConfig) -> Setup:
    reg = load_region(config)
    if config.params_path is not None:
        with open(config.params_path, encoding="utf-8") as fh:
            net, variant, zips = parse_person_model(fh.read())
        if variant != config.variant:
            raise ConfigError(f"parameter file is {variant} but config asks for {config.variant}")
        if tuple(zips) != reg.zips:
            raise ConfigError("parameter file zips differ from the region's zips")
    else:
        params = default_params(reg.census, reg.zips, reg.centroids, hourly_ed_rate=config.hourly_ed_rate)
        net = build_person_model(params, config.variant)
    loc = population_location_prior(reg.zip_population(), reg.zips) if config.location_prior == "population" else None
    priors = OutbreakPriors(config.p_release, config.time_probs, loc, config.angle_probs)
    model = build_outbreak_model(reg.zips, config.variant, priors)
    return Setup(config, reg, net, model)
