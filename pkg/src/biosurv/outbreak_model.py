"""Global and interface nodes: release priors and interface configurations.

The global subnetwork (target node plus any other population-wide nodes,
with the interface nodes as its leaves) is an ordinary
:class:`~biosurv.bn_core.Network`, so adding global nodes is a matter of
building a different network.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import bn_core
from .bn_core import CptSpec, Network, VariableSpec
from .exposure_spatial import ANGLES
from .person_model import (ANGLE, LOCATION, NONSPATIAL, NOWHERE, SPATIAL, TIME, TIME_STATES,
                           VARIANTS)

RELEASE = "anthrax_release"
NOT_APPLICABLE = "not_applicable"
RELEASE_TIMES = TIME_STATES[1:]


@dataclass(frozen=True, order=True)
class InterfaceConfig:
    """One joint assignment to the interface nodes."""

    release: str
    time: str
    location: str
    angle: str = NOT_APPLICABLE

    def __post_init__(self):
        if self.release not in ("yes", "no"):
            raise ValueError("release must be 'yes' or 'no'")
        no = self.release == "no"
        if no != (self.time == "never") or no != (self.location == NOWHERE):
            raise ValueError(f"inconsistent interface config {self}")
        if no and self.angle != NOT_APPLICABLE:
            raise ValueError("a no-release config has no angle")
        if self.time not in TIME_STATES:
            raise ValueError(f"unknown release time {self.time!r}")
        if self.angle != NOT_APPLICABLE and self.angle not in ANGLES:
            raise ValueError(f"unknown angle {self.angle!r}")

    def assignment(self) -> dict[str, str]:
        a = {TIME: self.time, LOCATION: self.location}
        if self.angle != NOT_APPLICABLE:
            a[ANGLE] = self.angle
        return a


@dataclass(frozen=True)
class GenericConfig:
    """Interface configuration of an arbitrary model: a frozen assignment."""

    items: tuple[tuple[str, str], ...]

    def assignment(self) -> dict[str, str]:
        return dict(self.items)


@dataclass
class OutbreakPriors:
    """Detection priors. ``None`` distributions mean uniform."""

    p_release: float = 0.001
    time_probs: Mapping[str, float] | None = None
    location_probs: Mapping[str, float] | None = None
    angle_probs: Mapping[str, float] | None = None


class OutbreakModel:
    """Global subnetwork plus the list of valid interface configurations.

    Args:
        global_net: network over the global and interface nodes.
        target: name of the outbreak node.
        positive_state: the target state whose posterior is reported.
        interface_vars: interface node names, all present in ``global_net``.
        configs: valid configurations (objects with ``assignment()``);
            defaults to every joint state of ``interface_vars``.
    """

    def __init__(self, global_net: Network, target: str, positive_state: str,
                 interface_vars: Sequence[str], configs: Sequence | None = None,
                 variant: str | None = None):
        self.global_net = global_net
        self.target = target
        self.positive_state = positive_state
        self.interface_vars = tuple(interface_vars)
        self.variant = variant
        global_net.state_index(target, positive_state)
        for v in self.interface_vars:
            global_net.variable(v)
            if v == target:
                raise ValueError("the target cannot be an interface node")
        if configs is None:
            configs = [GenericConfig(tuple(zip(self.interface_vars, combo)))
                       for combo in itertools.product(*(global_net.states(v) for v in self.interface_vars))]
        self.configs = list(configs)
        # state index of each interface variable per config, -1 where unset
        self.assignment_index = {v: np.full(len(self.configs), -1, dtype=np.intp)
                                 for v in self.interface_vars}
        for c, cfg in enumerate(self.configs):
            for v, s in cfg.assignment().items():
                self.assignment_index[v][c] = global_net.state_index(v, s)
        self._prior_cache: dict = {}
        self._target_cache: dict = {}

    @property
    def target_states(self) -> tuple[str, ...]:
        return self.global_net.states(self.target)

    def enumerate_interface_configs(self) -> list:
        return list(self.configs)

    def global_prior(self, t: str, g: Mapping[str, str] | None = None) -> float:
        """P(target = t | global evidence g)."""
        key = tuple(sorted((g or {}).items()))
        post = self._target_cache.get(key)
        if post is None:
            post = bn_core.posterior_marginal(self.global_net, dict(g or {}), self.target)
            self._target_cache[key] = post
        return post[t]

    def _interface_posterior(self, t: str, g) -> np.ndarray:
        ev = dict(g or {})
        ev[self.target] = t
        f = bn_core.joint_factor(self.global_net, ev, keep=self.interface_vars)
        z = f.sum()
        return f / z if z > 0 else f

    def prior_matrix(self, g: Mapping[str, str] | None = None) -> np.ndarray:
        """P(I = i | T = t, g) for every target state (rows) and config (columns)."""
        key = tuple(sorted((g or {}).items()))
        hit = self._prior_cache.get(key)
        if hit is not None:
            return hit
        out = np.zeros((len(self.target_states), len(self.configs)))
        for r, t in enumerate(self.target_states):
            post = self._interface_posterior(t, g)
            for c, cfg in enumerate(self.configs):
                a = cfg.assignment()
                idx = tuple(self.global_net.state_index(v, a[v]) if v in a else slice(None)
                            for v in self.interface_vars)
                out[r, c] = float(np.sum(post[idx]))
        out.setflags(write=False)
        self._prior_cache[key] = out
        return out

    def interface_prior(self, config, t: str, g: Mapping[str, str] | None = None) -> float:
        """P(I = config | T = t, g); zero for configs inconsistent with t."""
        m = self.prior_matrix(g)
        return float(m[self.target_states.index(t), self.configs.index(config)])

    def check_person_network(self, person_net: Network) -> None:
        """Reject person networks that would break the d-separation structure.

        Interface nodes must be roots of the person network and no global
        node may appear in it, so every arc runs from I into the person.
        """
        for v in self.interface_vars:
            if v in person_net and person_net.parents(v):
                raise ValueError(f"interface node {v!r} has parents inside the person network")
        for v in self.global_net.names:
            if v not in self.interface_vars and v in person_net:
                raise ValueError(f"global node {v!r} appears inside the person network")


def enumerate_interface_configs(zips: Sequence[str], variant: str = NONSPATIAL) -> list[InterfaceConfig]:
    """The no-release config followed by every (time, location[, angle]) release."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    out = [InterfaceConfig("no", "never", NOWHERE)]
    angles = ANGLES if variant == SPATIAL else (NOT_APPLICABLE,)
    for t in RELEASE_TIMES:
        for z in zips:
            for a in angles:
                out.append(InterfaceConfig("yes", t, z, a))
    return out


def _dist(states: Sequence[str], probs: Mapping[str, float] | None) -> np.ndarray:
    if probs is None:
        return np.full(len(states), 1.0 / len(states))
    unknown = set(probs) - set(states)
    if unknown:
        raise ValueError(f"prior mentions unknown states {sorted(unknown)}")
    p = np.array([float(probs.get(s, 0.0)) for s in states])
    if (p < 0).any() or abs(p.sum() - 1.0) > bn_core.ROW_TOLERANCE:
        raise ValueError("prior distribution is not normalized")
    return p


def build_outbreak_model(zips: Sequence[str], variant: str = NONSPATIAL,
                         priors: OutbreakPriors | None = None) -> OutbreakModel:
    """The anthrax-release model: release -> time, location (, angle)."""
    priors = priors or OutbreakPriors()
    if not 0.0 <= priors.p_release <= 1.0:
        raise ValueError("p_release must lie in [0, 1]")
    zips = tuple(zips)
    locations = (NOWHERE,) + zips
    variables = [VariableSpec(RELEASE, ("no", "yes")), VariableSpec(TIME, TIME_STATES),
                 VariableSpec(LOCATION, locations)]
    time_yes = np.concatenate([[0.0], _dist(RELEASE_TIMES, priors.time_probs)])
    time_no = np.eye(len(TIME_STATES))[0]
    loc_yes = np.concatenate([[0.0], _dist(zips, priors.location_probs)])
    loc_no = np.eye(len(locations))[0]
    cpts = [CptSpec(RELEASE, (), [[1.0 - priors.p_release, priors.p_release]]),
            CptSpec(TIME, (RELEASE,), np.stack([time_no, time_yes])),
            CptSpec(LOCATION, (RELEASE,), np.stack([loc_no, loc_yes]))]
    interface = [TIME, LOCATION]
    if variant == SPATIAL:
        variables.append(VariableSpec(ANGLE, ANGLES))
        ang = _dist(ANGLES, priors.angle_probs)
        cpts.append(CptSpec(ANGLE, (RELEASE,), np.stack([np.full(len(ANGLES), 1.0 / len(ANGLES)), ang])))
        interface.append(ANGLE)
    net = bn_core.build_network(variables, cpts)
    return OutbreakModel(net, RELEASE, "yes", interface,
                         enumerate_interface_configs(zips, variant), variant=variant)


def population_location_prior(zip_population: Mapping[str, float], zips: Sequence[str]) -> dict[str, float]:
    """Release-location prior proportional to zip population."""
    w = np.array([max(0.0, float(zip_population.get(z, 0.0))) for z in zips])
    if w.sum() <= 0:
        w = np.ones(len(zips))
    w = w / w.sum()
    return dict(zip(zips, w.tolist()))
