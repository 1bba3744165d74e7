"""Streaming population likelihood over interface configurations.

People with identical evidence form an equivalence class. For every
interface configuration ``i`` the table keeps

* ``S[i]``: sum over classes with nonzero likelihood of ``N * log P(e | i)``
* ``Z[i]``: number of people whose class has likelihood exactly 0 under ``i``

so the population log-likelihood is ``S[i]`` when ``Z[i] == 0`` and
``-inf`` otherwise. A person changing class updates both vectors by the
difference of two cached class vectors, never touching the rest of the
population.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from . import bn_core
from .bn_core import Network
from .cases import EdCase, local_date
from .outbreak_model import OutbreakModel
from .person_model import ADMISSION_DAYS, PersonEvidence, evidence_map

log = logging.getLogger(__name__)

DEFAULT_RESYNC_INTERVAL = 10_000


class EngineError(ValueError):
    pass


class NegativeCount(EngineError):
    pass


class TotalMismatch(EngineError):
    pass


class EmptyOriginClass(EngineError):
    pass


class AllConfigsImpossible(EngineError):
    pass


class ClassLikelihoods:
    """Lazily computed, permanently cached class likelihood vectors.

    ``log_vector(key)`` is ``log P(person evidence = key | I = i)`` for every
    configuration of ``model``, computed in one elimination pass that keeps
    the interface variables as free axes.
    """

    def __init__(self, person_net: Network, model: OutbreakModel,
                 evidence_of: Callable[[Hashable], Mapping] = evidence_map):
        model.check_person_network(person_net)
        self.person_net = person_net
        self.model = model
        self.evidence_of = evidence_of
        self.vars = tuple(v for v in model.interface_vars if v in person_net)
        cols = [[] for _ in self.vars]
        for cfg in model.configs:
            a = cfg.assignment()
            for k, v in enumerate(self.vars):
                cols[k].append(person_net.state_index(v, a[v]) if v in a else 0)
        self._index = tuple(np.array(c, dtype=np.intp) for c in cols)
        self._cache: dict[Hashable, np.ndarray] = {}

    @property
    def n_configs(self) -> int:
        return len(self.model.configs)

    def __len__(self):
        return len(self._cache)

    def __contains__(self, key):
        return key in self._cache

    def probabilities(self, key: Hashable) -> np.ndarray:
        f = bn_core.joint_factor(self.person_net, self.evidence_of(key), keep=self.vars, drop=self.vars)
        if not self.vars:
            return np.full(self.n_configs, float(f))
        return np.asarray(f[self._index], dtype=np.float64)

    def log_vector(self, key: Hashable) -> np.ndarray:
        vec = self._cache.get(key)
        if vec is None:
            p = self.probabilities(key)
            with np.errstate(divide="ignore"):
                vec = np.log(p)
            vec.setflags(write=False)
            self._cache[key] = vec
        return vec

    def precompute(self, keys) -> None:
        for k in keys:
            self.log_vector(k)


@dataclass
class TrackedCase:
    case_id: int
    key: PersonEvidence
    origin: PersonEvidence
    admission_date: date


@dataclass
class PosteriorResult:
    p_release: float
    posterior: dict[str, float]
    log_likelihood: dict[str, float]
    marginals: dict[str, dict[str, float]] = field(default_factory=dict)

    def map_state(self, var: str) -> str | None:
        m = self.marginals.get(var)
        if not m:
            return None
        return max(m, key=lambda s: (m[s], s))


class EquivalenceClassTable:
    """Class counts and per-configuration likelihood accumulators."""

    def __init__(self, likelihoods: ClassLikelihoods, resync_interval: int = DEFAULT_RESYNC_INTERVAL,
                 utc_offset_hours: float = 0.0):
        self.likelihoods = likelihoods
        self.counts: dict[Hashable, int] = {}
        n = likelihoods.n_configs
        self.S = np.zeros(n)
        self.Z = np.zeros(n, dtype=np.int64)
        self.tracked_cases: list[TrackedCase] = []
        self.current_date: date | None = None
        self.resync_interval = resync_interval
        self.utc_offset_hours = utc_offset_hours
        self.updates_since_resync = 0
        self._next_case_id = 0

    # -- generic class bookkeeping ------------------------------------------

    @property
    def population_size(self) -> int:
        return sum(self.counts.values())

    def _accumulate(self, key, n: int) -> None:
        lv = self.likelihoods.log_vector(key)
        finite = np.isfinite(lv)
        self.S += np.where(finite, n * lv, 0.0)
        self.Z += np.where(finite, 0, n)

    def add(self, key: Hashable, count: int) -> None:
        """Add ``count`` people to class ``key``."""
        if count < 0:
            raise NegativeCount(f"negative count {count} for {key}")
        if count == 0:
            return
        self.counts[key] = self.counts.get(key, 0) + count
        self._accumulate(key, count)

    def move(self, origin: Hashable, dest: Hashable) -> None:
        """Move one person between classes, updating the accumulators incrementally."""
        if self.counts.get(origin, 0) < 1:
            raise EmptyOriginClass(f"no one left in class {origin}")
        if origin == dest:
            return
        lo = self.likelihoods.log_vector(origin)
        ld = self.likelihoods.log_vector(dest)
        fo, fd = np.isfinite(lo), np.isfinite(ld)
        self.S += np.where(fd, ld, 0.0) - np.where(fo, lo, 0.0)
        self.Z += fo.astype(np.int64) - fd.astype(np.int64)
        self.counts[origin] -= 1
        if self.counts[origin] == 0:
            del self.counts[origin]
        self.counts[dest] = self.counts.get(dest, 0) + 1
        self.updates_since_resync += 1
        if self.resync_interval and self.updates_since_resync >= self.resync_interval:
            self.resync()

    def full_recompute(self, keys: Sequence[Hashable] | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Recompute (S, Z) from scratch; ``keys`` fixes the class iteration order."""
        keys = list(self.counts) if keys is None else list(keys)
        n = self.likelihoods.n_configs
        if not keys:
            return np.zeros(n), np.zeros(n, dtype=np.int64)
        L = np.stack([self.likelihoods.log_vector(k) for k in keys])
        N = np.array([self.counts[k] for k in keys], dtype=np.float64)
        finite = np.isfinite(L)
        S = N @ np.where(finite, L, 0.0)
        Z = (np.array([self.counts[k] for k in keys], dtype=np.int64) @ (~finite).astype(np.int64))
        return S, Z

    def resync(self) -> None:
        self.S, self.Z = self.full_recompute()
        self.updates_since_resync = 0

    def population_log_likelihoods(self) -> np.ndarray:
        return np.where(self.Z == 0, self.S, -np.inf)

    def population_log_likelihood(self, config) -> float:
        """log P(e | I = config); ``config`` is a config object or its index."""
        i = config if isinstance(config, (int, np.integer)) else self.likelihoods.model.configs.index(config)
        return float(self.S[i]) if self.Z[i] == 0 else -np.inf

    def outbreak_posterior(self, model: OutbreakModel | None = None, g: Mapping[str, str] | None = None,
                           marginals: bool = True) -> PosteriorResult:
        """Posterior of the outbreak node given the population and global evidence."""
        model = model or self.likelihoods.model
        L = self.population_log_likelihoods()
        if not np.isfinite(L).any():
            raise AllConfigsImpossible("every interface configuration has zero likelihood")
        prior = model.prior_matrix(g)
        states = model.target_states
        with np.errstate(divide="ignore"):
            log_prior = np.log(prior)
        terms = L[None, :] + log_prior
        loglik = np.array([logsumexp(row) if np.isfinite(row).any() else -np.inf for row in terms])
        tprior = np.array([model.global_prior(t, g) for t in states])
        with np.errstate(divide="ignore"):
            joint = loglik + np.log(tprior)
        if not np.isfinite(joint).any():
            raise AllConfigsImpossible("evidence is impossible under every outbreak state")
        post = np.exp(joint - logsumexp(joint[np.isfinite(joint)]))
        posterior = dict(zip(states, post.tolist()))
        result = PosteriorResult(posterior[model.positive_state], posterior, dict(zip(states, loglik.tolist())))
        if marginals:
            row = terms[states.index(model.positive_state)]
            if np.isfinite(row).any():
                w = np.exp(row - logsumexp(row))
                for var in model.interface_vars:
                    idx = model.assignment_index[var]
                    used = idx >= 0
                    states = model.global_net.states(var)
                    acc = np.bincount(idx[used], weights=w[used], minlength=len(states))
                    present = np.zeros(len(states), dtype=bool)
                    present[idx[used]] = True
                    result.marginals[var] = {states[k]: float(acc[k]) for k in np.flatnonzero(present)}
        return result

    def copy(self) -> "EquivalenceClassTable":
        """Independent table sharing only the (read-only) likelihood cache."""
        other = EquivalenceClassTable(self.likelihoods, self.resync_interval, self.utc_offset_hours)
        other.counts = dict(self.counts)
        other.S, other.Z = self.S.copy(), self.Z.copy()
        other.tracked_cases = [TrackedCase(t.case_id, t.key, t.origin, t.admission_date) for t in self.tracked_cases]
        other.current_date = self.current_date
        other.updates_since_resync = self.updates_since_resync
        other._next_case_id = self._next_case_id
        return other

    # -- population stream ---------------------------------------------------

    @classmethod
    def init_background(cls, census: Mapping[tuple[str, int, str], int], population_size: int,
                        likelihoods: ClassLikelihoods, start_date: date | None = None,
                        **kwargs) -> "EquivalenceClassTable":
        """Place every census resident in their never-admitted class."""
        total = 0
        for cell, n in census.items():
            if n < 0:
                raise NegativeCount(f"negative census count {n} for {cell}")
            total += n
        if total != population_size:
            raise TotalMismatch(f"census totals {total}, expected {population_size}")
        table = cls(likelihoods, **kwargs)
        for (z, a, g) in sorted(census, key=lambda c: (c[0], c[1], c[2])):
            n = census[(z, a, g)]
            if n:
                key = PersonEvidence(z, int(a), g)
                table.counts[key] = table.counts.get(key, 0) + n
        table.S, table.Z = table.full_recompute()
        table.current_date = start_date
        return table

    def case_key(self, case: EdCase) -> PersonEvidence | None:
        d = local_date(case.timestamp, self.utc_offset_hours)
        if self.current_date is None:
            self.current_date = d
        lag = (self.current_date - d).days
        if lag < 0:
            raise EngineError(f"case dated {d} is ahead of the table date {self.current_date}")
        if lag > 2:
            return None
        day = ADMISSION_DAYS[1 + lag]
        return PersonEvidence(case.zip, int(case.age_decile), case.gender, day, case.respiratory)

    def apply_case_arrival(self, case: EdCase) -> TrackedCase | None:
        """Move an ED arrival out of their background class.

        Returns the tracked case, or None for an arrival too old to matter.

        Raises:
            EmptyOriginClass: no one is left in the matching background class.
        """
        if case.age_decile is None or case.gender is None:
            raise EngineError("case lacks demographics")
        key = self.case_key(case)
        if key is None:
            return None
        origin = key.background
        self.move(origin, key)
        tc = TrackedCase(self._next_case_id, key, origin, local_date(case.timestamp, self.utc_offset_hours))
        self._next_case_id += 1
        self.tracked_cases.append(tc)
        return tc

    def advance_day(self, new_date: date) -> None:
        """Roll relative admission days forward to ``new_date``."""
        if self.current_date is None:
            self.current_date = new_date
            return
        if new_date <= self.current_date:
            raise EngineError(f"{new_date} is not after {self.current_date}")
        steps = min((new_date - self.current_date).days, 3)
        for _ in range(steps):
            still = []
            for tc in self.tracked_cases:
                nxt = tc.key.shifted()
                self.move(tc.key, tc.origin if nxt is None else nxt)
                if nxt is not None:
                    tc.key = nxt
                    still.append(tc)
            self.tracked_cases = still
        self.current_date = new_date


def init_background(census, population_size, likelihoods, start_date=None, **kwargs) -> EquivalenceClassTable:
    return EquivalenceClassTable.init_background(census, population_size, likelihoods, start_date, **kwargs)


def outbreak_posterior(table: EquivalenceClassTable, model: OutbreakModel | None = None,
                       g: Mapping[str, str] | None = None) -> PosteriorResult:
    return table.outbreak_posterior(model, g)
