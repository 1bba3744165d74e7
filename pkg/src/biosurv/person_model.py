"""The per-person anthrax surveillance subnetwork.

Temporal nodes use day triples: three characters, oldest day first, each
``A`` (absent) or ``I`` (present), so ``AAI`` means "started today".
Disease and symptom nodes take the monotone-onset states ``AAA, AAI, AII,
III``; admission nodes mark the single admission day (``AAA, IAA, AIA,
AAI``), and the OR of the two admission causes can in principle reach any
of the eight triples.

Arc structure::

    home_zip -> age_decile, gender
    time_of_release, location_of_release, home_zip -> anthrax_infection        (nonspatial)
    location_of_release, angle_of_release, home_zip -> exposed_to_anthrax      (spatial)
    exposed_to_anthrax, time_of_release -> anthrax_infection                   (spatial)
    age_decile, gender -> other_ed_disease
    anthrax_infection -> respiratory_from_anthrax, ed_admission_due_to_anthrax
    other_ed_disease -> respiratory_from_other, ed_admission_due_to_other
    respiratory_from_* -> respiratory_symptoms (OR)
    ed_admission_due_to_* -> ed_admission (OR)
    respiratory_symptoms, ed_admission -> respiratory_when_admitted
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import bn_core
from .bn_core import CptSpec, Network, VariableSpec
from .exposure_spatial import ANGLES, ExposureParams, ZipCentroid, exposure_probability

TIME = "time_of_release"
LOCATION = "location_of_release"
ANGLE = "angle_of_release"
HOME_ZIP = "home_zip"
AGE = "age_decile"
GENDER = "gender"
EXPOSED = "exposed_to_anthrax"
ANTHRAX = "anthrax_infection"
OTHER = "other_ed_disease"
RESP_ANTHRAX = "respiratory_from_anthrax"
RESP_OTHER = "respiratory_from_other"
RESP = "respiratory_symptoms"
RESP_ADMIT = "respiratory_when_admitted"
ADMIT_ANTHRAX = "ed_admission_due_to_anthrax"
ADMIT_OTHER = "ed_admission_due_to_other"
ADMIT = "ed_admission"

NONSPATIAL, SPATIAL = "nonspatial", "spatial"
VARIANTS = (NONSPATIAL, SPATIAL)

ONSET_STATES = ("AAA", "AAI", "AII", "III")
EVENT_STATES = ("AAA", "IAA", "AIA", "AAI")
ALL_TRIPLES = tuple("".join(p) for p in itertools.product("AI", repeat=3))
TIME_STATES = ("never", "today", "yesterday", "day_before")
ADMISSION_DAYS = TIME_STATES
NOWHERE = "nowhere"
OTHER_ZIP = "other"
GENDERS = ("female", "male")
RESP_ADMIT_STATES = ("true", "false", "unknown")

# character position of each relative day inside a triple
DAY_POSITION = {"today": 2, "yesterday": 1, "day_before": 0}
ADMISSION_TRIPLE = {"never": "AAA", "today": "AAI", "yesterday": "AIA", "day_before": "IAA"}

# ~26 ED arrivals per hour across 1.4M residents
DEFAULT_HOURLY_ED_RATE = 26.0 / 1_400_000
DEFAULT_AGE_RISK = (1.3, 0.8, 1.0, 1.0, 0.9, 0.9, 1.0, 1.2, 1.6)
DEFAULT_GENDER_RISK = (1.05, 0.95)


def or_combine(a: str, b: str) -> str:
    """Per-day logical OR of two day triples; ``I`` dominates ``A``."""
    if len(a) != 3 or len(b) != 3 or set(a + b) - {"A", "I"}:
        raise ValueError(f"not day triples: {a!r}, {b!r}")
    return "".join("I" if "I" in (x, y) else "A" for x, y in zip(a, b))


def onset_position(triple: str) -> int | None:
    """Position of the first ``I`` (0 = day before yesterday), or None."""
    i = triple.find("I")
    return None if i < 0 else i


def _onset_triple(pos: int) -> str:
    return "A" * pos + "I" * (3 - pos)


def _event_triple(pos: int) -> str:
    return "".join("I" if k == pos else "A" for k in range(3))


@dataclass(frozen=True)
class PersonEvidence:
    """Everything observed about one person; doubles as the equivalence-class key."""

    home_zip: str
    age_decile: int
    gender: str
    admission_day: str = "never"
    respiratory_at_admission: str = "unknown"

    def __post_init__(self):
        if self.admission_day not in ADMISSION_DAYS:
            raise ValueError(f"admission_day must be one of {ADMISSION_DAYS}")
        if self.respiratory_at_admission not in RESP_ADMIT_STATES:
            raise ValueError(f"respiratory_at_admission must be one of {RESP_ADMIT_STATES}")
        if self.admission_day == "never" and self.respiratory_at_admission != "unknown":
            raise ValueError("a person never admitted has unknown respiratory status")
        if self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}")

    def sort_key(self):
        return (self.home_zip, self.age_decile, self.gender,
                ADMISSION_DAYS.index(self.admission_day),
                RESP_ADMIT_STATES.index(self.respiratory_at_admission))

    def __lt__(self, other: "PersonEvidence"):
        return self.sort_key() < other.sort_key()

    @property
    def background(self) -> "PersonEvidence":
        """The never-admitted class this person belongs to otherwise."""
        return PersonEvidence(self.home_zip, self.age_decile, self.gender)

    def shifted(self) -> "PersonEvidence | None":
        """The same evidence one day later; None once the admission ages out."""
        nxt = {"today": "yesterday", "yesterday": "day_before", "day_before": None}
        if self.admission_day == "never":
            return self
        day = nxt[self.admission_day]
        if day is None:
            return None
        return PersonEvidence(self.home_zip, self.age_decile, self.gender, day,
                              self.respiratory_at_admission)


def evidence_map(e: PersonEvidence) -> dict:
    """Map a :class:`PersonEvidence` onto person-network evidence.

    Respiratory status is evidence on ``respiratory_when_admitted`` only for
    today's admissions. For older admissions that node is ``unknown`` by
    construction, and a recorded status instead constrains the matching day
    of ``respiratory_symptoms``.
    """
    ev = {HOME_ZIP: e.home_zip, AGE: str(e.age_decile), GENDER: e.gender,
          ADMIT: ADMISSION_TRIPLE[e.admission_day]}
    if e.admission_day == "today":
        ev[RESP_ADMIT] = e.respiratory_at_admission
    else:
        ev[RESP_ADMIT] = "unknown"
        if e.admission_day != "never" and e.respiratory_at_admission != "unknown":
            pos = DAY_POSITION[e.admission_day]
            want = "I" if e.respiratory_at_admission == "true" else "A"
            ev[RESP] = frozenset(s for s in ONSET_STATES if s[pos] == want)
    return ev


def enumerate_class_keys(zips: Sequence[str], n_ages: int = 9, valid_only: bool = False):
    """All class keys as the product of field domains.

    With ``valid_only`` the combinations where a never-admitted person has
    a known respiratory status are skipped.
    """
    for z, a, g, d, r in itertools.product(zips, range(n_ages), GENDERS, ADMISSION_DAYS,
                                           RESP_ADMIT_STATES):
        if valid_only and d == "never" and r != "unknown":
            continue
        yield (z, a, g, d, r)


@dataclass
class PersonModelParams:
    """Numbers behind the person network.

    ``zips`` are the regional zips (possible release locations); home zip
    additionally takes the catch-all ``other_zip``. Hazards are daily
    probabilities that a child event starts 0, 1 or 2 days after its
    parent's onset, given it has not started yet.
    """

    zips: tuple[str, ...]
    zip_prior: Mapping[str, float]
    age_given_zip: Mapping[str, Sequence[float]]
    female_given_zip: Mapping[str, float]
    other_incidence: np.ndarray                     # (n_ages, 2) daily onset probability
    other_admit_hazard: tuple[float, ...] = (1.0, 0.0, 0.0)
    other_resp_hazard: tuple[float, ...] = (0.25, 0.05, 0.05)
    anthrax_attack_rate: float = 2e-3
    anthrax_attack_rate_elsewhere: float = 0.0
    anthrax_admit_hazard: tuple[float, ...] = (0.0, 0.4, 0.5)
    anthrax_resp_hazard: tuple[float, ...] = (0.2, 0.8, 0.8)
    resp_unrecorded: float = 0.02
    centroids: Mapping[str, ZipCentroid] = field(default_factory=dict)
    exposure: ExposureParams = field(default_factory=ExposureParams)
    other_zip: str = OTHER_ZIP
    n_ages: int = 9

    @property
    def home_zips(self) -> tuple[str, ...]:
        return tuple(self.zips) + (self.other_zip,)


def default_params(census: Mapping[tuple[str, int, str], int], zips: Sequence[str],
                   centroids: Mapping[str, ZipCentroid] | None = None,
                   hourly_ed_rate: float = DEFAULT_HOURLY_ED_RATE, n_ages: int = 9,
                   other_zip: str = OTHER_ZIP, **overrides) -> PersonModelParams:
    """Person-model parameters with demographics taken from a census.

    Other-ED-disease incidence is an age/gender risk profile scaled so the
    census population produces ``hourly_ed_rate`` arrivals per person-hour.
    """
    home = list(zips) + [other_zip]
    cells = np.zeros((len(home), n_ages, 2))
    pos = {z: i for i, z in enumerate(home)}
    for (z, a, g), n in census.items():
        cells[pos[z], a, GENDERS.index(g)] += n
    total = cells.sum()
    if total <= 0:
        raise ValueError("census is empty")
    zip_tot = cells.sum(axis=(1, 2))
    zip_prior = {z: float(zip_tot[i] / total) for i, z in enumerate(home)}
    age_given_zip, female_given_zip = {}, {}
    for i, z in enumerate(home):
        if zip_tot[i] > 0:
            age_given_zip[z] = (cells[i].sum(axis=1) / zip_tot[i]).tolist()
            female_given_zip[z] = float(cells[i, :, 0].sum() / zip_tot[i])
        else:
            age_given_zip[z] = [1.0 / n_ages] * n_ages
            female_given_zip[z] = 0.5
    age_risk = np.resize(np.asarray(DEFAULT_AGE_RISK, dtype=float), n_ages)
    risk = np.outer(age_risk, DEFAULT_GENDER_RISK)
    mean_risk = (cells.sum(axis=0) * risk).sum() / total
    daily = 24.0 * hourly_ed_rate
    incidence = risk * (daily / mean_risk)
    return PersonModelParams(zips=tuple(zips), zip_prior=zip_prior, age_given_zip=age_given_zip,
                             female_given_zip=female_given_zip, other_incidence=incidence,
                             centroids=dict(centroids or {}), other_zip=other_zip, n_ages=n_ages,
                             **overrides)


def _hazard_rows(hazards: Sequence[float], kind: str) -> np.ndarray:
    """CPT rows for a child triple driven by a monotone-onset parent triple."""
    h = list(hazards) + [0.0] * (3 - len(hazards))
    child_states = ONSET_STATES if kind == "onset" else EVENT_STATES
    make = _onset_triple if kind == "onset" else _event_triple
    rows = np.zeros((len(ONSET_STATES), len(child_states)))
    for r, parent in enumerate(ONSET_STATES):
        k = onset_position(parent)
        if k is None:
            rows[r, 0] = 1.0
            continue
        survive = 1.0
        for j in range(k, 3):
            p = survive * h[j - k]
            rows[r, child_states.index(make(j))] += p
            survive *= 1.0 - h[j - k]
        rows[r, 0] += survive
    return rows


def _or_cpt(a_states, b_states, out_states) -> np.ndarray:
    t = np.zeros((len(a_states), len(b_states), len(out_states)))
    for i, a in enumerate(a_states):
        for j, b in enumerate(b_states):
            t[i, j, out_states.index(or_combine(a, b))] = 1.0
    return t.reshape(-1, len(out_states))


def _uniform(n: int) -> np.ndarray:
    return np.full((1, n), 1.0 / n)


def _infection_row(time_state: str, p: float) -> np.ndarray:
    row = np.zeros(len(ONSET_STATES))
    if time_state == "never" or p <= 0.0:
        row[0] = 1.0
    else:
        row[ONSET_STATES.index(_onset_triple(DAY_POSITION[time_state]))] = p
        row[0] = 1.0 - p
    return row


def build_person_model(params: PersonModelParams, variant: str = NONSPATIAL) -> Network:
    """Assemble the person network.

    The interface roots (time, location, and in the spatial variant angle
    of release) carry uniform placeholder priors; likelihood computations
    condition on them.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    zips = tuple(params.zips)
    home = params.home_zips
    locations = (NOWHERE,) + zips
    ages = tuple(str(a) for a in range(params.n_ages))

    variables = [
        VariableSpec(TIME, TIME_STATES),
        VariableSpec(LOCATION, locations),
    ]
    if variant == SPATIAL:
        variables.append(VariableSpec(ANGLE, ANGLES))
    variables += [
        VariableSpec(HOME_ZIP, home),
        VariableSpec(AGE, ages),
        VariableSpec(GENDER, GENDERS),
    ]
    if variant == SPATIAL:
        variables.append(VariableSpec(EXPOSED, ("no", "yes")))
    variables += [
        VariableSpec(ANTHRAX, ONSET_STATES),
        VariableSpec(OTHER, ONSET_STATES),
        VariableSpec(RESP_ANTHRAX, ONSET_STATES),
        VariableSpec(RESP_OTHER, ONSET_STATES),
        VariableSpec(RESP, ONSET_STATES),
        VariableSpec(ADMIT_ANTHRAX, EVENT_STATES),
        VariableSpec(ADMIT_OTHER, EVENT_STATES),
        VariableSpec(ADMIT, ALL_TRIPLES),
        VariableSpec(RESP_ADMIT, RESP_ADMIT_STATES),
    ]

    cpts = [CptSpec(TIME, (), _uniform(len(TIME_STATES))),
            CptSpec(LOCATION, (), _uniform(len(locations)))]
    if variant == SPATIAL:
        cpts.append(CptSpec(ANGLE, (), _uniform(len(ANGLES))))

    prior = np.array([params.zip_prior.get(z, 0.0) for z in home], dtype=float)
    cpts.append(CptSpec(HOME_ZIP, (), prior.reshape(1, -1)))
    cpts.append(CptSpec(AGE, (HOME_ZIP,), np.array([params.age_given_zip[z] for z in home])))
    fem = np.array([params.female_given_zip[z] for z in home])
    cpts.append(CptSpec(GENDER, (HOME_ZIP,), np.column_stack([fem, 1.0 - fem])))

    if variant == NONSPATIAL:
        t = np.zeros((len(TIME_STATES), len(locations), len(home), len(ONSET_STATES)))
        for ti, ts in enumerate(TIME_STATES):
            for li, loc in enumerate(locations):
                for hi, hz in enumerate(home):
                    if loc == NOWHERE:
                        p = 0.0
                    elif loc == hz:
                        p = params.anthrax_attack_rate
                    else:
                        p = params.anthrax_attack_rate_elsewhere
                    t[ti, li, hi] = _infection_row(ts, p)
        cpts.append(CptSpec(ANTHRAX, (TIME, LOCATION, HOME_ZIP), t.reshape(-1, len(ONSET_STATES))))
    else:
        ex = np.zeros((len(locations), len(ANGLES), len(home), 2))
        for li, loc in enumerate(locations):
            for ai, ang in enumerate(ANGLES):
                for hi, hz in enumerate(home):
                    if loc == NOWHERE or hz == params.other_zip:
                        p = 0.0
                    else:
                        p = exposure_probability(loc, ang, hz, params.centroids, params.exposure)
                    ex[li, ai, hi] = (1.0 - p, p)
        cpts.append(CptSpec(EXPOSED, (LOCATION, ANGLE, HOME_ZIP), ex.reshape(-1, 2)))
        t = np.zeros((2, len(TIME_STATES), len(ONSET_STATES)))
        for ti, ts in enumerate(TIME_STATES):
            t[0, ti] = _infection_row("never", 0.0)
            t[1, ti] = _infection_row(ts, params.anthrax_attack_rate)
        cpts.append(CptSpec(ANTHRAX, (EXPOSED, TIME), t.reshape(-1, len(ONSET_STATES))))

    inc = np.asarray(params.other_incidence, dtype=float)
    if inc.shape != (params.n_ages, 2) or (inc < 0).any() or (inc > 1.0 / 3.0).any():
        raise ValueError("other_incidence must be (n_ages, 2) with entries in [0, 1/3]")
    odd = np.stack([1.0 - 3.0 * inc, inc, inc, inc], axis=-1)
    cpts.append(CptSpec(OTHER, (AGE, GENDER), odd.reshape(-1, 4)))

    cpts.append(CptSpec(RESP_ANTHRAX, (ANTHRAX,), _hazard_rows(params.anthrax_resp_hazard, "onset")))
    cpts.append(CptSpec(RESP_OTHER, (OTHER,), _hazard_rows(params.other_resp_hazard, "onset")))
    cpts.append(CptSpec(RESP, (RESP_ANTHRAX, RESP_OTHER), _or_cpt(ONSET_STATES, ONSET_STATES, ONSET_STATES)))
    cpts.append(CptSpec(ADMIT_ANTHRAX, (ANTHRAX,), _hazard_rows(params.anthrax_admit_hazard, "event")))
    cpts.append(CptSpec(ADMIT_OTHER, (OTHER,), _hazard_rows(params.other_admit_hazard, "event")))
    cpts.append(CptSpec(ADMIT, (ADMIT_ANTHRAX, ADMIT_OTHER), _or_cpt(EVENT_STATES, EVENT_STATES, ALL_TRIPLES)))

    u = params.resp_unrecorded
    rwa = np.zeros((len(ONSET_STATES), len(ALL_TRIPLES), 3))
    for ri, rs in enumerate(ONSET_STATES):
        for ai, adm in enumerate(ALL_TRIPLES):
            if adm[2] == "I":
                rwa[ri, ai] = (1.0 - u, 0.0, u) if rs[2] == "I" else (0.0, 1.0 - u, u)
            else:
                rwa[ri, ai] = (0.0, 0.0, 1.0)
    cpts.append(CptSpec(RESP_ADMIT, (RESP, ADMIT), rwa.reshape(-1, 3)))
    return bn_core.build_network(variables, cpts)


def interface_variables(net: Network) -> tuple[str, ...]:
    return tuple(v for v in (TIME, LOCATION, ANGLE) if v in net)


def variant_of(net: Network) -> str:
    return SPATIAL if ANGLE in net else NONSPATIAL


def person_likelihood(net: Network, e: PersonEvidence, config) -> float:
    """P(person evidence = e | interface = config).

    ``config`` is anything with an ``assignment()`` mapping interface
    variables to states (see :class:`biosurv.outbreak_model.InterfaceConfig`).
    An interface variable the configuration leaves unset is pinned to its
    first state; the model never depends on it in that case.
    """
    assign = dict(config.assignment())
    for v in interface_variables(net):
        assign.setdefault(v, net.states(v)[0])
    given = {k: v for k, v in assign.items() if k in net}
    joint = bn_core.evidence_probability(net, {**evidence_map(e), **given})
    return joint / bn_core.evidence_probability(net, given)


def sample_demographics(net: Network, zip: str, rng_seed=None) -> tuple[int, str]:
    """Draw (age decile, gender) for a respiratory ED admission today from ``zip``."""
    draw = bn_core.sample_conditional(
        net, {HOME_ZIP: zip, ADMIT: ADMISSION_TRIPLE["today"], RESP_ADMIT: "true"},
        [AGE, GENDER], rng_seed)
    return int(draw[AGE]), draw[GENDER]


def demographic_conditional(net: Network, zip: str) -> np.ndarray:
    """Exact P(age, gender | zip, admitted today, respiratory) as an (n_ages, 2) array."""
    return bn_core.conditional_joint(
        net, {HOME_ZIP: zip, ADMIT: ADMISSION_TRIPLE["today"], RESP_ADMIT: "true"}, [AGE, GENDER])


# ---------------------------------------------------------------------------
# parameter file: a small header followed by the network section format

def serialize_person_model(net: Network) -> str:
    zips = [z for z in net.states(LOCATION) if z != NOWHERE]
    head = ["# person model", f"variant {variant_of(net)}", "zips " + " ".join(zips), "---"]
    return "\n".join(head) + "\n" + bn_core.serialize_network(net)


def parse_person_model(text: str) -> tuple[Network, str, tuple[str, ...]]:
    head, sep, body = text.partition("\n---\n")
    if not sep:
        raise bn_core.NetworkFormatError("person model file lacks the '---' header separator")
    variant, zips = None, None
    for line in head.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key == "variant":
            variant = rest.strip()
        elif key == "zips":
            zips = tuple(rest.split())
    if variant not in VARIANTS or zips is None:
        raise bn_core.NetworkFormatError("person model header needs 'variant' and 'zips'")
    net = bn_core.parse_network(body)
    if variant_of(net) != variant:
        raise bn_core.NetworkFormatError(f"header says {variant} but network is {variant_of(net)}")
    return net, variant, zips
