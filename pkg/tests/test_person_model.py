
import numpy as np
import pytest
from hypothesis import given, strategies as st

from biosurv import bn_core
from biosurv.exposure_spatial import ANGLES, exposure_probability
from biosurv.outbreak_model import InterfaceConfig, enumerate_interface_configs
from biosurv.person_model import (ADMIT, ADMIT_ANTHRAX, ADMIT_OTHER, ALL_TRIPLES, ANGLE, ANTHRAX, EXPOSED,
                                  GENDERS, HOME_ZIP, LOCATION, NOWHERE, ONSET_STATES, RESP,
                                  RESP_ADMIT, RESP_ANTHRAX, RESP_OTHER, TIME, PersonEvidence, build_person_model,
                                  default_params, demographic_conditional, enumerate_class_keys, evidence_map,
                                  or_combine, parse_person_model, person_likelihood, sample_demographics,
                                  serialize_person_model)
from biosurv.region import synthesize_region

from oracles import monolithic_joint

REGION = synthesize_region(3, 3000, seed=1)
PARAMS = default_params(REGION.census, REGION.zips, REGION.centroids)
NETS = {v: build_person_model(PARAMS, v) for v in ("nonspatial", "spatial")}
TRIPLE = st.sampled_from(ALL_TRIPLES)


def as_nodes(net):
    return [(n, net.states(n), net.parents(n), net.cpt_spec(n).table.tolist()) for n in net.names]


def brute_likelihood(net, e: PersonEvidence, config) -> float:
    """P(e | interface) from the dense joint of the free variables, set evidence expanded by hand."""
    nodes = as_nodes(net)
    given_ = dict(config.assignment())
    for v in (TIME, LOCATION, ANGLE):
        if v in net and v not in given_:
            given_[v] = net.states(v)[0]
    ev = evidence_map(e)
    choices = sorted(ev.pop(RESP)) if RESP in ev else [None]
    total = 0.0
    for c in choices:
        hard = {**ev, **given_}
        if c is not None:
            hard[RESP] = c
        _, joint = monolithic_joint(nodes, hard)
        total += joint.sum()
    prior = 1.0
    for v, s in given_.items():
        prior *= net.cpt(v)[net.state_index(v, s)]
    return total / prior


def test_variable_counts_and_angle():
    assert len(NETS["nonspatial"].names) == 14
    assert len(NETS["spatial"].names) == 16
    assert NETS["spatial"].states(ANGLE) == tuple(ANGLES) and len(ANGLES) == 8
    assert ANGLE not in NETS["nonspatial"]


def test_infection_rows_only_monotone_onsets():
    for net in NETS.values():
        assert net.states(ANTHRAX) == ("AAA", "AAI", "AII", "III")
        for bad in ("IAA", "IIA", "IAI", "AIA"):
            assert bad not in net.states(ANTHRAX)


def test_or_combine_examples():
    assert or_combine("AAA", "AII") == "AII"
    assert or_combine("AAI", "III") == "III"
    assert or_combine("AAA", "AAA") == "AAA"
    with pytest.raises(ValueError):
        or_combine("AAX", "AAA")


@given(a=TRIPLE, b=TRIPLE, c=TRIPLE)
def test_or_combine_properties(a, b, c):
    assert or_combine(a, b) == or_combine(b, a)
    assert or_combine(a, or_combine(b, c)) == or_combine(or_combine(a, b), c)
    assert or_combine(a, a) == a
    assert or_combine(a, "AAA") == a


@pytest.mark.parametrize("variant", ["nonspatial", "spatial"])
def test_rows_normalized(variant):
    net = NETS[variant]
    for n in net.names:
        assert np.allclose(net.cpt(n).sum(axis=-1), 1.0, atol=1e-9)


@pytest.mark.parametrize("variant", ["nonspatial", "spatial"])
def test_or_nodes_are_truth_tables(variant):
    net = NETS[variant]
    for child, (pa, pb) in ((RESP, (RESP_ANTHRAX, RESP_OTHER)), (ADMIT, (ADMIT_ANTHRAX, ADMIT_OTHER))):
        assert net.parents(child) == (pa, pb)
        t = net.cpt(child)
        for i, a in enumerate(net.states(pa)):
            for j, b in enumerate(net.states(pb)):
                want = np.zeros(net.card(child))
                want[net.state_index(child, or_combine(a, b))] = 1.0
                assert (t[i, j] == want).all()


@pytest.mark.parametrize("variant", ["nonspatial", "spatial"])
def test_resp_when_admitted_unknown_unless_admitted_today(variant):
    net = NETS[variant]
    t = net.cpt(RESP_ADMIT)
    unknown = net.state_index(RESP_ADMIT, "unknown")
    for ai, adm in enumerate(net.states(ADMIT)):
        if adm[2] == "A":
            assert (t[:, ai, unknown] == 1.0).all()


@pytest.mark.parametrize("variant", ["nonspatial", "spatial"])
def test_no_release_means_no_infection(variant):
    net = NETS[variant]
    no = InterfaceConfig("no", "never", NOWHERE)
    given_ = {TIME: "never", LOCATION: NOWHERE}
    if variant == "spatial":
        for a in ANGLES:
            post = bn_core.posterior_marginal(net, {**given_, ANGLE: a}, ANTHRAX)
            assert post["AAA"] == 1.0
    else:
        assert bn_core.posterior_marginal(net, given_, ANTHRAX)["AAA"] == 1.0
    assert no.assignment() == given_


def test_exposure_cpt_matches_geometry():
    net = NETS["spatial"]
    t = net.cpt(EXPOSED)
    assert net.parents(EXPOSED) == (LOCATION, ANGLE, HOME_ZIP)
    for li, loc in enumerate(net.states(LOCATION)):
        for ai, ang in enumerate(net.states(ANGLE)):
            for hi, hz in enumerate(net.states(HOME_ZIP)):
                if loc == NOWHERE or hz == PARAMS.other_zip:
                    want = 0.0
                else:
                    want = exposure_probability(loc, ang, hz, REGION.centroids)
                assert t[li, ai, hi, 1] == want


def test_likelihood_deterministic():
    e = PersonEvidence(REGION.zips[0], 3, "female", "today", "true")
    cfg = InterfaceConfig("yes", "yesterday", REGION.zips[0], "N")
    net = NETS["spatial"]
    assert person_likelihood(net, e, cfg) == person_likelihood(net, e, cfg)


def evidence_cases():
    z0, z1 = REGION.zips[0], REGION.zips[1]
    return [PersonEvidence(z0, 2, "female"),
            PersonEvidence(z0, 4, "male", "today", "true"),
            PersonEvidence(z1, 0, "female", "today", "false"),
            PersonEvidence(z1, 8, "male", "yesterday", "true"),
            PersonEvidence(z0, 5, "female", "day_before", "false"),
            PersonEvidence(z0, 5, "female", "yesterday", "unknown"),
            PersonEvidence("other", 1, "male", "today", "true")]


@pytest.mark.parametrize("variant", ["nonspatial", "spatial"])
def test_likelihood_matches_dense_joint(variant):
    net = NETS[variant]
    configs = enumerate_interface_configs(REGION.zips, variant)
    rng = np.random.default_rng(3)
    picks = [configs[0]] + [configs[k] for k in rng.choice(len(configs), 6, replace=False)]
    for e in evidence_cases():
        for cfg in picks:
            got = person_likelihood(net, e, cfg)
            want = brute_likelihood(net, e, cfg)
            assert got == pytest.approx(want, rel=1e-10, abs=1e-300)


def test_background_likelihood_closed_form():
    net = NETS["nonspatial"]
    no = InterfaceConfig("no", "never", NOWHERE)
    for z in REGION.home_zips:
        for a in (0, 4, 8):
            for gi, g in enumerate(GENDERS):
                e = PersonEvidence(z, a, g)
                demo = PARAMS.zip_prior[z] * PARAMS.age_given_zip[z][a] * \
                    (PARAMS.female_given_zip[z] if g == "female" else 1.0 - PARAMS.female_given_zip[z])
                # other-disease admissions happen on the onset day, so no admission = no onset
                want = demo * (1.0 - 3.0 * PARAMS.other_incidence[a, gi])
                assert person_likelihood(net, e, no) == pytest.approx(want, rel=1e-12)
                assert brute_likelihood(net, e, no) == pytest.approx(want, rel=1e-12)


def test_sample_demographics_reproducible():
    net = NETS["nonspatial"]
    z = REGION.zips[0]
    assert sample_demographics(net, z, 42) == sample_demographics(net, z, 42)


def test_sample_demographics_matches_conditional():
    net = NETS["nonspatial"]
    z = REGION.zips[1]
    exact = demographic_conditional(net, z)
    rng = np.random.default_rng(5)
    counts = np.zeros_like(exact)
    n = 100_000
    for _ in range(n):
        a, g = sample_demographics(net, z, rng)
        counts[a, GENDERS.index(g)] += 1
    tv = 0.5 * np.abs(counts / n - exact).sum()
    assert tv <= 0.01


def test_single_age_zip_always_that_age():
    census = {(z, a, g): (50 if a == 6 else 0) for z in ("1", "other") for a in range(9) for g in GENDERS}
    params = default_params(census, ("1",))
    params.age_given_zip["1"] = [0.0] * 6 + [1.0] + [0.0] * 2
    net = build_person_model(params)
    rng = np.random.default_rng(0)
    assert {sample_demographics(net, "1", rng)[0] for _ in range(50)} == {6}


def test_unreachable_zip_raises():
    census = {(z, a, g): (10 if z == "1" else 0) for z in ("1", "2", "other") for a in range(9) for g in GENDERS}
    net = build_person_model(default_params(census, ("1", "2")))
    with pytest.raises(bn_core.ZeroEvidenceProbability):
        sample_demographics(net, "2", 0)


@pytest.mark.parametrize("variant", ["nonspatial", "spatial"])
def test_serialize_round_trip(variant):
    net = NETS[variant]
    back, v, zips = parse_person_model(serialize_person_model(net))
    assert v == variant and zips == REGION.zips
    assert back.names == net.names
    for n in net.names:
        assert (back.cpt(n) == net.cpt(n)).all()


def test_parse_person_model_rejects_bad_header():
    with pytest.raises(bn_core.NetworkFormatError):
        parse_person_model("variant nonspatial\n")
    text = serialize_person_model(NETS["spatial"]).replace("variant spatial", "variant nonspatial")
    with pytest.raises(bn_core.NetworkFormatError):
        parse_person_model(text)


def test_class_key_counts():
    zips = [str(k) for k in range(101)]
    assert sum(1 for _ in enumerate_class_keys(zips, n_ages=10)) == 24_240
    assert sum(1 for _ in enumerate_class_keys(zips)) == 21_816
    assert sum(1 for _ in enumerate_class_keys(zips, valid_only=True)) == 101 * 9 * 2 * 10


def test_evidence_invariants():
    with pytest.raises(ValueError):
        PersonEvidence("1", 0, "female", "never", "true")
    with pytest.raises(ValueError):
        PersonEvidence("1", 0, "nonbinary")
    e = PersonEvidence("1", 0, "female", "today", "true")
    assert e.shifted().admission_day == "yesterday"
    assert e.shifted().shifted().shifted() is None
    assert e.background == PersonEvidence("1", 0, "female")


def test_past_admission_status_constrains_symptom_day():
    ev = evidence_map(PersonEvidence("1", 0, "female", "yesterday", "true"))
    assert ev[RESP_ADMIT] == "unknown"
    assert ev[RESP] == frozenset(s for s in ONSET_STATES if s[1] == "I")
    assert ev[ADMIT] == "AIA"
