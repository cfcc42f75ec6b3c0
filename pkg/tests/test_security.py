from dataclasses import replace

import pytest
from hypothesis import given, settings

from generators import cases
from iotlysa import analyze, corpus
from iotlysa.cfa import Estimate
from iotlysa.config import AnalysisConfig
from iotlysa.parser import parse_system
from iotlysa.security import (
    MissingLevel,
    actuator_report,
    check_actuator_trace,
    check_actuators,
    check_commutation,
    check_confined,
    check_levels,
    check_no_leaks,
    check_policy,
    check_respects_levels,
)
from iotlysa.semantics import Trace, run
from iotlysa.syntax import Enc, MultiOut, Mu, Cond, IterVar, Nil, Node, System
from iotlysa.values import PUBLIC, ConstAV, s_cls

LAMPS = ("l1", "l2", "l3")


# ---------------------------------------------------------------------------
# confinement


def test_street_control_point_not_confined(street, street_estimate):
    _, cfg = street
    v = check_confined(street_estimate, cfg.secret, "lcp")
    assert not v.holds
    assert {w["receiver"] for w in v.witnesses} == {"la"}
    assert v.witnesses[0]["values"] == ["noiseRed^lcp(1^lcp)"]


def test_encrypted_control_point_confined(encrypted):
    system, cfg = encrypted
    assert check_confined(analyze(system, cfg), cfg.secret, "lcp").holds


def test_silent_node_is_confined(street, street_estimate):
    _, cfg = street
    assert check_confined(Estimate(), cfg.secret, "lcp").holds
    assert check_confined(street_estimate, cfg.secret, "nowhere").holds


def test_street_trace_leaks_at_analyser(street):
    system, cfg = street
    v = check_no_leaks(run(system, cfg, seed=0), cfg.secret, "lcp")
    assert not v.holds
    assert v.witnesses[0]["receiver"] == "la"


def test_empty_trace_has_no_leaks(street):
    _, cfg = street
    assert check_no_leaks(Trace([], None, 0, 4, 0), cfg.secret, "lcp").holds


def test_encrypted_trace_has_no_leaks(encrypted):
    system, cfg = encrypted
    for seed in range(10):
        assert check_no_leaks(run(system, cfg, seed=seed), cfg.secret, "lcp").holds


@pytest.mark.parametrize("name", corpus.NAMES)
def test_classifiers_commute_on_corpus(name):
    system, cfg = corpus.load(name)
    for seed in range(5):
        assert check_commutation(run(system, cfg, seed=seed), cfg.secret).holds


@settings(max_examples=40)
@given(cases)
def test_classifiers_commute_on_generated(case):
    system, cfg = case
    assert check_commutation(run(system, cfg), cfg.secret).holds


@settings(max_examples=40)
@given(cases)
def test_confinement_implies_no_leaks(case):
    system, cfg = case
    e = analyze(system, cfg)
    for label in system.labels:
        if check_confined(e, cfg.secret, label).holds:
            for seed in range(2):
                assert check_no_leaks(run(system, cfg, seed=seed), cfg.secret, label).holds


def _encrypt_outputs(p):
    if isinstance(p, (Nil, IterVar)):
        return p
    if isinstance(p, Mu):
        return Mu(p.name, _encrypt_outputs(p.body))
    if isinstance(p, Cond):
        return Cond(p.guard, _encrypt_outputs(p.then), _encrypt_outputs(p.orelse))
    cont = _encrypt_outputs(p.cont)
    if isinstance(p, MultiOut):
        return MultiOut(tuple(Enc((t,), "k0") for t in p.terms), p.receivers, cont)
    return replace(p, cont=cont)


@settings(max_examples=40)
@given(cases)
def test_encryption_neutralises_outputs(case):
    system, cfg = case
    sealed = System(
        tuple(
            Node(n.label, tuple(_encrypt_outputs(c) if c in n.processes else c for c in n.components))
            for n in system.nodes
        )
    )
    e = analyze(sealed, cfg)
    for msgs in e.kappa.values():
        for _, values in msgs:
            assert all(s_cls(v, cfg.secret) == PUBLIC for v in values)
    for label in system.labels:
        assert check_confined(e, cfg.secret, label).holds


# ---------------------------------------------------------------------------
# levels and policies


def test_street_levels_flag_supervisor_to_lamps(street, street_estimate):
    _, cfg = street
    v = check_levels(street_estimate, cfg.levels)
    assert {(w["sender"], w["receiver"]) for w in v.witnesses} == {("ls", lamp) for lamp in LAMPS}


def test_equal_levels_of_analyser_and_supervisor(street, street_estimate):
    _, cfg = street
    assert cfg.levels["la"] == cfg.levels["ls"]
    assert check_levels(street_estimate, cfg.levels, "la").holds


def test_higher_sender_violates():
    e = Estimate(kappa={"b": {("a", (ConstAV(1, "a"),))}})
    assert not check_levels(e, {"a": 1, "b": 0}).holds
    assert check_levels(e, {"a": 0, "b": 1}).holds


def test_equal_levels_always_hold(street_estimate):
    assert check_levels(street_estimate, {l: 0 for l in ("lcp", "la", "ls") + LAMPS}).holds


def test_missing_level(street_estimate):
    with pytest.raises(MissingLevel):
        check_levels(street_estimate, {"lcp": 0})


@settings(max_examples=40)
@given(cases)
def test_static_levels_imply_dynamic(case):
    system, cfg = case
    if check_levels(analyze(system, cfg), cfg.levels).holds:
        for seed in range(2):
            assert check_respects_levels(run(system, cfg, seed=seed), cfg.levels).holds


TWO = "la:[store || mu h. (; x). <<x>> : {ls}. h] | ls:[store || mu h. (; y). 0]"


def test_unidirectional_policy_holds():
    e = analyze(parse_system(TWO.replace("(; x).", "x := 1.")), AnalysisConfig())
    assert e.flows() == {("la", "ls")}
    assert check_policy(e, {("la", "ls")}).holds
    assert not check_policy(e, {("ls", "la")}).holds


def test_empty_policy_flags_each_flow(street_estimate):
    v = check_policy(street_estimate, set())
    assert len(v.witnesses) == len(street_estimate.flows())


def test_permissive_policy_holds(street_estimate):
    assert check_policy(street_estimate, lambda s, r: True).holds


def test_policy_from_configuration(street, street_estimate):
    _, cfg = street
    assert check_policy(street_estimate, cfg.allowed_flow).holds


# ---------------------------------------------------------------------------
# actuators


def test_street_actuators_all_triggered(street, street_estimate):
    system, _ = street
    v = check_actuators(street_estimate, system)
    assert v.holds
    for row in actuator_report(street_estimate, system):
        assert row["triggered"] == ["turnoff", "turnon"]


def test_mutant_lamppost_never_turns_off():
    system, cfg = corpus.load("lamppost_mutant")
    v = check_actuators(analyze(system, cfg), system)
    assert [w for w in v.witnesses if w["kind"] == "never-triggered"] == [
        {"node": "l1", "actuator": 5, "action": "turnoff", "kind": "never-triggered"}
    ]


def test_unused_actuator():
    system = parse_system("l:[store || x := 1. 0 || actuator 5 { mu h. (|5, {on}|). h }]")
    v = check_actuators(analyze(system, AnalysisConfig()), system)
    assert {"node": "l", "actuator": 5, "kind": "never-used"} in v.witnesses


@pytest.mark.parametrize("name", corpus.NAMES)
def test_never_triggered_never_fires(name):
    system, cfg = corpus.load(name)
    report = actuator_report(analyze(system, cfg), system)
    for seed in range(5):
        assert check_actuator_trace(run(system, cfg, seed=seed), report).holds


@settings(max_examples=40)
@given(cases)
def test_never_triggered_never_fires_generated(case):
    system, cfg = case
    report = actuator_report(analyze(system, cfg), system)
    for seed in range(2):
        assert check_actuator_trace(run(system, cfg, seed=seed), report).holds


def test_verdict_json(street, street_estimate):
    _, cfg = street
    doc = check_confined(street_estimate, cfg.secret, "lcp").to_json()
    assert doc["property"] == "confinement" and doc["holds"] is False and doc["witnesses"]
