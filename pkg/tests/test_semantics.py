import pytest
from hypothesis import given, settings

from generators import cases
from iotlysa import corpus
from iotlysa.config import AnalysisConfig, FunctionSig
from iotlysa.parser import parse_system
from iotlysa.semantics import (
    ActFire,
    AssignEvent,
    Comm,
    DecryptOk,
    InstrumentedValue,
    InvalidChoice,
    SensorStore,
    apply_redex,
    enabled_steps,
    eval_term,
    event_values,
    initial_configuration,
    run,
    step,
    trace_from_ndjson,
    trace_to_ndjson,
)
from iotlysa.syntax import App, Const, Enc, Var
from iotlysa.values import (
    PUBLIC,
    SECRET,
    AppAV,
    AppVal,
    Classification,
    ConstAV,
    EncAV,
    EncVal,
    Lit,
    SensorAV,
    TopP,
    TopS,
    d_cls,
    depth,
    s_cls,
    sensor_origin,
)


def take(c, cfg, rule):
    """Apply the first enabled step of the given rule."""
    for r in enabled_steps(c, cfg):
        if r.rule == rule:
            return apply_redex(c, r, cfg)
    raise AssertionError(f"no {rule} step among {[r.rule for r in enabled_steps(c, cfg)]}")


def rules(c, cfg):
    return {r.rule for r in enabled_steps(c, cfg)}


# ---------------------------------------------------------------------------
# evaluation


def test_eval_application_pairs_values():
    cfg = AnalysisConfig(functions={"noiseRed": FunctionSig(1)})
    z = InstrumentedValue(Lit(7, frozenset({sensor_origin("lcp", 1)})), SensorAV(1, "lcp"))
    got = eval_term(App("noiseRed", (Var("z"),)), {"z": z}, "lcp", cfg)
    assert got.concrete == AppVal("noiseRed", (Lit(7),))
    assert got.abstract == AppAV("noiseRed", (SensorAV(1, "lcp"),), "lcp")


def test_eval_literal():
    got = eval_term(Const(5), {}, "l", AnalysisConfig())
    assert got == InstrumentedValue(Lit(5), ConstAV(5, "l"))


def test_eval_encryption_cut_at_depth_one():
    x = InstrumentedValue(Lit(3), ConstAV(3, "l"))
    got = eval_term(Enc((Var("x"),), "k0"), {"x": x}, "l", AnalysisConfig(depth=1))
    assert got == InstrumentedValue(EncVal((Lit(3),), "k0"), TopP("l"))


def test_eval_builtin_is_interpreted():
    got = eval_term(App("+", (Const(2), Const(3))), {}, "l", AnalysisConfig())
    assert got.concrete == Lit(5)
    assert got.abstract == AppAV("+", (ConstAV(2, "l"), ConstAV(3, "l")), "l")


def test_eval_boolean_function_uses_oracle():
    cfg = AnalysisConfig(functions={"is_a_car": FunctionSig(1, result_sort="boolean")})
    t = App("is_a_car", (Const(1),))
    assert eval_term(t, {}, "l", cfg, oracle=lambda f, a: True).concrete == Lit(True)
    assert eval_term(t, {}, "l", cfg, oracle=lambda f, a: False).concrete == Lit(False)


# ---------------------------------------------------------------------------
# enabled steps


def test_sensor_store_step():
    system = parse_system("l:[store || sensor 1 { mu h. @1 := read. tau. h }]")
    cfg = AnalysisConfig(sensor_streams={("l", 1): (4,)})
    c = initial_configuration(system, cfg)
    assert "S-store" in rules(c, cfg)
    c, ev = take(c, cfg, "S-store")
    assert isinstance(ev, SensorStore) and ev.value.abstract == SensorAV(1, "l")
    assert c.store("l")[1].concrete.value == 4


SENDER = "l1:[store || <<7>> : {l2}. 0] | l2:[store || (; x). 0]"


def test_multi_com_with_compatible_pair():
    system = parse_system(SENDER)
    cfg = AnalysisConfig()
    c, _ = take(initial_configuration(system, cfg), cfg, "Ev-out")
    assert "Multi-com" in rules(c, cfg)
    c, ev = take(c, cfg, "Multi-com")
    assert ev == Comm("l1", "l2", (InstrumentedValue(Lit(7), ConstAV(7, "l1")),))
    assert c.store("l2")["x"].abstract == ConstAV(7, "l1")
    assert enabled_steps(c, cfg) == []


def test_multi_com_blocked_without_comp():
    system = parse_system(SENDER)
    cfg = AnalysisConfig(comp=frozenset())
    c, _ = take(initial_configuration(system, cfg), cfg, "Ev-out")
    assert "Multi-com" not in rules(c, cfg)


def test_multi_com_requires_matching_prefix():
    system = parse_system("l1:[store || <<1, 7>> : {l2}. 0] | l2:[store || (2; x). 0 || (1; y). 0]")
    cfg = AnalysisConfig()
    c, _ = take(initial_configuration(system, cfg), cfg, "Ev-out")
    c, _ = take(c, cfg, "Multi-com")
    assert "y" in c.store("l2") and "x" not in c.store("l2")


def test_multi_output_serves_each_receiver_once():
    system = parse_system("a:[store || <<1>> : {b, c}. 0] | b:[store || (; x). 0] | c:[store || (; x). 0]")
    cfg = AnalysisConfig()
    c, _ = take(initial_configuration(system, cfg), cfg, "Ev-out")
    c, first = take(c, cfg, "Multi-com")
    c, second = take(c, cfg, "Multi-com")
    assert {first.receiver, second.receiver} == {"b", "c"}
    assert enabled_steps(c, cfg) == []


def test_actuator_command_and_fire():
    system = parse_system("l:[store || <5, turnon>. 0 || actuator 5 { mu h. (|5, {turnon, turnoff}|). h }]")
    cfg = AnalysisConfig()
    c, ev = take(initial_configuration(system, cfg), cfg, "A-com")
    assert ev is None
    c, ev = take(c, cfg, "Act")
    assert ev == ActFire("l", 5, "turnon")


def test_actuator_refuses_undeclared_action():
    system = parse_system("l:[store || <5, dim>. 0 || actuator 5 { mu h. (|5, {turnon}|). h }]")
    cfg = AnalysisConfig()
    assert "A-com" not in rules(initial_configuration(system, cfg), cfg)


@pytest.mark.parametrize("guard, rule", [("1 = 1", "Cond1"), ("1 = 2", "Cond2")])
def test_conditional_branches(guard, rule):
    system = parse_system(f"l:[store || ({guard} ? x := 1. 0 : x := 2. 0)]")
    cfg = AnalysisConfig()
    c = initial_configuration(system, cfg)
    assert rules(c, cfg) == {rule}
    c, _ = take(c, cfg, rule)
    c, _ = take(c, cfg, "Asgm")
    assert c.store("l")["x"].concrete == Lit(1 if rule == "Cond1" else 2)


def test_decrypt_binds_payload():
    system = parse_system("l:[store || x := {3, 9} key k0. decrypt x as {3; y} key k0 in 0]")
    cfg = AnalysisConfig()
    c, _ = take(initial_configuration(system, cfg), cfg, "Asgm")
    c, ev = take(c, cfg, "Decr")
    assert c.store("l")["y"].concrete == Lit(9)
    assert isinstance(ev, DecryptOk) and ev.bindings[0][0] == "y"
    assert ev.bindings[0][1].abstract == ConstAV(9, "l")


@pytest.mark.parametrize(
    "pattern", ["{4; y} key k0", "{3; y} key k1", "{; y} key k0", "{3; y, z} key k0"]
)
def test_decrypt_needs_key_arity_and_match(pattern):
    system = parse_system(f"l:[store || x := {{3, 9}} key k0. decrypt x as {pattern} in 0]")
    cfg = AnalysisConfig()
    c, _ = take(initial_configuration(system, cfg), cfg, "Asgm")
    assert "Decr" not in rules(c, cfg)


def test_decrypt_of_cut_ciphertext_keeps_class():
    system = parse_system("l:[store || sensor 1 { @1 := read. 0 } || x := {@1} key k0. decrypt x as {; y} key k0 in 0]")
    cfg = AnalysisConfig(depth=1, secret=Classification({"l": [("sensor", 1)]}))
    c, _ = take(initial_configuration(system, cfg), cfg, "S-store")
    c, _ = take(c, cfg, "Asgm")
    assert c.store("l")["x"].abstract == TopP("l")
    c, _ = take(c, cfg, "Decr")
    assert c.store("l")["y"].abstract == TopS("l")


def test_undefined_variable_blocks():
    system = parse_system("l:[store || y := x. 0]")
    cfg = AnalysisConfig()
    assert enabled_steps(initial_configuration(system, cfg), cfg) == []


def test_type_error_terminates_run():
    system = parse_system('l:[store || y := 1 + "a". 0]')
    trace = run(system, AnalysisConfig())
    assert trace.termination.startswith("EvalError")


def test_invalid_choice():
    system = parse_system("l:[store]")
    cfg = AnalysisConfig()
    with pytest.raises(InvalidChoice):
        step(initial_configuration(system, cfg), 0, cfg)


# ---------------------------------------------------------------------------
# runs


def test_street_run_reaches_analyser(street):
    system, cfg = street
    trace = run(system, cfg, seed=0, max_steps=200)
    assert any(isinstance(e, Comm) and (e.sender, e.receiver) == ("lcp", "la") for e in trace.events)


def test_bare_node_has_empty_trace():
    trace = run(parse_system("l1:[store]"), AnalysisConfig())
    assert trace.events == [] and trace.termination == "no enabled steps"


def test_runs_are_deterministic(street):
    system, cfg = street
    a = run(system, cfg, seed=3, max_steps=300)
    b = run(system, cfg, seed=3, max_steps=300)
    assert trace_to_ndjson(a) == trace_to_ndjson(b)


def test_ndjson_round_trip(street):
    system, cfg = street
    trace = run(system, cfg, seed=1, max_steps=150)
    back = trace_from_ndjson(trace_to_ndjson(trace))
    assert back.events == trace.events
    assert (back.seed, back.depth, back.max_steps, back.system_digest) == (
        trace.seed,
        trace.depth,
        trace.max_steps,
        trace.system_digest,
    )


def test_zero_steps_gives_header_only(street):
    system, cfg = street
    text = trace_to_ndjson(run(system, cfg, seed=0, max_steps=0))
    assert len(text.strip().splitlines()) == 1


# ---------------------------------------------------------------------------
# instrumentation coherence, checked against a test-local oracle


def coherent(conc, ab, cls, d):
    """The abstract part is a faithful, depth-bounded picture of the concrete one."""
    if isinstance(ab, (TopS, TopP)):
        return (d_cls(conc, cls) == SECRET) == isinstance(ab, TopS)
    if isinstance(ab, ConstAV):
        return isinstance(conc, Lit) and conc.value == ab.value
    if isinstance(ab, SensorAV):
        return isinstance(conc, Lit) and sensor_origin(ab.label, ab.sensor) in conc.origin
    if isinstance(ab, EncAV):
        return (
            isinstance(conc, EncVal)
            and conc.key == ab.key
            and len(conc.args) == len(ab.args)
            and all(coherent(c, a, cls, d) for c, a in zip(conc.args, ab.args))
        )
    if isinstance(conc, Lit):
        # interpreted builtin or boolean function: only the class is retained
        return d_cls(conc, cls) == (SECRET if any(_secret(a, cls) for a in ab.args) else PUBLIC)
    return (
        isinstance(conc, AppVal)
        and conc.func == ab.func
        and len(conc.args) == len(ab.args)
        and all(coherent(c, a, cls, d) for c, a in zip(conc.args, ab.args))
    )


def _secret(ab, cls):
    return s_cls(ab, cls) == SECRET


@pytest.mark.parametrize("name", corpus.NAMES)
def test_corpus_instrumentation_coherent(name):
    system, cfg = corpus.load(name)
    for seed in range(5):
        for ev in run(system, cfg, seed=seed, max_steps=300).events:
            for v in event_values(ev):
                assert depth(v.abstract) <= cfg.depth
                assert coherent(v.concrete, v.abstract, cfg.secret, cfg.depth), (ev, v)


@settings(max_examples=40)
@given(cases)
def test_random_instrumentation_coherent(case):
    system, cfg = case
    for ev in run(system, cfg, max_steps=150).events:
        for v in event_values(ev):
            assert depth(v.abstract) <= cfg.depth
            assert coherent(v.concrete, v.abstract, cfg.secret, cfg.depth), (ev, v)
        if isinstance(ev, AssignEvent):
            assert ev.value.abstract.label == ev.node or isinstance(ev.value.abstract, (TopS, TopP))
