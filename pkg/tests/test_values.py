import json

import pytest
from hypothesis import given

from generators import abstract_values, classifications
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
    abstract_from_json,
    abstract_to_json,
    concrete_from_json,
    concrete_to_json,
    const_origin,
    cut,
    d_cls,
    depth,
    format_abstract,
    s_cls,
    sensor_origin,
)

CP = "lcp"


# independent oracle: positions are counted from the root instead of
# counting down the remaining room
def oracle_depth(av):
    if isinstance(av, (EncAV, AppAV)):
        return 1 + max((oracle_depth(a) for a in av.args), default=0)
    return 1


def oracle_secret(av, cls):
    if isinstance(av, TopS):
        return True
    if isinstance(av, (TopP, EncAV)):
        return False
    if isinstance(av, SensorAV):
        return cls.secret_sensor(av.label, av.sensor)
    if isinstance(av, ConstAV):
        return cls.secret_const(av.label, av.value)
    return any(oracle_secret(a, cls) for a in av.args)


def oracle_cut(av, d, cls, level=1):
    if not isinstance(av, (EncAV, AppAV)) or oracle_depth(av) + level - 1 <= d:
        return av
    if level == d:
        return TopS(av.label) if oracle_secret(av, cls) else TopP(av.label)
    args = tuple(oracle_cut(a, d, cls, level + 1) for a in av.args)
    if isinstance(av, EncAV):
        return EncAV(args, av.key, av.label)
    return AppAV(av.func, args, av.label)


def test_depth_of_leaf():
    assert depth(SensorAV(1, CP)) == 1


def test_depth_one_nesting():
    assert depth(AppAV("noiseRed", (SensorAV(1, CP),), CP)) == 2


def test_depth_encrypted_application():
    inner = AppAV("f", (ConstAV(5, "l"),), "l")
    assert depth(EncAV((inner,), "k0", "l")) == 3


def test_depth_of_nullary_application():
    assert depth(AppAV("c", (), "l")) == 1


def test_cut_leaves_shallow_values():
    assert cut(SensorAV(1, CP), 4, Classification({CP: [("sensor", 1)]})) == SensorAV(1, CP)


def test_cut_replaces_deep_public_subterm():
    v = AppAV("f", (AppAV("f", (ConstAV(0, "l"),), "l"),), "l")
    assert cut(v, 2, Classification()) == AppAV("f", (TopP("l"),), "l")


def test_cut_whole_secret_term_at_depth_one():
    cls = Classification({"l": [("sensor", 1)]})
    assert cut(AppAV("f", (SensorAV(1, "l"),), "l"), 1, cls) == TopS("l")


def test_cut_rejects_zero_bound():
    with pytest.raises(ValueError):
        cut(SensorAV(1, "l"), 0)


def test_cut_marker_keeps_label_of_replaced_subterm():
    v = AppAV("f", (AppAV("g", (SensorAV(2, "b"),), "b"),), "a")
    assert cut(v, 2, Classification({"b": [("sensor", 2)]})) == AppAV("f", (TopS("b"),), "a")


@given(abstract_values, classifications)
def test_cut_matches_oracle(av, cls):
    for d in (1, 2, 3, 4):
        assert cut(av, d, cls) == oracle_cut(av, d, cls)


@given(abstract_values, classifications)
def test_cut_respects_bound_and_is_idempotent(av, cls):
    for d in (1, 2, 3):
        once = cut(av, d, cls)
        assert depth(once) <= d
        assert cut(once, d, cls) == once


@given(abstract_values, classifications)
def test_cut_preserves_classification(av, cls):
    for d in (1, 2, 3):
        assert s_cls(cut(av, d, cls), cls) == s_cls(av, cls)


@given(abstract_values)
def test_depth_matches_oracle(av):
    assert depth(av) == oracle_depth(av)


@given(abstract_values, classifications)
def test_s_cls_matches_oracle(av, cls):
    assert (s_cls(av, cls) == SECRET) == oracle_secret(av, cls)


def test_s_cls_secret_sensor_drops_into_application():
    cls = Classification({CP: [("sensor", 1)]})
    assert s_cls(AppAV("noiseRed", (SensorAV(1, CP),), CP), cls) == SECRET


def test_s_cls_encryption_is_public():
    cls = Classification({CP: [("sensor", 1)]})
    assert s_cls(EncAV((SensorAV(1, CP),), "k0", CP), cls) == PUBLIC


def test_s_cls_default_public():
    assert s_cls(ConstAV(5, "l"), Classification()) == PUBLIC


def test_s_cls_uses_annotation_of_atom():
    cls = Classification({"a": [("sensor", 1)]})
    assert s_cls(SensorAV(1, "a"), cls) == SECRET
    assert s_cls(SensorAV(1, "b"), cls) == PUBLIC


def test_constant_sorts_are_distinct():
    cls = Classification({"l": [("const", 1)]})
    assert s_cls(ConstAV(1, "l"), cls) == SECRET
    assert s_cls(ConstAV(True, "l"), cls) == PUBLIC
    assert ConstAV(1, "l") != ConstAV(True, "l")


def test_d_cls_encryption_public():
    secret = Lit(7, frozenset({sensor_origin("l", 1)}))
    assert d_cls(EncVal((secret,), "k0"), Classification({"l": [("sensor", 1)]})) == PUBLIC


def test_d_cls_drop_rule():
    cls = Classification({"l": [("sensor", 1)]})
    secret = Lit(7, frozenset({sensor_origin("l", 1)}))
    assert d_cls(AppVal("f", (Lit(0), secret)), cls) == SECRET


def test_d_cls_bare_literal_uses_node_constants():
    cls = Classification({"l": [("const", "pin")]})
    assert d_cls(Lit("pin"), cls, "l") == SECRET
    assert d_cls(Lit("pin"), cls, "m") == PUBLIC
    assert d_cls(Lit("pin", frozenset({const_origin("m", "pin")})), cls, "l") == PUBLIC


def test_classification_rejects_bad_atom():
    with pytest.raises(ValueError):
        Classification({"l": ["sensor 1"]})


def test_format_abstract():
    v = AppAV("noiseRed", (SensorAV(1, CP),), CP)
    assert format_abstract(v) == "noiseRed^lcp(1^lcp)"


@given(abstract_values)
def test_abstract_json_round_trip(av):
    assert abstract_from_json(json.loads(json.dumps(abstract_to_json(av)))) == av


def test_concrete_json_round_trip():
    v = EncVal((AppVal("f", (Lit(3), Lit("a"))), Lit(True)), "k0")
    assert concrete_from_json(json.loads(json.dumps(concrete_to_json(v)))) == v
