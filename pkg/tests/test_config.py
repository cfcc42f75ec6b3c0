import json

import pytest

from iotlysa import corpus
from iotlysa.config import AnalysisConfig, ConfigError, config_to_dict, parse_config
from iotlysa.parser import ParseError, parse_system
from iotlysa.values import Classification

CP = parse_system(
    "lcp:[store || mu h. z := @1. z' := noiseRed(z). <<z'>> : {la}. h || sensor 1 { mu h. @1 := read. h }]"
    " | la:[store || (; x). 0]"
)


def test_depth_and_comp():
    cfg = parse_config('{ "depth": 4, "comp": "all" }')
    assert cfg.depth == 4 and cfg.comp == "all"
    assert cfg.compatible("a", "b")


def test_defaults():
    cfg = parse_config("{}")
    assert cfg == AnalysisConfig()
    assert cfg.depth == 4 and cfg.seed == 0 and cfg.secret == Classification()
    assert parse_config("") == cfg


def test_secret_sensor():
    cfg = parse_config('{"secret": {"lcp": [{"sensor": 1}]}}', CP)
    assert cfg.secret.secret_sensor("lcp", 1)
    assert not cfg.secret.secret_sensor("la", 1)


def test_secret_atom_spellings_agree():
    a = parse_config('{"secret": {"lcp": ["@1"]}}', CP)
    b = parse_config('{"secret": {"lcp": [{"sensor": 1}]}}', CP)
    assert a.secret == b.secret


def test_comp_pairs_are_symmetric():
    cfg = parse_config('{"comp": [["lcp", "la"]]}', CP)
    assert cfg.compatible("la", "lcp") and not cfg.compatible("la", "la")


@pytest.mark.parametrize(
    "doc, fragment",
    [
        ({"depth": 0}, "depth"),
        ({"depth": -1}, "depth"),
        ({"bogus": 1}, "unknown configuration keys"),
        ({"comp": [["lcp", "nowhere"]]}, "unknown label"),
        ({"secret": {"lcp": [{"sensor": 9}]}}, "no sensor"),
        ({"secret": {"lcp": [{"const": 42}]}}, "does not occur"),
        ({"functions": {"noiseRed": {"arity": 2}}}, "arity"),
        ({"functions": {"nope": {"arity": 1}}}, "unknown function"),
        ({"functions": {"+": {"arity": 2}}}, "builtin"),
        ({"policy": "levels", "levels": {"lcp": 0}}, "needs a level"),
        ({"policy": 7}, "policy"),
        ({"sensors": {"lcp": {"1": []}}}, "empty stream"),
    ],
)
def test_config_errors(doc, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(json.dumps(doc), CP)
    assert fragment in str(info.value)


def test_config_error_is_a_parse_error_subclass():
    assert issubclass(ConfigError, ParseError)
    with pytest.raises(ConfigError):
        parse_config("{not json")


def test_policy_forms():
    allow = parse_config('{"policy": [["la", "lcp"]]}', CP)
    assert allow.allowed_flow("la", "lcp") and not allow.allowed_flow("lcp", "la")
    deny = parse_config('{"policy": {"deny": [["la", "lcp"]]}}', CP)
    assert not deny.allowed_flow("la", "lcp") and deny.allowed_flow("lcp", "la")
    levels = parse_config('{"policy": "levels", "levels": {"lcp": 1, "la": 0}}', CP)
    assert not levels.allowed_flow("lcp", "la")


def test_sensor_streams():
    cfg = parse_config('{"sensors": {"lcp": {"1": [3, 4]}}}', CP)
    assert cfg.stream("lcp", 1) == (3, 4)
    assert cfg.stream("la", 2) == (0,)


@pytest.mark.parametrize("name", corpus.NAMES)
def test_corpus_config_round_trip(name):
    system = parse_system(corpus.spec_text(name))
    cfg = parse_config(corpus.config_text(name), system)
    again = parse_config(json.dumps(config_to_dict(cfg)), system)
    assert again == cfg
