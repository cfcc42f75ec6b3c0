"""The analysis configuration document (JSON).

Keys, all optional::

    depth      cut bound d (default 4)
    comp       "all" or a list of unordered label pairs allowed to communicate
    keys       declared encryption keys; when absent, the keys used by the system
    functions  {name: {"arity": n, "kind": "uninterpreted",
                       "result_sort": "opaque"|"boolean"}}; builtins are implicit
    sensors    {label: {sensor-id: literal | [literal, ...]}}  (lists are cycled)
    secret     {label: [atom, ...]}; an atom is {"sensor": i}, "@i", {"const": v} or a bare literal
    levels     {label: natural}
    policy     "none" | "levels" | [[from, to], ...] (allowed flows) | {"deny": [[from, to], ...]}
    seed       natural (default 0)
    max_steps  natural (default 10000)
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any

from .parser import ParseError, function_arities
from .syntax import BUILTINS, Const, Decrypt, Enc, Node, System, subterms, terms_of
from .values import Classification, literal_sort

DEFAULT_DEPTH = 4
DEFAULT_MAX_STEPS = 10000

_KNOWN_KEYS = {"depth", "comp", "keys", "functions", "sensors", "secret", "levels", "policy", "seed", "max_steps"}


class ConfigError(ParseError):
    """A configuration document that is well-formed JSON but semantically invalid."""


@dataclass(frozen=True)
class FunctionSig:
    arity: int
    kind: str = "uninterpreted"
    result_sort: str = "opaque"


@dataclass
class AnalysisConfig:
    depth: int = DEFAULT_DEPTH
    comp: Any = "all"  # "all" or frozenset of frozenset({l1, l2})
    keys: frozenset | None = None
    functions: dict[str, FunctionSig] = field(default_factory=dict)
    sensor_streams: dict[tuple[str, int], tuple] = field(default_factory=dict)
    secret: Classification = field(default_factory=Classification)
    levels: dict[str, int] = field(default_factory=dict)
    policy: Any = "none"  # "none" | "levels" | ("allow", pairs) | ("deny", pairs)
    seed: int = 0
    max_steps: int = DEFAULT_MAX_STEPS
    precise_match: bool = False

    def compatible(self, sender: str, receiver: str) -> bool:
        if self.comp == "all":
            return True
        return frozenset((sender, receiver)) in self.comp

    def stream(self, label: str, sensor: int) -> tuple:
        return self.sensor_streams.get((label, sensor), (0,))

    def signature(self, name: str) -> FunctionSig | None:
        if name in BUILTINS:
            return FunctionSig(BUILTINS[name][0], "builtin", "opaque")
        return self.functions.get(name)

    def with_options(self, **changes) -> "AnalysisConfig":
        return replace(self, **changes)

    def allowed_flow(self, sender: str, receiver: str) -> bool:
        """The communication policy as a predicate on (sender, receiver)."""
        if self.policy == "none":
            return True
        if self.policy == "levels":
            return self.levels[sender] <= self.levels[receiver]
        mode, pairs = self.policy
        if mode == "allow":
            return (sender, receiver) in pairs
        return (sender, receiver) not in pairs


def _fail(message: str) -> ConfigError:
    return ConfigError(message)


def _nat(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise _fail(f"{name} must be a natural number, got {value!r}")
    return value


def _literal(value, where: str):
    try:
        literal_sort(value)
    except TypeError:
        raise _fail(f"{where}: {value!r} is not a literal (integer, boolean or string)") from None
    return value


_SENSOR_SHORTHAND = re.compile(r"^@(\d+)$")


def _atom(obj, where: str):
    if isinstance(obj, dict):
        if set(obj) == {"sensor"}:
            return ("sensor", _nat(obj["sensor"], where))
        if set(obj) == {"const"}:
            return ("const", _literal(obj["const"], where))
        raise _fail(f"{where}: atom objects need exactly one of 'sensor' or 'const'")
    if isinstance(obj, str):
        m = _SENSOR_SHORTHAND.match(obj)
        if m:
            return ("sensor", int(m.group(1)))
    return ("const", _literal(obj, where))


def _pairs(raw, name: str) -> list[tuple[str, str]]:
    if not isinstance(raw, list):
        raise _fail(f"{name} must be a list of label pairs")
    out = []
    for p in raw:
        if not (isinstance(p, list) and len(p) == 2 and all(isinstance(x, str) for x in p)):
            raise _fail(f"{name}: {p!r} is not a pair of labels")
        out.append((p[0], p[1]))
    return out


def config_from_dict(doc: dict, system: System | None = None) -> AnalysisConfig:
    if not isinstance(doc, dict):
        raise _fail("configuration must be a JSON object")
    unknown = set(doc) - _KNOWN_KEYS
    if unknown:
        raise _fail(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    cfg = AnalysisConfig()
    mentioned: list[str] = []

    if "depth" in doc:
        cfg.depth = _nat(doc["depth"], "depth")
        if cfg.depth < 1:
            raise _fail("depth must be at least 1")

    comp = doc.get("comp", "all")
    if comp != "all":
        pairs = _pairs(comp, "comp")
        mentioned += [x for p in pairs for x in p]
        cfg.comp = frozenset(frozenset(p) for p in pairs)

    if "keys" in doc:
        if not isinstance(doc["keys"], list) or not all(isinstance(k, str) for k in doc["keys"]):
            raise _fail("keys must be a list of key names")
        cfg.keys = frozenset(doc["keys"])

    for name, spec in (doc.get("functions") or {}).items():
        if not isinstance(spec, dict):
            raise _fail(f"function {name!r}: signature must be an object")
        if name in BUILTINS:
            raise _fail(f"function {name!r} is a builtin and cannot be redeclared")
        arity = _nat(spec.get("arity"), f"function {name!r} arity")
        kind = spec.get("kind", "uninterpreted")
        sort = spec.get("result_sort", "opaque")
        if kind != "uninterpreted":
            raise _fail(f"function {name!r}: only uninterpreted functions can be declared")
        if sort not in ("opaque", "boolean"):
            raise _fail(f"function {name!r}: result_sort must be 'opaque' or 'boolean'")
        cfg.functions[name] = FunctionSig(arity, kind, sort)

    for label, streams in (doc.get("sensors") or {}).items():
        mentioned.append(label)
        if not isinstance(streams, dict):
            raise _fail(f"sensors.{label} must map sensor ids to streams")
        for sid, values in streams.items():
            if not str(sid).isdigit():
                raise _fail(f"sensors.{label}: {sid!r} is not a sensor id")
            seq = values if isinstance(values, list) else [values]
            if not seq:
                raise _fail(f"sensors.{label}.{sid}: empty stream")
            cfg.sensor_streams[(label, int(sid))] = tuple(_literal(v, f"sensors.{label}.{sid}") for v in seq)

    secret = {}
    for label, atoms in (doc.get("secret") or {}).items():
        mentioned.append(label)
        if not isinstance(atoms, list):
            raise _fail(f"secret.{label} must be a list of atoms")
        secret[label] = [_atom(a, f"secret.{label}") for a in atoms]
    cfg.secret = Classification(secret)

    for label, level in (doc.get("levels") or {}).items():
        mentioned.append(label)
        cfg.levels[label] = _nat(level, f"levels.{label}")

    policy = doc.get("policy", "none")
    if policy in ("none", "levels"):
        cfg.policy = policy
    elif isinstance(policy, list):
        pairs = _pairs(policy, "policy")
        mentioned += [x for p in pairs for x in p]
        cfg.policy = ("allow", frozenset(pairs))
    elif isinstance(policy, dict) and set(policy) == {"deny"}:
        pairs = _pairs(policy["deny"], "policy.deny")
        mentioned += [x for p in pairs for x in p]
        cfg.policy = ("deny", frozenset(pairs))
    else:
        raise _fail("policy must be 'none', 'levels', a list of allowed pairs or {'deny': pairs}")

    cfg.seed = _nat(doc.get("seed", 0), "seed")
    cfg.max_steps = _nat(doc.get("max_steps", DEFAULT_MAX_STEPS), "max_steps")

    if system is not None:
        _check_against(cfg, system, mentioned, secret)
    return cfg


def _check_against(cfg: AnalysisConfig, system: System, mentioned, secret):
    nodes = {n.label: n for n in system.nodes if isinstance(n, Node)}
    for label in mentioned:
        if label not in nodes:
            raise _fail(f"unknown label {label!r}")
    for (label, sid) in cfg.sensor_streams:
        if sid not in nodes[label].sensors:
            raise _fail(f"sensors.{label}: node has no sensor {sid}")
    for label, atoms in secret.items():
        consts = _node_constants(nodes[label])
        for kind, payload in atoms:
            if kind == "sensor" and payload not in nodes[label].sensors:
                raise _fail(f"secret.{label}: node has no sensor {payload}")
            if kind == "const" and (literal_sort(payload), payload) not in consts:
                raise _fail(f"secret.{label}: constant {payload!r} does not occur in the node")
    used = function_arities(system)
    for name, sig in cfg.functions.items():
        if name not in used:
            raise _fail(f"unknown function {name!r}")
        if used[name] != sig.arity:
            raise _fail(f"function {name!r} declared with arity {sig.arity} but applied to {used[name]} arguments")
    if cfg.keys is not None:
        for key in sorted(system_keys(system)):
            if key not in cfg.keys:
                raise _fail(f"key {key!r} is used but not declared")
    if cfg.policy == "levels":
        for label in nodes:
            if label not in cfg.levels:
                raise _fail(f"policy 'levels' needs a level for {label!r}")


def _node_constants(node: Node) -> set:
    out = set()
    for p in node.processes:
        for t in terms_of(p):
            for s in subterms(t):
                if isinstance(s, Const):
                    out.add((literal_sort(s.value), s.value))
    return out


def system_keys(system: System) -> set[str]:
    keys = set()
    for node in system.nodes:
        if not isinstance(node, Node):
            continue
        for p in node.processes:
            keys |= _process_keys(p)
    return keys


def _process_keys(p) -> set[str]:
    out = set()
    for t in terms_of(p):
        for s in subterms(t):
            if isinstance(s, Enc):
                out.add(s.key)
    stack = [p]
    while stack:
        q = stack.pop()
        if isinstance(q, Decrypt):
            out.add(q.key)
        for attr in ("cont", "body", "then", "orelse"):
            if hasattr(q, attr):
                stack.append(getattr(q, attr))
    return out


def parse_config(source: str, system: System | None = None) -> AnalysisConfig:
    """Parse a configuration document, validating it against ``system`` when given."""
    if not source.strip():
        return config_from_dict({}, system)
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, exc.lineno, exc.colno) from None
    return config_from_dict(doc, system)


def config_to_dict(cfg: AnalysisConfig) -> dict:
    out: dict[str, Any] = {"depth": cfg.depth}
    out["comp"] = "all" if cfg.comp == "all" else sorted(sorted(p) if len(p) == 2 else [*p, *p] for p in cfg.comp)
    if cfg.keys is not None:
        out["keys"] = sorted(cfg.keys)
    out["functions"] = {
        n: {"arity": s.arity, "kind": s.kind, "result_sort": s.result_sort} for n, s in sorted(cfg.functions.items())
    }
    sensors: dict[str, dict] = {}
    for (label, sid), seq in sorted(cfg.sensor_streams.items()):
        sensors.setdefault(label, {})[str(sid)] = list(seq)
    out["sensors"] = sensors
    secret = {}
    for label, atoms in cfg.secret.atoms().items():
        secret[label] = [{"sensor": p} if k == "sensor" else {"const": p} for k, p in atoms]
    out["secret"] = secret
    out["levels"] = dict(sorted(cfg.levels.items()))
    if cfg.policy in ("none", "levels"):
        out["policy"] = cfg.policy
    elif cfg.policy[0] == "allow":
        out["policy"] = sorted(list(p) for p in cfg.policy[1])
    else:
        out["policy"] = {"deny": sorted(list(p) for p in cfg.policy[1])}
    out["seed"] = cfg.seed
    out["max_steps"] = cfg.max_steps
    return out
