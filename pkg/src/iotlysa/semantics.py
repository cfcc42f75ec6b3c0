"""Small-step interpreter with an instrumented store.

Every stored value is a pair (concrete, abstract): the concrete part is what
the reduction rules compute, the abstract part is the provenance term the
analysis is expected to predict for it.  Runs are driven by a seeded uniform
scheduler and produce a :class:`Trace` of observable events.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

from .config import AnalysisConfig
from .syntax import (
    ActOut,
    App,
    Assign,
    Command,
    Cond,
    Const,
    Decrypt,
    Enc,
    Input,
    Mu,
    MultiOut,
    Nil,
    Node,
    SensorLoc,
    StoreValue,
    System,
    Tau,
    Triggered,
    Var,
    congruence_normalize,
    format_system,
    unfold_once,
)
from .values import (
    TOPS,
    SECRET,
    AppAV,
    AppVal,
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
    format_concrete,
    sensor_origin,
    sources,
)


class RuntimeFault(Exception):
    """A reduction that cannot be completed; ends a run with a diagnostic."""


class UndefinedVariable(RuntimeFault):
    pass


class NonBooleanGuard(RuntimeFault):
    pass


class ArityMismatch(RuntimeFault):
    pass


class EvalError(RuntimeFault):
    pass


class InvalidChoice(IndexError):
    pass


class InstrumentedValue(NamedTuple):
    concrete: object
    abstract: object


def system_digest(system: System) -> str:
    text = format_system(congruence_normalize(system))
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# term evaluation


def _ints(f, vals):
    for v in vals:
        if not isinstance(v, Lit) or v.sort != "int":
            raise EvalError(f"{f} expects integers, got {format_concrete(v)}")
    return [v.value for v in vals]


def _bools(f, vals):
    for v in vals:
        if not isinstance(v, Lit) or v.sort != "bool":
            raise EvalError(f"{f} expects booleans, got {format_concrete(v)}")
    return [v.value for v in vals]


_ARITH = {"+": lambda a, b: a + b, "-": lambda a, b: a - b, "*": lambda a, b: a * b}
_REL = {"<=": lambda a, b: a <= b, "<": lambda a, b: a < b, ">=": lambda a, b: a >= b, ">": lambda a, b: a > b}


def _builtin(f: str, vals: list):
    if f == "=":
        return vals[0] == vals[1]
    if f in _ARITH:
        return _ARITH[f](*_ints(f, vals))
    if f in _REL:
        return _REL[f](*_ints(f, vals))
    if f == "not":
        return not _bools(f, vals)[0]
    a, b = _bools(f, vals)
    return (a and b) if f == "and" else (a or b)


def default_boolean_oracle(seed: int, label: str, version: int = 0):
    """Seeded stand-in for uninterpreted boolean functions (simulation only)."""

    def choose(func: str, args: tuple) -> bool:
        key = f"{seed}|{label}|{version}|{func}({', '.join(format_concrete(a) for a in args)})"
        return random.Random(key).random() < 0.5

    return choose


def eval_term(t, store, label: str, cfg: AnalysisConfig, *, oracle=None) -> InstrumentedValue:
    """Evaluate ``t`` at node ``label`` to a (concrete, abstract) pair.

    The abstract part mirrors the term structure, annotated with ``label`` and
    cut at the configured depth.  ``oracle(func, args) -> bool`` decides
    uninterpreted functions declared with a boolean result.
    """
    if isinstance(t, Const):
        return InstrumentedValue(Lit(t.value, frozenset({const_origin(label, t.value)})), ConstAV(t.value, label))
    if isinstance(t, SensorLoc):
        try:
            return store[t.sensor]
        except KeyError:
            raise UndefinedVariable(f"sensor location @{t.sensor} at {label} is undefined") from None
    if isinstance(t, Var):
        try:
            return store[t.name]
        except KeyError:
            raise UndefinedVariable(f"variable {t.name} at {label} is undefined") from None
    args = [eval_term(a, store, label, cfg, oracle=oracle) for a in t.args]
    cs = tuple(a.concrete for a in args)
    avs = tuple(a.abstract for a in args)
    if isinstance(t, Enc):
        return InstrumentedValue(EncVal(cs, t.key), cut(EncAV(avs, t.key, label), cfg.depth, cfg.secret))
    abstract = cut(AppAV(t.func, avs, label), cfg.depth, cfg.secret)
    sig = cfg.signature(t.func)
    if sig is not None and sig.arity != len(args):
        raise ArityMismatch(f"{t.func} expects {sig.arity} arguments, got {len(args)}")
    if sig is not None and sig.kind == "builtin":
        origin = frozenset().union(*(sources(c) for c in cs))
        return InstrumentedValue(Lit(_builtin(t.func, list(cs)), origin), abstract)
    if sig is not None and sig.result_sort == "boolean":
        choose = oracle or default_boolean_oracle(cfg.seed, label)
        origin = frozenset().union(*(sources(c) for c in cs))
        return InstrumentedValue(Lit(bool(choose(t.func, cs)), origin), abstract)
    return InstrumentedValue(AppVal(t.func, cs), abstract)


# ---------------------------------------------------------------------------
# configurations


@dataclass(frozen=True)
class Pending:
    """An evaluated multi-output still waiting for some of its receivers."""

    values: tuple
    receivers: frozenset


@dataclass(frozen=True)
class NodeState:
    label: str
    store: dict
    processes: tuple
    pending: tuple
    sensors: tuple  # (ident, sensor process)
    actuators: tuple  # (ident, actuator process)
    version: int = 0


@dataclass(frozen=True)
class Configuration:
    nodes: tuple
    stream_pos: dict
    step_count: int = 0
    seed: int = 0
    _local: dict = field(default_factory=dict, compare=False, repr=False)

    def index(self, label: str) -> int:
        for k, n in enumerate(self.nodes):
            if n.label == label:
                return k
        raise KeyError(label)

    def store(self, label: str) -> dict:
        return self.nodes[self.index(label)].store


def _settle(p):
    while isinstance(p, Mu):
        p = unfold_once(p)
    return p


def initial_configuration(system: System, cfg: AnalysisConfig, seed: int | None = None) -> Configuration:
    nodes = []
    for node in system.nodes:
        if not isinstance(node, Node):
            continue
        procs = tuple(q for q in (_settle(p) for p in node.processes) if not isinstance(q, Nil))
        sensors = tuple((s.ident, _settle(s.body)) for s in node.sensors.values())
        acts = tuple((a.ident, _settle(a.body)) for a in node.actuators.values())
        nodes.append(NodeState(node.label, {}, procs, (), sensors, acts))
    return Configuration(tuple(nodes), {}, 0, cfg.seed if seed is None else seed)


class Redex(NamedTuple):
    rule: str
    node: int
    kind: str  # "P" process, "S" sensor, "A" actuator, "O" pending output
    index: int
    peer_node: int = -1
    peer_index: int = -1


def _oracle(c: Configuration, n: NodeState):
    return default_boolean_oracle(c.seed, n.label, n.version)


def _try_eval(t, n: NodeState, c: Configuration, cfg):
    """Evaluate, or return None when the rule premise is blocked on an undefined location."""
    try:
        return eval_term(t, n.store, n.label, cfg, oracle=_oracle(c, n))
    except UndefinedVariable:
        return None


def _decrypt_ready(p: Decrypt, n, c, cfg):
    try:
        subject = eval_term(p.subject, n.store, n.label, cfg, oracle=_oracle(c, n))
        match = [eval_term(e, n.store, n.label, cfg, oracle=_oracle(c, n)) for e in p.match]
    except UndefinedVariable:
        return False
    v = subject.concrete
    if not isinstance(v, EncVal) or v.key != p.key or len(v.args) != len(p.match) + len(p.binders):
        return False
    return all(m.concrete == a for m, a in zip(match, v.args))


def _local_steps(a: int, n: NodeState, c: Configuration, cfg) -> list[Redex]:
    out = []
    for k, p in enumerate(n.processes):
        try:
            if isinstance(p, Assign):
                if _try_eval(p.rhs, n, c, cfg) is not None:
                    out.append(Redex("Asgm", a, "P", k))
            elif isinstance(p, MultiOut):
                if all(_try_eval(t, n, c, cfg) is not None for t in p.terms):
                    out.append(Redex("Ev-out", a, "P", k))
            elif isinstance(p, Decrypt):
                if _decrypt_ready(p, n, c, cfg):
                    out.append(Redex("Decr", a, "P", k))
            elif isinstance(p, Cond):
                g = _try_eval(p.guard, n, c, cfg)
                if g is None:
                    continue
                if isinstance(g.concrete, Lit) and g.concrete.sort == "bool":
                    out.append(Redex("Cond1" if g.concrete.value else "Cond2", a, "P", k))
                else:
                    out.append(Redex("Cond", a, "P", k))
            elif isinstance(p, ActOut):
                for m, (j, act) in enumerate(n.actuators):
                    if j == p.actuator and isinstance(act, Command) and p.action in act.accepted:
                        out.append(Redex("A-com", a, "P", k, a, m))
        except RuntimeFault:
            # a faulty premise surfaces as a step whose application raises
            out.append(Redex(type(p).__name__, a, "P", k))
    for m, (_, s) in enumerate(n.sensors):
        if isinstance(s, StoreValue):
            out.append(Redex("S-store", a, "S", m))
        elif isinstance(s, Tau):
            out.append(Redex("Int", a, "S", m))
    for m, (_, act) in enumerate(n.actuators):
        if isinstance(act, Tau):
            out.append(Redex("Int", a, "A", m))
        elif isinstance(act, Triggered):
            out.append(Redex("Act", a, "A", m))
    return out


def _com_steps(c: Configuration, cfg) -> list[Redex]:
    out = []
    where = {n.label: k for k, n in enumerate(c.nodes)}
    for a, n in enumerate(c.nodes):
        for q, pend in enumerate(n.pending):
            arity = len(pend.values)
            for l2 in sorted(pend.receivers):
                b = where.get(l2)
                if b is None or not cfg.compatible(n.label, l2):
                    continue
                rn = c.nodes[b]
                for k, p in enumerate(rn.processes):
                    if not isinstance(p, Input) or len(p.match) + len(p.binders) != arity:
                        continue
                    try:
                        match = [eval_term(e, rn.store, rn.label, cfg, oracle=_oracle(c, rn)) for e in p.match]
                    except RuntimeFault:
                        continue
                    if all(m.concrete == v.concrete for m, v in zip(match, pend.values)):
                        out.append(Redex("Multi-com", a, "O", q, b, k))
    return out


def enabled_steps(c: Configuration, cfg: AnalysisConfig) -> list[Redex]:
    """Every applicable rule instance, in a deterministic order."""
    out = []
    for a, n in enumerate(c.nodes):
        cached = c._local.get(a)
        if cached is None or cached[0] is not n:
            cached = (n, _local_steps(a, n, c, cfg))
            c._local[a] = cached
        out.extend(cached[1])
    out.extend(_com_steps(c, cfg))
    return out


# ---------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class Comm:
    sender: str
    receiver: str
    values: tuple
    kind = "Comm"


@dataclass(frozen=True)
class ActFire:
    node: str
    actuator: int
    action: str
    kind = "ActFire"


@dataclass(frozen=True)
class SensorStore:
    node: str
    sensor: int
    value: InstrumentedValue
    kind = "SensorStore"


@dataclass(frozen=True)
class AssignEvent:
    node: str
    variable: str
    value: InstrumentedValue
    kind = "Assign"


@dataclass(frozen=True)
class DecryptOk:
    node: str
    key: str
    bindings: tuple = ()  # (variable, InstrumentedValue)
    kind = "DecryptOk"


@dataclass(frozen=True)
class CondTaken:
    node: str
    branch: str
    kind = "CondTaken"


Event = Comm | ActFire | SensorStore | AssignEvent | DecryptOk | CondTaken


def event_values(ev) -> list[InstrumentedValue]:
    if isinstance(ev, Comm):
        return list(ev.values)
    if isinstance(ev, (SensorStore, AssignEvent)):
        return [ev.value]
    if isinstance(ev, DecryptOk):
        return [v for _, v in ev.bindings]
    return []


# ---------------------------------------------------------------------------
# applying a step


def _replace_at(items: tuple, k: int, new) -> tuple:
    """Replace item k; a settled Nil process disappears (monoid law)."""
    if new is None:
        return items[:k] + items[k + 1:]
    return items[:k] + (new,) + items[k + 1:]


def _next_proc(p):
    p = _settle(p)
    return None if isinstance(p, Nil) else p


def _bump(n: NodeState, **changes) -> NodeState:
    return replace(n, version=n.version + 1, **changes)


def _decrypt_binding(p: Decrypt, subject: InstrumentedValue, cfg: AnalysisConfig, label: str):
    v = subject.concrete
    j = len(p.match)
    bound = []
    for pos, x in enumerate(p.binders, start=j):
        conc = v.args[pos]
        if isinstance(subject.abstract, EncAV):
            ab = subject.abstract.args[pos]
        else:
            # the encryption itself was cut: its parts are only known up to their class
            marker = TopS if d_cls(conc, cfg.secret, label) == SECRET else TopP
            ab = marker(subject.abstract.label)
        bound.append((x, InstrumentedValue(conc, ab)))
    return bound


def apply_redex(c: Configuration, r: Redex, cfg: AnalysisConfig):
    nodes = list(c.nodes)
    n = nodes[r.node]
    oracle = _oracle(c, n)
    event = None
    stream_pos = c.stream_pos
    if r.kind == "P":
        p = n.processes[r.index]
        if r.rule == "Asgm":
            iv = eval_term(p.rhs, n.store, n.label, cfg, oracle=oracle)
            nodes[r.node] = _bump(
                n, store={**n.store, p.var: iv}, processes=_replace_at(n.processes, r.index, _next_proc(p.cont))
            )
            event = AssignEvent(n.label, p.var, iv)
        elif r.rule == "Ev-out":
            ivs = tuple(eval_term(t, n.store, n.label, cfg, oracle=oracle) for t in p.terms)
            pending = n.pending + ((Pending(ivs, p.receivers),) if p.receivers else ())
            nodes[r.node] = _bump(
                n, pending=pending, processes=_replace_at(n.processes, r.index, _next_proc(p.cont))
            )
        elif r.rule == "Decr":
            subject = eval_term(p.subject, n.store, n.label, cfg, oracle=oracle)
            bound = _decrypt_binding(p, subject, cfg, n.label)
            store = dict(n.store)
            store.update(bound)
            nodes[r.node] = _bump(n, store=store, processes=_replace_at(n.processes, r.index, _next_proc(p.cont)))
            event = DecryptOk(n.label, p.key, tuple(bound))
        elif r.rule in ("Cond1", "Cond2", "Cond"):
            g = eval_term(p.guard, n.store, n.label, cfg, oracle=oracle)
            if not (isinstance(g.concrete, Lit) and g.concrete.sort == "bool"):
                raise NonBooleanGuard(f"guard at {n.label} evaluated to {format_concrete(g.concrete)}")
            branch = p.then if g.concrete.value else p.orelse
            nodes[r.node] = _bump(n, processes=_replace_at(n.processes, r.index, _next_proc(branch)))
            event = CondTaken(n.label, "then" if g.concrete.value else "else")
        elif r.rule == "A-com":
            j, act = n.actuators[r.peer_index]
            actuators = _replace_at(n.actuators, r.peer_index, (j, Triggered(p.action, act.cont)))
            nodes[r.node] = _bump(
                n, actuators=actuators, processes=_replace_at(n.processes, r.index, _next_proc(p.cont))
            )
        else:
            # faulty premise recorded during enumeration: re-raise the fault
            for t in _prefix_terms(p):
                eval_term(t, n.store, n.label, cfg, oracle=oracle)
            raise EvalError(f"{r.rule} at {n.label} cannot be applied")
    elif r.kind == "S":
        i, s = n.sensors[r.index]
        if r.rule == "S-store":
            seq = cfg.stream(n.label, i)
            at = stream_pos.get((n.label, i), 0)
            stream_pos = {**stream_pos, (n.label, i): at + 1}
            value = seq[at % len(seq)]
            iv = InstrumentedValue(Lit(value, frozenset({sensor_origin(n.label, i)})), SensorAV(i, n.label))
            nodes[r.node] = _bump(
                n, store={**n.store, i: iv}, sensors=_replace_at(n.sensors, r.index, (i, _settle(s.cont)))
            )
            event = SensorStore(n.label, i, iv)
        else:
            nodes[r.node] = _bump(n, sensors=_replace_at(n.sensors, r.index, (i, _settle(s.cont))))
    elif r.kind == "A":
        j, act = n.actuators[r.index]
        nodes[r.node] = _bump(n, actuators=_replace_at(n.actuators, r.index, (j, _settle(act.cont))))
        if r.rule == "Act":
            event = ActFire(n.label, j, act.action)
    elif r.kind == "O":
        pend = n.pending[r.index]
        rn = nodes[r.peer_node]
        p = rn.processes[r.peer_index]
        store = dict(rn.store)
        j = len(p.match)
        for x, v in zip(p.binders, pend.values[j:]):
            store[x] = v
        receivers = pend.receivers - {rn.label}
        if r.peer_node == r.node:
            # self-communication: update the same node once
            procs = _replace_at(rn.processes, r.peer_index, _next_proc(p.cont))
            pend_items = _replace_at(n.pending, r.index, Pending(pend.values, receivers) if receivers else None)
            nodes[r.node] = _bump(n, store=store, processes=procs, pending=pend_items)
        else:
            nodes[r.peer_node] = _bump(
                rn, store=store, processes=_replace_at(rn.processes, r.peer_index, _next_proc(p.cont))
            )
            pend_items = _replace_at(n.pending, r.index, Pending(pend.values, receivers) if receivers else None)
            nodes[r.node] = _bump(n, pending=pend_items)
        event = Comm(n.label, rn.label, pend.values)
    local = {k: v for k, v in c._local.items() if v[0] is nodes[k]}
    return Configuration(tuple(nodes), stream_pos, c.step_count + 1, c.seed, local), event


def _prefix_terms(p):
    if isinstance(p, Assign):
        return [p.rhs]
    if isinstance(p, MultiOut):
        return list(p.terms)
    if isinstance(p, Decrypt):
        return [p.subject, *p.match]
    if isinstance(p, Cond):
        return [p.guard]
    return []


def step(c: Configuration, choice: int, cfg: AnalysisConfig):
    """Apply the ``choice``-th enabled step; returns (configuration, event or None)."""
    steps = enabled_steps(c, cfg)
    if not 0 <= choice < len(steps):
        raise InvalidChoice(f"choice {choice} out of range for {len(steps)} enabled steps")
    return apply_redex(c, steps[choice], cfg)


# ---------------------------------------------------------------------------
# runs and traces


@dataclass
class Trace:
    events: list
    final: Optional[Configuration]
    seed: int
    depth: int
    max_steps: int
    steps: int = 0
    termination: str = "max_steps"
    system_digest: str = ""


def run(
    system: System,
    cfg: AnalysisConfig,
    seed: int | None = None,
    max_steps: int | None = None,
    observe=None,
) -> Trace:
    """Drive the reduction relation with a seeded uniform scheduler.

    ``observe(configuration, event)`` is called after every step.
    """
    seed = cfg.seed if seed is None else seed
    limit = cfg.max_steps if max_steps is None else max_steps
    rng = random.Random(seed)
    c = initial_configuration(system, cfg, seed)
    events = []
    termination = "max_steps"
    taken = 0
    while taken < limit:
        steps = enabled_steps(c, cfg)
        if not steps:
            termination = "no enabled steps"
            break
        redex = steps[rng.randrange(len(steps))]
        try:
            c, ev = apply_redex(c, redex, cfg)
        except RuntimeFault as exc:
            termination = f"{type(exc).__name__}: {exc}"
            break
        taken += 1
        if observe is not None:
            observe(c, ev)
        if ev is not None:
            events.append(ev)
    return Trace(events, c, seed, cfg.depth, limit, taken, termination, system_digest(system))


def _iv_json(iv: InstrumentedValue) -> dict:
    return {"concrete": concrete_to_json(iv.concrete), "abstract": abstract_to_json(iv.abstract)}


def _iv_from(obj) -> InstrumentedValue:
    return InstrumentedValue(concrete_from_json(obj["concrete"]), abstract_from_json(obj["abstract"]))


def event_to_json(ev) -> dict:
    if isinstance(ev, Comm):
        return {"event": "Comm", "sender": ev.sender, "receiver": ev.receiver, "values": [_iv_json(v) for v in ev.values]}
    if isinstance(ev, ActFire):
        return {"event": "ActFire", "node": ev.node, "actuator": ev.actuator, "action": ev.action}
    if isinstance(ev, SensorStore):
        return {"event": "SensorStore", "node": ev.node, "sensor": ev.sensor, "value": _iv_json(ev.value)}
    if isinstance(ev, AssignEvent):
        return {"event": "Assign", "node": ev.node, "variable": ev.variable, "value": _iv_json(ev.value)}
    if isinstance(ev, DecryptOk):
        return {
            "event": "DecryptOk",
            "node": ev.node,
            "key": ev.key,
            "bindings": [{"variable": x, "value": _iv_json(v)} for x, v in ev.bindings],
        }
    return {"event": "CondTaken", "node": ev.node, "branch": ev.branch}


def event_from_json(obj: dict):
    kind = obj["event"]
    if kind == "Comm":
        return Comm(obj["sender"], obj["receiver"], tuple(_iv_from(v) for v in obj["values"]))
    if kind == "ActFire":
        return ActFire(obj["node"], obj["actuator"], obj["action"])
    if kind == "SensorStore":
        return SensorStore(obj["node"], obj["sensor"], _iv_from(obj["value"]))
    if kind == "Assign":
        return AssignEvent(obj["node"], obj["variable"], _iv_from(obj["value"]))
    if kind == "DecryptOk":
        return DecryptOk(obj["node"], obj["key"], tuple((b["variable"], _iv_from(b["value"])) for b in obj["bindings"]))
    if kind == "CondTaken":
        return CondTaken(obj["node"], obj["branch"])
    raise ValueError(f"unknown event {kind!r}")


def trace_to_ndjson(trace: Trace) -> str:
    header = {
        "seed": trace.seed,
        "depth": trace.depth,
        "max_steps": trace.max_steps,
        "system_digest": trace.system_digest,
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(event_to_json(ev), sort_keys=True) for ev in trace.events]
    return "\n".join(lines) + "\n"


def trace_from_ndjson(text: str) -> Trace:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty trace file")
    header = json.loads(lines[0])
    events = [event_from_json(json.loads(ln)) for ln in lines[1:]]
    return Trace(
        events,
        None,
        header["seed"],
        header["depth"],
        header["max_steps"],
        system_digest=header.get("system_digest", ""),
    )
