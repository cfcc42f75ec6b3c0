"""Abstract syntax of IoT-LySa systems and purely syntactic utilities.

A system is a parallel composition of labelled nodes; a node is a parallel
composition of components (one store, control processes, sensors and
actuators).  All AST classes are frozen dataclasses, so structural equality is
plain ``==`` and every tree is hashable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

from .values import Literal, format_literal, literal_sort

BUILTINS = {
    # name: (arity, precedence); higher binds tighter
    "or": (2, 1),
    "and": (2, 2),
    "not": (1, 3),
    "=": (2, 4),
    "<=": (2, 4),
    "<": (2, 4),
    ">=": (2, 4),
    ">": (2, 4),
    "+": (2, 5),
    "-": (2, 5),
    "*": (2, 6),
}


def _node(cls):
    """Frozen dataclass whose (deep, structural) hash is computed once."""
    cls = dataclass(frozen=True)(cls)
    structural = cls.__hash__

    def __hash__(self):
        try:
            return self.__dict__["_hash"]
        except KeyError:
            h = structural(self)
            object.__setattr__(self, "_hash", h)
            return h

    cls.__hash__ = __hash__
    return cls


def _tuple(obj, name):
    object.__setattr__(obj, name, tuple(getattr(obj, name)))


def _frozen(obj, name):
    object.__setattr__(obj, name, frozenset(getattr(obj, name)))


# ---------------------------------------------------------------------------
# terms


@_node
class Const:
    value: Literal

    def __post_init__(self):
        literal_sort(self.value)

    def __eq__(self, other):
        return (
            isinstance(other, Const)
            and literal_sort(self.value) == literal_sort(other.value)
            and self.value == other.value
        )

    def __hash__(self):
        return hash((Const, literal_sort(self.value), self.value))


@_node
class SensorLoc:
    sensor: int


@_node
class Var:
    name: str


@_node
class Enc:
    args: tuple
    key: str

    def __post_init__(self):
        _tuple(self, "args")


@_node
class App:
    func: str
    args: tuple

    def __post_init__(self):
        _tuple(self, "args")


Term = Union[Const, SensorLoc, Var, Enc, App]


# ---------------------------------------------------------------------------
# processes, sensors, actuators


@_node
class Nil:
    pass


NIL = Nil()


@_node
class IterVar:
    name: str


@_node
class Mu:
    name: str
    body: object


@_node
class MultiOut:
    terms: tuple
    receivers: frozenset
    cont: object

    def __post_init__(self):
        _tuple(self, "terms")
        _frozen(self, "receivers")


@_node
class Input:
    match: tuple
    binders: tuple
    cont: object

    def __post_init__(self):
        _tuple(self, "match")
        _tuple(self, "binders")


@_node
class Decrypt:
    subject: Term
    match: tuple
    binders: tuple
    key: str
    cont: object

    def __post_init__(self):
        _tuple(self, "match")
        _tuple(self, "binders")


@_node
class Cond:
    guard: Term
    then: object
    orelse: object


@_node
class Assign:
    var: str
    rhs: Term
    cont: object


@_node
class ActOut:
    actuator: int
    action: str
    cont: object


@_node
class Tau:
    cont: object


@_node
class StoreValue:
    """``@i := read`` -- the sensor deposits an environment reading in its location."""

    loc: int
    cont: object


@_node
class Command:
    actuator: int
    accepted: frozenset
    cont: object

    def __post_init__(self):
        _frozen(self, "accepted")


@_node
class Triggered:
    action: str
    cont: object


Process = Union[Nil, MultiOut, Input, Decrypt, Cond, IterVar, Mu, Assign, ActOut]
SensorProc = Union[Nil, Tau, StoreValue, IterVar, Mu]
ActuatorProc = Union[Nil, Tau, Command, Triggered, IterVar, Mu]


# ---------------------------------------------------------------------------
# nodes


@_node
class Store:
    pass


@_node
class Sensor:
    ident: int
    body: object


@_node
class Actuator:
    ident: int
    body: object


Component = Union[Store, Sensor, Actuator, Process]


@_node
class Node:
    label: str
    components: tuple

    def __post_init__(self):
        _tuple(self, "components")

    @property
    def sensors(self) -> dict[int, Sensor]:
        return {c.ident: c for c in self.components if isinstance(c, Sensor)}

    @property
    def actuators(self) -> dict[int, Actuator]:
        return {c.ident: c for c in self.components if isinstance(c, Actuator)}

    @property
    def processes(self) -> list:
        return [c for c in self.components if not isinstance(c, (Store, Sensor, Actuator))]

    @property
    def has_store(self) -> bool:
        return any(isinstance(c, Store) for c in self.components)


@_node
class InactiveNode:
    pass


@_node
class System:
    nodes: tuple

    def __post_init__(self):
        _tuple(self, "nodes")

    @property
    def labels(self) -> list[str]:
        return [n.label for n in self.nodes if isinstance(n, Node)]

    def node(self, label: str) -> Node:
        for n in self.nodes:
            if isinstance(n, Node) and n.label == label:
                return n
        raise KeyError(label)


# ---------------------------------------------------------------------------
# substitution and unfolding


def subst_iter(p, name: str, replacement):
    """Replace free occurrences of the iteration variable ``name`` in ``p``."""
    if isinstance(p, IterVar):
        return replacement if p.name == name else p
    if isinstance(p, Mu):
        if p.name == name:
            return p
        return Mu(p.name, subst_iter(p.body, name, replacement))
    if isinstance(p, Cond):
        return Cond(p.guard, subst_iter(p.then, name, replacement), subst_iter(p.orelse, name, replacement))
    if isinstance(p, Nil):
        return p
    return replace(p, cont=subst_iter(p.cont, name, replacement))


def unfold_once(p: Mu):
    """One congruence step: ``mu h.X`` becomes ``X{mu h.X / h}``."""
    return subst_iter(p.body, p.name, p)


def unfold(p: Mu, d: int):
    """Unroll ``p`` ``d`` times and close the residual iteration variable with ``0``.

    This is the bounded unrolling used by the analysis; it is not a
    behaviour-preserving transformation.
    """
    if not isinstance(p, Mu):
        raise TypeError("unfold expects a mu-process")
    if d < 1:
        raise ValueError("unfold depth must be at least 1")
    acc = NIL
    for _ in range(d):
        acc = subst_iter(p.body, p.name, acc)
    return acc


def free_iter_vars(p) -> set[str]:
    if isinstance(p, IterVar):
        return {p.name}
    if isinstance(p, Mu):
        return free_iter_vars(p.body) - {p.name}
    if isinstance(p, Cond):
        return free_iter_vars(p.then) | free_iter_vars(p.orelse)
    if isinstance(p, Nil):
        return set()
    return free_iter_vars(p.cont)


# ---------------------------------------------------------------------------
# structural congruence


def _drop_empty_outputs(p):
    if isinstance(p, MultiOut):
        cont = _drop_empty_outputs(p.cont)
        if not p.receivers and isinstance(cont, Nil):
            return NIL
        return MultiOut(p.terms, p.receivers, cont)
    if isinstance(p, Mu):
        return Mu(p.name, _drop_empty_outputs(p.body))
    if isinstance(p, Cond):
        return Cond(p.guard, _drop_empty_outputs(p.then), _drop_empty_outputs(p.orelse))
    if isinstance(p, (Nil, IterVar)):
        return p
    return replace(p, cont=_drop_empty_outputs(p.cont))


def congruence_normalize(n: System) -> System:
    """Canonical representative modulo the monoid laws and the empty-output law.

    Mu-unfolding is deliberately not applied.
    """
    nodes = []
    for node in n.nodes:
        if isinstance(node, InactiveNode):
            continue
        comps = []
        for c in node.components:
            # an inactive sensor still owns its store location, so it is kept
            if isinstance(c, (Store, Sensor, Actuator)):
                comps.append(c)
                continue
            c = _drop_empty_outputs(c)
            if not isinstance(c, Nil):
                comps.append(c)
        comps.sort(key=_component_key)
        nodes.append(Node(node.label, tuple(comps)))
    nodes.sort(key=lambda nd: nd.label)
    return System(tuple(nodes))


def _component_key(c) -> tuple:
    if isinstance(c, Store):
        return (0, 0, "")
    if isinstance(c, Sensor):
        return (1, c.ident, "")
    if isinstance(c, Actuator):
        return (2, c.ident, "")
    return (3, 0, format_process(c))


# ---------------------------------------------------------------------------
# printing (inverse of the parser)


def format_term(t, prec: int = 0) -> str:
    if isinstance(t, Const):
        return format_literal(t.value)
    if isinstance(t, SensorLoc):
        return f"@{t.sensor}"
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Enc):
        return "{" + ", ".join(format_term(a) for a in t.args) + "} key " + t.key
    info = BUILTINS.get(t.func)
    if info is not None and info[0] == len(t.args):
        arity, p = info
        if arity == 1:
            text = f"{t.func} {format_term(t.args[0], p)}"
        else:
            # left-assoc for arithmetic/boolean chains, comparisons non-assoc
            left = format_term(t.args[0], p if p != 4 else p + 1)
            right = format_term(t.args[1], p + 1)
            text = f"{left} {t.func} {right}"
        return f"({text})" if p < prec else text
    return f"{t.func}(" + ", ".join(format_term(a) for a in t.args) + ")"


def _terms(ts) -> str:
    return ", ".join(format_term(t) for t in ts)


def format_process(p) -> str:
    if isinstance(p, Nil):
        return "0"
    if isinstance(p, IterVar):
        return p.name
    if isinstance(p, Mu):
        return f"mu {p.name}. {format_process(p.body)}"
    if isinstance(p, MultiOut):
        recv = ", ".join(sorted(p.receivers))
        return f"<<{_terms(p.terms)}>> : {{{recv}}}. {format_process(p.cont)}"
    if isinstance(p, Input):
        return f"({_terms(p.match)}; {', '.join(p.binders)}). {format_process(p.cont)}"
    if isinstance(p, Decrypt):
        return (
            f"decrypt {format_term(p.subject, 9)} as {{{_terms(p.match)}; {', '.join(p.binders)}}} "
            f"key {p.key} in {format_process(p.cont)}"
        )
    if isinstance(p, Cond):
        # the guard is parenthesised so that a leading "(" is never mistaken for an input
        return f"({format_term(p.guard)}) ? {format_process(p.then)} : {format_process(p.orelse)}"
    if isinstance(p, Assign):
        return f"{p.var} := {format_term(p.rhs)}. {format_process(p.cont)}"
    if isinstance(p, ActOut):
        return f"<{p.actuator}, {p.action}>. {format_process(p.cont)}"
    if isinstance(p, Tau):
        return f"tau. {format_process(p.cont)}"
    if isinstance(p, StoreValue):
        return f"@{p.loc} := read. {format_process(p.cont)}"
    if isinstance(p, Command):
        acts = ", ".join(sorted(p.accepted))
        return f"(|{p.actuator}, {{{acts}}}|). {format_process(p.cont)}"
    if isinstance(p, Triggered):
        return f"{p.action}. {format_process(p.cont)}"
    raise TypeError(f"not a process: {p!r}")


def format_component(c) -> str:
    if isinstance(c, Store):
        return "store"
    if isinstance(c, Sensor):
        return f"sensor {c.ident} {{ {format_process(c.body)} }}"
    if isinstance(c, Actuator):
        return f"actuator {c.ident} {{ {format_process(c.body)} }}"
    return format_process(c)


def format_system(n: System) -> str:
    parts = []
    for node in n.nodes:
        if isinstance(node, InactiveNode):
            parts.append("0")
            continue
        inner = "\n    || ".join(format_component(c) for c in node.components)
        parts.append(f"{node.label} : [ {inner} ]")
    return "\n| ".join(parts) + "\n"


def terms_of(p):
    """Every top-level term occurring in a process prefix chain (not descending into terms)."""
    if isinstance(p, MultiOut):
        yield from p.terms
    elif isinstance(p, Input):
        yield from p.match
    elif isinstance(p, Decrypt):
        yield p.subject
        yield from p.match
    elif isinstance(p, Cond):
        yield p.guard
        yield from terms_of(p.then)
        yield from terms_of(p.orelse)
        return
    elif isinstance(p, Assign):
        yield p.rhs
    elif isinstance(p, Mu):
        yield from terms_of(p.body)
        return
    if hasattr(p, "cont"):
        yield from terms_of(p.cont)


def subterms(t):
    yield t
    if isinstance(t, (Enc, App)):
        for a in t.args:
            yield from subterms(a)
