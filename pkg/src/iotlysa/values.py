"""Abstract and concrete values, the depth cut, and secrecy classification.

Abstract values track provenance only: which sensor or node constant a datum
comes from and which functions/encryptions were applied to it, each node
annotated with the label of the node that performed the operation.  Concrete
values are what the interpreter actually computes; literals remember the atoms
they were derived from so that the dynamic classifier can be evaluated on them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

Literal = Union[int, bool, str]

SECRET = "s"
PUBLIC = "p"


def literal_sort(value: Literal) -> str:
    # bool before int: True == 1 in Python but not in the calculus
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, str):
        return "str"
    raise TypeError(f"unsupported literal {value!r}")


def format_literal(value: Literal) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return json.dumps(value)


# ---------------------------------------------------------------------------
# abstract values


@dataclass(frozen=True)
class TopS:
    """Cut marker standing for secret residue computed at ``label``."""

    label: str


@dataclass(frozen=True)
class TopP:
    """Cut marker standing for public residue computed at ``label``."""

    label: str


@dataclass(frozen=True)
class SensorAV:
    sensor: int
    label: str


@dataclass(frozen=True)
class ConstAV:
    value: Literal
    label: str
    sort: str = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "sort", literal_sort(self.value))


def _composite(obj):
    object.__setattr__(obj, "args", tuple(obj.args))
    object.__setattr__(obj, "depth", 1 + max((depth(a) for a in obj.args), default=0))
    object.__setattr__(obj, "_hash", None)


def _composite_hash(obj, *fields):
    if obj._hash is None:
        object.__setattr__(obj, "_hash", hash((type(obj).__name__, *fields)))
    return obj._hash


@dataclass(frozen=True)
class EncAV:
    args: tuple
    key: str
    label: str
    depth: int = field(init=False, repr=False, compare=False)
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _composite(self)

    def __hash__(self):
        return _composite_hash(self, self.args, self.key, self.label)


@dataclass(frozen=True)
class AppAV:
    func: str
    args: tuple
    label: str
    depth: int = field(init=False, repr=False, compare=False)
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _composite(self)

    def __hash__(self):
        return _composite_hash(self, self.func, self.args, self.label)


AbstractValue = Union[TopS, TopP, SensorAV, ConstAV, EncAV, AppAV]
TOPS = (TopS, TopP)


def depth(av: AbstractValue) -> int:
    if isinstance(av, (EncAV, AppAV)):
        return av.depth
    return 1


def format_abstract(av: AbstractValue) -> str:
    """Render in the notation used in reports, e.g. ``noiseRed^lcp(1^lcp)``."""
    if isinstance(av, TopS):
        return f"Ts^{av.label}"
    if isinstance(av, TopP):
        return f"Tp^{av.label}"
    if isinstance(av, SensorAV):
        return f"{av.sensor}^{av.label}"
    if isinstance(av, ConstAV):
        return f"{format_literal(av.value)}^{av.label}"
    inner = ", ".join(format_abstract(a) for a in av.args)
    if isinstance(av, EncAV):
        return f"{{{inner}}}^{av.label}_{av.key}"
    return f"{av.func}^{av.label}({inner})"


# ---------------------------------------------------------------------------
# classification


class Classification:
    """Per-node secret atoms; every other atom of a node is public.

    Atoms are sensor identifiers or literals.  Lookups are keyed by the node
    annotation of the atom, so values received from another node keep the
    classification of the node they originate from.
    """

    def __init__(self, secret: Mapping[str, Iterable] | None = None):
        self._sensors: dict[str, frozenset] = {}
        self._consts: dict[str, frozenset] = {}
        self._cut_memo: dict = {}
        for label, atoms in (secret or {}).items():
            sensors, consts = set(), set()
            for atom in atoms:
                kind, payload = _split_atom(atom)
                if kind == "sensor":
                    sensors.add(payload)
                else:
                    consts.add((literal_sort(payload), payload))
            self._sensors[label] = frozenset(sensors)
            self._consts[label] = frozenset(consts)

    @classmethod
    def public(cls) -> "Classification":
        return cls()

    def secret_sensor(self, label: str, sensor: int) -> bool:
        return sensor in self._sensors.get(label, ())

    def secret_const(self, label: str, value: Literal) -> bool:
        return (literal_sort(value), value) in self._consts.get(label, ())

    def atoms(self) -> dict[str, list]:
        out: dict[str, list] = {}
        for label in sorted(set(self._sensors) | set(self._consts)):
            items: list = [("sensor", i) for i in sorted(self._sensors.get(label, ()))]
            items += [("const", v) for _, v in sorted(self._consts.get(label, ()), key=repr)]
            out[label] = items
        return out

    def __eq__(self, other):
        return (
            isinstance(other, Classification)
            and self._sensors == other._sensors
            and self._consts == other._consts
        )

    def __repr__(self):
        return f"Classification({self.atoms()!r})"


def _split_atom(atom):
    if isinstance(atom, tuple) and len(atom) == 2 and atom[0] in ("sensor", "const"):
        return atom
    raise ValueError(f"classification atom must be ('sensor', i) or ('const', v), got {atom!r}")


def s_cls(av: AbstractValue, cls: Classification | None) -> str:
    """Static classifier: one secret ingredient makes a term secret, encryption makes it public."""
    if isinstance(av, TopS):
        return SECRET
    if isinstance(av, TopP):
        return PUBLIC
    if cls is None:
        return PUBLIC
    if isinstance(av, SensorAV):
        return SECRET if cls.secret_sensor(av.label, av.sensor) else PUBLIC
    if isinstance(av, ConstAV):
        return SECRET if cls.secret_const(av.label, av.value) else PUBLIC
    if isinstance(av, EncAV):
        return PUBLIC
    return SECRET if any(s_cls(a, cls) == SECRET for a in av.args) else PUBLIC


def cut(av: AbstractValue, d: int, cls: Classification | None = None) -> AbstractValue:
    """Bound ``av`` to depth ``d``.

    The retained prefix is maximal: a subterm is replaced only when it sits at
    depth ``d`` and still has structure below it.  The replacement marker is
    secret or public according to ``s_cls`` of the replaced subterm and carries
    its node annotation.
    """
    if d < 1:
        raise ValueError("depth bound must be at least 1")
    return _cut(av, d, cls, _PUBLIC_MEMO if cls is None else cls._cut_memo)


_PUBLIC_MEMO: dict = {}


def _cut(av, room, cls, memo):
    if depth(av) <= room:
        return av
    key = (av, room)
    hit = memo.get(key)
    if hit is not None:
        return hit
    if room == 1:
        marker = TopS if s_cls(av, cls) == SECRET else TopP
        out = marker(av.label)
    else:
        args = tuple(_cut(a, room - 1, cls, memo) for a in av.args)
        out = EncAV(args, av.key, av.label) if isinstance(av, EncAV) else AppAV(av.func, args, av.label)
    if len(memo) > 200_000:
        memo.clear()
    memo[key] = out
    return out


# ---------------------------------------------------------------------------
# concrete values

# an origin atom is ("sensor", label, i) or ("const", label, sort, value)


@dataclass(frozen=True)
class Lit:
    """A literal; ``origin`` records the atoms it was computed from (ignored by equality)."""

    value: Literal
    origin: frozenset = field(default=frozenset(), compare=False)
    sort: str = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "sort", literal_sort(self.value))
        object.__setattr__(self, "origin", frozenset(self.origin))


@dataclass(frozen=True)
class EncVal:
    args: tuple
    key: str

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))


@dataclass(frozen=True)
class AppVal:
    func: str
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))


ConcreteValue = Union[Lit, EncVal, AppVal]


def const_origin(label: str, value: Literal) -> tuple:
    return ("const", label, literal_sort(value), value)


def sensor_origin(label: str, sensor: int) -> tuple:
    return ("sensor", label, sensor)


def sources(v: ConcreteValue) -> frozenset:
    """Atoms a value depends on outside any encryption."""
    if isinstance(v, Lit):
        return v.origin
    if isinstance(v, EncVal):
        return frozenset()
    out: frozenset = frozenset()
    for a in v.args:
        out |= sources(a)
    return out


def _atom_secret(atom: tuple, cls: Classification) -> bool:
    if atom[0] == "sensor":
        return cls.secret_sensor(atom[1], atom[2])
    return cls.secret_const(atom[1], atom[3])


def d_cls(v: ConcreteValue, cls: Classification | None, label: str | None = None) -> str:
    """Dynamic classifier, the concrete counterpart of :func:`s_cls`.

    A literal without recorded origin is taken to be a constant of ``label``.
    """
    if cls is None:
        return PUBLIC
    if isinstance(v, EncVal):
        return PUBLIC
    if isinstance(v, AppVal):
        return SECRET if any(d_cls(a, cls, label) == SECRET for a in v.args) else PUBLIC
    if not v.origin:
        if label is not None and cls.secret_const(label, v.value):
            return SECRET
        return PUBLIC
    return SECRET if any(_atom_secret(a, cls) for a in v.origin) else PUBLIC


def format_concrete(v: ConcreteValue) -> str:
    if isinstance(v, Lit):
        return format_literal(v.value)
    inner = ", ".join(format_concrete(a) for a in v.args)
    if isinstance(v, EncVal):
        return f"{{{inner}}}_{v.key}"
    return f"{v.func}({inner})"


# ---------------------------------------------------------------------------
# JSON encodings (shared by estimate and trace files)


def abstract_to_json(av: AbstractValue) -> dict:
    if isinstance(av, TopS):
        return {"top": "s", "label": av.label}
    if isinstance(av, TopP):
        return {"top": "p", "label": av.label}
    if isinstance(av, SensorAV):
        return {"sensor": av.sensor, "label": av.label}
    if isinstance(av, ConstAV):
        return {"const": av.value, "label": av.label}
    args = [abstract_to_json(a) for a in av.args]
    if isinstance(av, EncAV):
        return {"enc": args, "key": av.key, "label": av.label}
    return {"app": av.func, "args": args, "label": av.label}


def abstract_from_json(obj: dict) -> AbstractValue:
    label = obj["label"]
    if "top" in obj:
        return TopS(label) if obj["top"] == "s" else TopP(label)
    if "sensor" in obj:
        return SensorAV(int(obj["sensor"]), label)
    if "const" in obj:
        return ConstAV(obj["const"], label)
    if "enc" in obj:
        return EncAV(tuple(abstract_from_json(a) for a in obj["enc"]), obj["key"], label)
    if "app" in obj:
        return AppAV(obj["app"], tuple(abstract_from_json(a) for a in obj["args"]), label)
    raise ValueError(f"not an abstract value: {obj!r}")


def concrete_to_json(v: ConcreteValue) -> dict:
    if isinstance(v, Lit):
        return {"lit": v.value, "origin": sorted([list(a) for a in v.origin], key=repr)}
    args = [concrete_to_json(a) for a in v.args]
    if isinstance(v, EncVal):
        return {"enc": args, "key": v.key}
    return {"app": v.func, "args": args}


def concrete_from_json(obj: dict) -> ConcreteValue:
    if "lit" in obj:
        return Lit(obj["lit"], frozenset(tuple(a) for a in obj.get("origin", ())))
    if "enc" in obj:
        return EncVal(tuple(concrete_from_json(a) for a in obj["enc"]), obj["key"])
    return AppVal(obj["app"], tuple(concrete_from_json(a) for a in obj["args"]))


def sort_key(av: AbstractValue) -> str:
    return json.dumps(abstract_to_json(av), sort_keys=True)
