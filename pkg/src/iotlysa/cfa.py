"""Control flow analysis: constraint generation, least-fixpoint solving, estimates.

The analysis of a system is compiled into a set of monotone clauses over
named cells (abstract store locations, κ, Θ, α and one auxiliary cell per
analysed term).  Clauses nested under an input or a decryption carry a guard
cell that becomes non-empty once some message or ciphertext can reach that
point; until then the continuation contributes nothing.  The solver is a
worklist iteration that re-fires the clauses reading a cell whenever the
cell grows.
"""

from __future__ import annotations

import json
from collections import defaultdict, deque
from dataclasses import dataclass
from itertools import product
from typing import Iterable, NamedTuple, Optional

from .config import AnalysisConfig
from .semantics import system_digest
from .syntax import (
    ActOut,
    App,
    Assign,
    Cond,
    Const,
    Decrypt,
    Enc,
    Input,
    IterVar,
    Mu,
    MultiOut,
    Nil,
    Node,
    SensorLoc,
    System,
    Var,
    unfold,
)
from .values import (
    SECRET,
    AppAV,
    ConstAV,
    EncAV,
    SensorAV,
    TopP,
    TopS,
    abstract_from_json,
    abstract_to_json,
    cut,
    depth,
    s_cls,
    sort_key,
)


class MismatchedOrigin(ValueError):
    """A trace or estimate was produced for a different system."""


# ---------------------------------------------------------------------------
# cells and clauses


def sigma_cell(label: str, loc) -> tuple:
    return ("sigma", label, loc)


def kappa_cell(label: str) -> tuple:
    return ("kappa", label)


def theta_cell(label: str) -> tuple:
    return ("theta", label)


def alpha_cell(label: str, actuator: int) -> tuple:
    return ("alpha", label, actuator)


def term_cell(label: str, t) -> tuple:
    return ("term", label, t)


class Fact(NamedTuple):
    value: object
    dst: tuple
    guard: Optional[tuple] = None


class Subset(NamedTuple):
    src: tuple
    dst: tuple
    guard: Optional[tuple] = None


class Build(NamedTuple):
    """All combinations of the argument cells, wrapped and inserted into ``dsts``.

    ``ctor`` is "enc" (name = key), "app" (name = function) or "msg"
    (name = sender label; the κ entry is not cut).
    """

    ctor: str
    name: str
    label: str
    args: tuple
    dsts: tuple
    guard: Optional[tuple] = None


class Bind(NamedTuple):
    """Input: bind message tails from κ(receiver) and activate the continuation."""

    receiver: str
    j: int
    binders: tuple
    activate: tuple
    guard: Optional[tuple] = None


class Unpack(NamedTuple):
    """Decryption: bind ciphertext tails found in ``src`` and activate the continuation."""

    src: tuple
    key: str
    j: int
    binders: tuple
    activate: tuple
    guard: Optional[tuple] = None


Clause = Fact | Subset | Build | Bind | Unpack


def clause_reads(c) -> list:
    cells = [c.guard] if c.guard is not None else []
    if isinstance(c, Subset):
        cells.append(c.src)
    elif isinstance(c, Build):
        cells.extend(c.args)
    elif isinstance(c, Bind):
        cells.append(kappa_cell(c.receiver))
    elif isinstance(c, Unpack):
        cells.append(c.src)
    return cells


@dataclass
class ConstraintSet:
    clauses: list
    labels: tuple
    cfg: AnalysisConfig
    origin: Optional[str] = None

    def __len__(self):
        return len(self.clauses)


class _Sink:
    def __init__(self):
        self.clauses: list = []
        self._seen: set = set()
        self._activations: dict = {}

    def add(self, clause):
        if clause not in self._seen:
            self._seen.add(clause)
            self.clauses.append(clause)

    def activation(self, label, guard, p) -> tuple:
        key = (label, guard, p)
        if key not in self._activations:
            self._activations[key] = ("active", len(self._activations))
        return self._activations[key]


# ---------------------------------------------------------------------------
# generation


def analyze_term(t, label: str, sink) -> tuple:
    """Emit the clauses computing ϑ for ``t`` at ``label``; returns the ϑ cell.

    Term cells depend on Σ̂ only, so they are never guarded; callers add the
    (possibly guarded) inclusion of ϑ into Θ.
    """
    cell = term_cell(label, t)
    if isinstance(t, Const):
        sink.add(Fact(ConstAV(t.value, label), cell))
    elif isinstance(t, SensorLoc):
        sink.add(Fact(SensorAV(t.sensor, label), cell))
    elif isinstance(t, Var):
        sink.add(Subset(sigma_cell(label, t.name), cell))
    elif isinstance(t, Enc):
        args = tuple(analyze_term(a, label, sink) for a in t.args)
        sink.add(Build("enc", t.key, label, args, (cell,)))
    elif isinstance(t, App):
        args = tuple(analyze_term(a, label, sink) for a in t.args)
        sink.add(Build("app", t.func, label, args, (cell,)))
    else:
        raise TypeError(f"not a term: {t!r}")
    return cell


def _used(t, label, sink, guard) -> tuple:
    cell = analyze_term(t, label, sink)
    sink.add(Subset(cell, theta_cell(label), guard))
    return cell


def _process(p, label: str, sink: _Sink, cfg: AnalysisConfig, guard):
    while True:
        if isinstance(p, (Nil, IterVar)):
            return
        if isinstance(p, Mu):
            p = unfold(p, cfg.depth)
            continue
        if isinstance(p, MultiOut):
            args = tuple(_used(t, label, sink, guard) for t in p.terms)
            dsts = tuple(kappa_cell(r) for r in sorted(p.receivers))
            if dsts:
                sink.add(Build("msg", label, label, args, dsts, guard))
            p = p.cont
        elif isinstance(p, Input):
            for t in p.match:
                _used(t, label, sink, guard)
            act = sink.activation(label, guard, p)
            binders = tuple(sigma_cell(label, x) for x in p.binders)
            sink.add(Bind(label, len(p.match), binders, act, guard))
            p, guard = p.cont, act
        elif isinstance(p, Decrypt):
            src = _used(p.subject, label, sink, guard)
            for t in p.match:
                _used(t, label, sink, guard)
            act = sink.activation(label, guard, p)
            binders = tuple(sigma_cell(label, x) for x in p.binders)
            sink.add(Unpack(src, p.key, len(p.match), binders, act, guard))
            p, guard = p.cont, act
        elif isinstance(p, Cond):
            _used(p.guard, label, sink, guard)
            _process(p.then, label, sink, cfg, guard)
            p = p.orelse
        elif isinstance(p, Assign):
            cell = _used(p.rhs, label, sink, guard)
            sink.add(Subset(cell, sigma_cell(label, p.var), guard))
            p = p.cont
        elif isinstance(p, ActOut):
            sink.add(Fact(p.action, alpha_cell(label, p.actuator), guard))
            p = p.cont
        else:
            raise TypeError(f"not a process: {p!r}")


def generate(system: System, cfg: AnalysisConfig) -> ConstraintSet:
    """Compile the analysis of ``system`` into clauses."""
    sink = _Sink()
    labels = []
    for node in system.nodes:
        if not isinstance(node, Node):
            continue
        labels.append(node.label)
        if node.has_store:
            for i in sorted(node.sensors):
                sink.add(Fact(SensorAV(i, node.label), sigma_cell(node.label, i)))
        for p in node.processes:
            _process(p, node.label, sink, cfg, None)
    return ConstraintSet(sink.clauses, tuple(labels), cfg, system_digest(system))


# ---------------------------------------------------------------------------
# solving


class _Projection:
    """Distinct argument values of one Build clause, as they will appear after the cut.

    Cutting a composite at ``d`` only looks at its arguments cut at ``d - 1``
    (or, for ``d = 1``, at their classification), so arguments with equal
    projections give equal results and are combined once.
    """

    def __init__(self, arity: int):
        self.seen = [set() for _ in range(arity)]
        self.cols = [[] for _ in range(arity)]

    def extend(self, c: Build, cols: list, old: list, cfg: AnalysisConfig) -> list:
        before = [len(col) for col in self.cols]
        for i, col in enumerate(cols):
            for v in col[old[i]:]:
                key = _project(c, v, cfg)
                if key not in self.seen[i]:
                    self.seen[i].add(key)
                    self.cols[i].append(key)
        return before


def _project(c: Build, v, cfg: AnalysisConfig):
    if c.ctor == "msg":
        return v
    if cfg.depth == 1:
        return s_cls(v, cfg.secret)
    return cut(v, cfg.depth - 1, cfg.secret)


def _wrap(c: Build, combo, cfg: AnalysisConfig):
    """Result of a Build for a combination of projected arguments."""
    if c.ctor == "msg":
        return (c.name, combo)
    if cfg.depth == 1 and combo:
        secret = c.ctor == "app" and SECRET in combo
        return TopS(c.label) if secret else TopP(c.label)
    return EncAV(combo, c.name, c.label) if c.ctor == "enc" else AppAV(c.name, combo, c.label)


def _delta_products(cols: list, old: list) -> "Iterable[tuple]":
    """Combinations using at least one value beyond ``old`` (semi-naive expansion)."""
    for i in range(len(cols)):
        if old[i] == len(cols[i]):
            continue
        parts = [col[: old[k]] for k, col in enumerate(cols[:i])]
        parts.append(cols[i][old[i]:])
        parts += cols[i + 1:]
        yield from product(*parts)


def _fire(c, cols: list, old: list, cfg: AnalysisConfig, proj=None) -> list:
    """Insertions due to the values of the read cells added since the last firing.

    ``cols`` are the current value lists of the clause's sources (guard
    excluded) and ``old`` how many of each were already processed.
    """
    if isinstance(c, Fact):
        return [(c.dst, c.value)] if not any(old) else []
    if isinstance(c, Subset):
        return [(c.dst, v) for v in cols[0][old[0]:]]
    if isinstance(c, Build):
        if not c.args:
            return [] if old[0] else [(d, _wrap(c, (), cfg)) for d in c.dsts]
        before = proj.extend(c, cols, old, cfg)
        out = []
        for combo in _delta_products(proj.cols, before):
            item = _wrap(c, combo, cfg)
            out.extend((d, item) for d in c.dsts)
        return out
    if isinstance(c, Bind):
        arity = c.j + len(c.binders)
        out = []
        for sender, values in cols[0][old[0]:]:
            if not cfg.compatible(sender, c.receiver):
                continue
            if cfg.precise_match and len(values) != arity:
                continue
            out.append((c.activate, True))
            out.extend(zip(c.binders, values[c.j:]))
        return out
    if isinstance(c, Unpack):
        arity = c.j + len(c.binders)
        out = []
        for v in cols[0][old[0]:]:
            if isinstance(v, EncAV) and v.key == c.key and len(v.args) == arity:
                out.append((c.activate, True))
                out.extend(zip(c.binders, v.args[c.j:]))
            elif isinstance(v, TopP):
                # a ciphertext whose structure was cut: its parts may be anything of that node
                out.append((c.activate, True))
                for cell in c.binders:
                    out += [(cell, TopS(v.label)), (cell, TopP(v.label))]
        return out
    raise TypeError(f"unknown clause {c!r}")


def _sources(c) -> list:
    if isinstance(c, Subset):
        return [c.src]
    if isinstance(c, Build):
        return list(c.args)
    if isinstance(c, Bind):
        return [kappa_cell(c.receiver)]
    if isinstance(c, Unpack):
        return [c.src]
    return []


def solve(cs: ConstraintSet) -> "Estimate":
    """Least solution of the clause set."""
    clauses = cs.clauses
    watchers = defaultdict(list)
    for k, c in enumerate(clauses):
        for cell in clause_reads(c):
            watchers[cell].append(k)
    sets: dict = defaultdict(set)
    lists: dict = defaultdict(list)
    sources = [_sources(c) for c in clauses]
    # processed prefix length per source; a zero-argument clause uses a single flag
    marks = [[0] * max(1, len(src)) for src in sources]
    queue = deque(range(len(clauses)))
    queued = [True] * len(clauses)
    projections: dict = {}
    while queue:
        k = queue.popleft()
        queued[k] = False
        c = clauses[k]
        if c.guard is not None and not sets.get(c.guard):
            continue
        cols = [lists[cell] for cell in sources[k]]
        old = marks[k]
        if isinstance(c, Build) and c.args and k not in projections:
            projections[k] = _Projection(len(c.args))
        inserts = _fire(c, cols, old, cs.cfg, projections.get(k))
        marks[k] = [len(col) for col in cols] if cols else [1]
        for cell, v in inserts:
            bucket = sets[cell]
            if v in bucket:
                continue
            bucket.add(v)
            lists[cell].append(v)
            for w in watchers.get(cell, ()):
                if not queued[w]:
                    queued[w] = True
                    queue.append(w)
    return Estimate.from_cells(sets, cs.origin)


def analyze(system: System, cfg: AnalysisConfig) -> "Estimate":
    return solve(generate(system, cfg))


# ---------------------------------------------------------------------------
# estimates


def _loc_key(loc) -> str:
    return f"@{loc}" if isinstance(loc, int) else loc


def _loc_from(key: str):
    return int(key[1:]) if key.startswith("@") else key


def _freeze(mapping) -> dict:
    return {k: frozenset(v) for k, v in mapping.items() if v}


class Estimate:
    """An analysis result (Σ̂, κ, Θ, α); empty entries are omitted."""

    def __init__(self, sigma_hat=None, kappa=None, theta=None, alpha=None, origin=None):
        self.sigma_hat = {
            l: _freeze(locs) for l, locs in (sigma_hat or {}).items() if any(locs.values())
        }
        self.kappa = _freeze(kappa or {})
        self.theta = _freeze(theta or {})
        self.alpha = _freeze(alpha or {})
        self.origin = origin

    @classmethod
    def from_cells(cls, val: dict, origin=None) -> "Estimate":
        sigma, kappa, theta, alpha = defaultdict(dict), {}, {}, {}
        for cell, items in val.items():
            if cell[0] == "sigma":
                sigma[cell[1]][cell[2]] = items
            elif cell[0] == "kappa":
                kappa[cell[1]] = items
            elif cell[0] == "theta":
                theta[cell[1]] = items
            elif cell[0] == "alpha":
                alpha[(cell[1], cell[2])] = items
        return cls(sigma, kappa, theta, alpha, origin)

    # accessors
    def sigma(self, label: str, loc) -> frozenset:
        return self.sigma_hat.get(label, {}).get(loc, frozenset())

    def kappa_of(self, label: str) -> frozenset:
        return self.kappa.get(label, frozenset())

    def theta_of(self, label: str) -> frozenset:
        return self.theta.get(label, frozenset())

    def alpha_of(self, label: str, actuator: int) -> frozenset:
        return self.alpha.get((label, actuator), frozenset())

    def flows(self) -> set:
        """Sender/receiver pairs evidenced by κ."""
        return {(sender, receiver) for receiver, msgs in self.kappa.items() for sender, _ in msgs}

    def elements(self):
        for label, locs in self.sigma_hat.items():
            for loc, vals in locs.items():
                for v in vals:
                    yield ("sigma", label, loc, v)
        for label, msgs in self.kappa.items():
            for m in msgs:
                yield ("kappa", label, m)
        for label, vals in self.theta.items():
            for v in vals:
                yield ("theta", label, v)
        for (label, j), acts in self.alpha.items():
            for g in acts:
                yield ("alpha", label, j, g)

    def without(self, element) -> "Estimate":
        sigma = {l: {loc: set(v) for loc, v in locs.items()} for l, locs in self.sigma_hat.items()}
        kappa = {l: set(v) for l, v in self.kappa.items()}
        theta = {l: set(v) for l, v in self.theta.items()}
        alpha = {k: set(v) for k, v in self.alpha.items()}
        kind = element[0]
        if kind == "sigma":
            sigma[element[1]][element[2]].discard(element[3])
        elif kind == "kappa":
            kappa[element[1]].discard(element[2])
        elif kind == "theta":
            theta[element[1]].discard(element[2])
        else:
            alpha[(element[1], element[2])].discard(element[3])
        return Estimate(sigma, kappa, theta, alpha, self.origin)

    def leq(self, other: "Estimate") -> bool:
        """Pointwise inclusion."""
        return all(_contains(other, e) for e in self.elements())

    def max_depth(self) -> int:
        vals = [e[-1] for e in self.elements() if e[0] in ("sigma", "theta")]
        vals += [v for e in self.elements() if e[0] == "kappa" for v in e[2][1]]
        return max((depth(v) for v in vals), default=0)

    def sizes(self) -> dict:
        return {
            "sigma_hat": sum(len(v) for locs in self.sigma_hat.values() for v in locs.values()),
            "kappa": sum(len(v) for v in self.kappa.values()),
            "theta": sum(len(v) for v in self.theta.values()),
            "alpha": sum(len(v) for v in self.alpha.values()),
        }

    def __eq__(self, other):
        return (
            isinstance(other, Estimate)
            and self.sigma_hat == other.sigma_hat
            and self.kappa == other.kappa
            and self.theta == other.theta
            and self.alpha == other.alpha
        )

    def __repr__(self):
        return f"Estimate({self.sizes()})"

    # serialization
    def to_json(self) -> dict:
        def avs(vals):
            return [abstract_to_json(v) for v in sorted(vals, key=sort_key)]

        def msg_key(m):
            return json.dumps([m[0], [abstract_to_json(v) for v in m[1]]], sort_keys=True)

        alpha: dict = defaultdict(dict)
        for (label, j), acts in sorted(self.alpha.items(), key=lambda kv: (kv[0][0], kv[0][1])):
            alpha[label][str(j)] = sorted(acts)
        return {
            "sigma_hat": {
                label: {_loc_key(loc): avs(vals) for loc, vals in sorted(locs.items(), key=lambda kv: _loc_key(kv[0]))}
                for label, locs in sorted(self.sigma_hat.items())
            },
            "kappa": {
                label: [
                    {"sender": s, "values": [abstract_to_json(v) for v in vs]}
                    for s, vs in sorted(msgs, key=msg_key)
                ]
                for label, msgs in sorted(self.kappa.items())
            },
            "theta": {label: avs(vals) for label, vals in sorted(self.theta.items())},
            "alpha": dict(alpha),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, doc: dict, origin=None) -> "Estimate":
        if set(doc) != {"sigma_hat", "kappa", "theta", "alpha"}:
            raise ValueError("an estimate has exactly the keys sigma_hat, kappa, theta, alpha")
        sigma = {
            label: {_loc_from(k): {abstract_from_json(v) for v in vals} for k, vals in locs.items()}
            for label, locs in doc["sigma_hat"].items()
        }
        kappa = {
            label: {(m["sender"], tuple(abstract_from_json(v) for v in m["values"])) for m in msgs}
            for label, msgs in doc["kappa"].items()
        }
        theta = {label: {abstract_from_json(v) for v in vals} for label, vals in doc["theta"].items()}
        alpha = {
            (label, int(j)): set(acts) for label, per in doc["alpha"].items() for j, acts in per.items()
        }
        return cls(sigma, kappa, theta, alpha, origin)

    @classmethod
    def loads(cls, text: str, origin=None) -> "Estimate":
        return cls.from_json(json.loads(text), origin)


def _contains(e: Estimate, element) -> bool:
    kind = element[0]
    if kind == "sigma":
        return element[3] in e.sigma(element[1], element[2])
    if kind == "kappa":
        return element[2] in e.kappa_of(element[1])
    if kind == "theta":
        return element[2] in e.theta_of(element[1])
    return element[3] in e.alpha_of(element[1], element[2])
