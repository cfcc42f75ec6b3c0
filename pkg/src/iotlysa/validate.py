"""Estimate checking, written independently of the clause compiler.

:func:`validate` walks the syntax tree and checks every judgement instance
directly against a given estimate; :func:`cross_check` compares a simulated
trace with an estimate event by event.
"""

from __future__ import annotations

from itertools import product
from typing import NamedTuple

from .cfa import Estimate, MismatchedOrigin
from .config import AnalysisConfig
from .semantics import (
    ActFire,
    AssignEvent,
    Comm,
    Configuration,
    DecryptOk,
    SensorStore,
    Trace,
)
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
    format_process,
    format_term,
    unfold,
)
from .values import AppAV, ConstAV, EncAV, SensorAV, TopP, TopS, cut, format_abstract


class Violation(NamedTuple):
    rule: str
    node: str
    detail: str

    def __str__(self):
        return f"[{self.rule}] at {self.node}: {self.detail}"


class _Checker:
    def __init__(self, e: Estimate, cfg: AnalysisConfig):
        self.e = e
        self.cfg = cfg
        self.out: list[Violation] = []
        self._theta: dict = {}
        self._done: set = set()

    def fail(self, rule, node, detail):
        self.out.append(Violation(rule, node, detail))

    def theta_of(self, t, label) -> frozenset:
        """The least ϑ for ``t`` under the estimate's abstract store."""
        key = (label, t)
        if key in self._theta:
            return self._theta[key]
        if isinstance(t, Const):
            res = frozenset({ConstAV(t.value, label)})
        elif isinstance(t, SensorLoc):
            res = frozenset({SensorAV(t.sensor, label)})
        elif isinstance(t, Var):
            res = self.e.sigma(label, t.name)
        else:
            parts = [self.theta_of(a, label) for a in t.args]
            if isinstance(t, Enc):
                res = frozenset(cut(EncAV(c, t.key, label), self.cfg.depth, self.cfg.secret) for c in product(*parts))
            else:
                res = frozenset(cut(AppAV(t.func, c, label), self.cfg.depth, self.cfg.secret) for c in product(*parts))
        self._theta[key] = res
        return res

    def term(self, t, label) -> frozenset:
        vals = self.theta_of(t, label)
        missing = vals - self.e.theta_of(label)
        for v in sorted(missing, key=format_abstract):
            self.fail("term", label, f"{format_abstract(v)} from {format_term(t)} not in Θ")
        return vals

    def process(self, p, label):
        # identical (node, process) instances need checking only once
        if (label, p) in self._done:
            return
        self._done.add((label, p))
        if isinstance(p, (Nil, IterVar)):
            return
        if isinstance(p, Mu):
            self.process(unfold(p, self.cfg.depth), label)
        elif isinstance(p, MultiOut):
            sets = [self.term(t, label) for t in p.terms]
            for combo in product(*sets):
                for r in sorted(p.receivers):
                    if (label, combo) not in self.e.kappa_of(r):
                        shown = ", ".join(format_abstract(v) for v in combo)
                        self.fail("output", label, f"message <{shown}> missing from κ({r})")
            self.process(p.cont, label)
        elif isinstance(p, Input):
            for t in p.match:
                self.term(t, label)
            j, arity = len(p.match), len(p.match) + len(p.binders)
            reached = False
            for sender, values in sorted(self.e.kappa_of(label), key=repr):
                if not self.cfg.compatible(sender, label):
                    continue
                if self.cfg.precise_match and len(values) != arity:
                    continue
                reached = True
                for x, v in zip(p.binders, values[j:]):
                    if v not in self.e.sigma(label, x):
                        self.fail("input", label, f"{format_abstract(v)} from {sender} missing from Σ̂({x})")
            if reached:
                self.process(p.cont, label)
        elif isinstance(p, Decrypt):
            subject = self.term(p.subject, label)
            for t in p.match:
                self.term(t, label)
            j, arity = len(p.match), len(p.match) + len(p.binders)
            reached = False
            for v in sorted(subject, key=format_abstract):
                if isinstance(v, EncAV) and v.key == p.key and len(v.args) == arity:
                    parts = [[a] for a in v.args[j:]]
                elif isinstance(v, TopP):
                    parts = [[TopS(v.label), TopP(v.label)] for _ in p.binders]
                else:
                    continue
                reached = True
                for x, options in zip(p.binders, parts):
                    for a in options:
                        if a not in self.e.sigma(label, x):
                            self.fail("decrypt", label, f"{format_abstract(a)} missing from Σ̂({x})")
            if reached:
                self.process(p.cont, label)
        elif isinstance(p, Cond):
            self.term(p.guard, label)
            self.process(p.then, label)
            self.process(p.orelse, label)
        elif isinstance(p, Assign):
            for v in self.term(p.rhs, label):
                if v not in self.e.sigma(label, p.var):
                    self.fail("assign", label, f"{format_abstract(v)} missing from Σ̂({p.var})")
            self.process(p.cont, label)
        elif isinstance(p, ActOut):
            if p.action not in self.e.alpha_of(label, p.actuator):
                self.fail("actuate", label, f"{p.action} missing from α({p.actuator})")
            self.process(p.cont, label)
        else:
            raise TypeError(f"unexpected process {format_process(p)}")


def validate(system: System, cfg: AnalysisConfig, e: Estimate) -> list[Violation]:
    """Every judgement instance the estimate fails; empty means acceptable."""
    chk = _Checker(e, cfg)
    for node in system.nodes:
        if not isinstance(node, Node):
            continue
        if node.has_store:
            for i in sorted(node.sensors):
                if SensorAV(i, node.label) not in e.sigma(node.label, i):
                    chk.fail("store", node.label, f"{i}^{node.label} missing from Σ̂(@{i})")
        for p in node.processes:
            chk.process(p, node.label)
    return chk.out


# ---------------------------------------------------------------------------
# traces against estimates


def _check_origin(trace_digest, e: Estimate):
    if trace_digest and e.origin and trace_digest != e.origin:
        raise MismatchedOrigin("trace and estimate were produced for different systems")


def _loc_name(loc) -> str:
    return f"@{loc}" if isinstance(loc, int) else loc


def store_agreement(c: Configuration, e: Estimate) -> list[Violation]:
    """Every defined store entry's abstract part must be predicted by Σ̂."""
    out = []
    for n in c.nodes:
        for loc, iv in n.store.items():
            if iv.abstract not in e.sigma(n.label, loc):
                out.append(
                    Violation("store", n.label, f"{format_abstract(iv.abstract)} at {_loc_name(loc)} not in Σ̂")
                )
    return out


def cross_check(trace: Trace, e: Estimate) -> list[Violation]:
    """Events of ``trace`` that the estimate fails to predict."""
    _check_origin(trace.system_digest, e)
    out = []
    for k, ev in enumerate(trace.events):
        if isinstance(ev, Comm):
            msg = (ev.sender, tuple(v.abstract for v in ev.values))
            if msg not in e.kappa_of(ev.receiver):
                shown = ", ".join(format_abstract(v) for v in msg[1])
                out.append(Violation("comm", ev.receiver, f"event {k}: <{shown}> from {ev.sender} not in κ"))
        elif isinstance(ev, (AssignEvent, SensorStore)):
            loc = ev.variable if isinstance(ev, AssignEvent) else ev.sensor
            if ev.value.abstract not in e.sigma(ev.node, loc):
                out.append(
                    Violation(
                        ev.kind, ev.node, f"event {k}: {format_abstract(ev.value.abstract)} at {_loc_name(loc)} not in Σ̂"
                    )
                )
        elif isinstance(ev, DecryptOk):
            for x, v in ev.bindings:
                if v.abstract not in e.sigma(ev.node, x):
                    out.append(Violation("decrypt", ev.node, f"event {k}: {format_abstract(v.abstract)} at {x} not in Σ̂"))
        elif isinstance(ev, ActFire):
            if ev.action not in e.alpha_of(ev.node, ev.actuator):
                out.append(Violation("act", ev.node, f"event {k}: {ev.action} on {ev.actuator} not in α"))
    if trace.final is not None:
        out.extend(store_agreement(trace.final, e))
    return out
