"""Security verdicts over estimates, and their dynamic counterparts over traces."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

from .cfa import Estimate
from .semantics import ActFire, Comm, Trace, event_values
from .syntax import Command, Mu, Node, System, Tau, Triggered
from .values import PUBLIC, SECRET, Classification, d_cls, format_abstract, format_concrete, s_cls

__all__ = [
    "Classification",
    "MissingLevel",
    "PUBLIC",
    "SECRET",
    "Verdict",
    "actuator_report",
    "check_actuator_trace",
    "check_actuators",
    "check_commutation",
    "check_confined",
    "check_levels",
    "check_no_leaks",
    "check_policy",
    "check_respects_levels",
    "d_cls",
    "s_cls",
]


class MissingLevel(KeyError):
    pass


@dataclass
class Verdict:
    property: str
    witnesses: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return not self.witnesses

    def to_json(self) -> dict:
        out = {"property": self.property, "holds": self.holds, "witnesses": self.witnesses}
        if self.details:
            out["details"] = self.details
        return out


def _messages(e: Estimate):
    for receiver in sorted(e.kappa):
        for sender, values in sorted(e.kappa[receiver], key=lambda m: (m[0], [format_abstract(v) for v in m[1]])):
            yield receiver, sender, values


# ---------------------------------------------------------------------------
# secrecy


def check_confined(e: Estimate, cls: Classification, label: str) -> Verdict:
    """Every value ``label`` may send (per κ) must classify as public."""
    witnesses = []
    for receiver, sender, values in _messages(e):
        if sender != label:
            continue
        for i, v in enumerate(values):
            if s_cls(v, cls) == SECRET:
                witnesses.append(
                    {"receiver": receiver, "sender": sender, "values": [format_abstract(x) for x in values], "index": i}
                )
    return Verdict("confinement", witnesses, {"node": label})


def check_no_leaks(trace: Trace, cls: Classification, label: str) -> Verdict:
    """No communication from ``label`` in the trace carries a secret value."""
    witnesses = []
    for k, ev in enumerate(trace.events):
        if isinstance(ev, Comm) and ev.sender == label:
            for i, v in enumerate(ev.values):
                if d_cls(v.concrete, cls, label) == SECRET:
                    witnesses.append(
                        {"event": k, "receiver": ev.receiver, "value": format_concrete(v.concrete), "index": i}
                    )
    return Verdict("no-leaks", witnesses, {"node": label, "seed": trace.seed})


def check_commutation(trace: Trace, cls: Classification) -> Verdict:
    """The dynamic and static classifiers agree on every instrumented value of the trace."""
    witnesses = []
    for k, ev in enumerate(trace.events):
        for v in event_values(ev):
            if d_cls(v.concrete, cls) != s_cls(v.abstract, cls):
                witnesses.append(
                    {"event": k, "concrete": format_concrete(v.concrete), "abstract": format_abstract(v.abstract)}
                )
    return Verdict("commutation", witnesses)


# ---------------------------------------------------------------------------
# flow policies


def _level(levels, label):
    try:
        return levels[label]
    except KeyError:
        raise MissingLevel(f"no level assigned to {label}") from None


def check_levels(e: Estimate, levels: dict, node: str | None = None) -> Verdict:
    """No κ-evidenced flow from a higher to a lower level (optionally only flows leaving ``node``)."""
    bad = set()
    for sender, receiver in e.flows():
        if node is not None and sender != node:
            continue
        if _level(levels, sender) > _level(levels, receiver):
            bad.add((sender, receiver))
    witnesses = [
        {"sender": s, "receiver": r, "levels": [levels[s], levels[r]]} for s, r in sorted(bad)
    ]
    return Verdict("levels", witnesses, {"node": node} if node else {})


def check_respects_levels(trace: Trace, levels: dict, node: str | None = None) -> Verdict:
    witnesses = []
    for k, ev in enumerate(trace.events):
        if not isinstance(ev, Comm) or (node is not None and ev.sender != node):
            continue
        if _level(levels, ev.sender) > _level(levels, ev.receiver):
            witnesses.append({"event": k, "sender": ev.sender, "receiver": ev.receiver})
    return Verdict("respects-levels", witnesses)


def check_policy(e: Estimate, allowed: Iterable | Callable[[str, str], bool]) -> Verdict:
    """Every κ-evidenced flow must be allowed; ``allowed`` is a set of (sender, receiver) or a predicate."""
    if callable(allowed):
        ok = allowed
    else:
        pairs = {tuple(p) for p in allowed}
        ok = lambda s, r: (s, r) in pairs  # noqa: E731
    witnesses = [{"sender": s, "receiver": r} for s, r in sorted(e.flows()) if not ok(s, r)]
    return Verdict("policy", witnesses)


# ---------------------------------------------------------------------------
# actuators


def _accepted(body) -> set:
    """Actions an actuator body is prepared to accept."""
    out, seen, todo = set(), set(), [body]
    while todo:
        a = todo.pop()
        if id(a) in seen:
            continue
        seen.add(id(a))
        if isinstance(a, Command):
            out |= a.accepted
            todo.append(a.cont)
        elif isinstance(a, (Tau, Triggered)):
            todo.append(a.cont)
        elif isinstance(a, Mu):
            todo.append(a.body)
    return out


def actuator_report(e: Estimate, system: System) -> list[dict]:
    rows = []
    for node in system.nodes:
        if not isinstance(node, Node):
            continue
        for j, act in sorted(node.actuators.items()):
            declared = _accepted(act.body)
            triggered = e.alpha_of(node.label, j)
            rows.append(
                {
                    "node": node.label,
                    "actuator": j,
                    "declared": sorted(declared),
                    "triggered": sorted(triggered),
                    "never_triggered": sorted(declared - triggered),
                    "never_used": not triggered,
                }
            )
    return rows


def check_actuators(e: Estimate, system: System) -> Verdict:
    """Flags declared actions that can never fire and actuators that are never used."""
    rows = actuator_report(e, system)
    witnesses = []
    for row in rows:
        for g in row["never_triggered"]:
            witnesses.append({"node": row["node"], "actuator": row["actuator"], "action": g, "kind": "never-triggered"})
        if row["never_used"]:
            witnesses.append({"node": row["node"], "actuator": row["actuator"], "kind": "never-used"})
    return Verdict("actuators", witnesses, {"actuators": rows})


def check_actuator_trace(trace: Trace, report: list[dict]) -> Verdict:
    """No action reported as never-triggered fires in the trace."""
    never = {(r["node"], r["actuator"], g) for r in report for g in r["never_triggered"]}
    never |= {(r["node"], r["actuator"], None) for r in report if r["never_used"]}
    witnesses = []
    for k, ev in enumerate(trace.events):
        if isinstance(ev, ActFire) and (
            (ev.node, ev.actuator, ev.action) in never or (ev.node, ev.actuator, None) in never
        ):
            witnesses.append({"event": k, "node": ev.node, "actuator": ev.actuator, "action": ev.action})
    return Verdict("never-fires", witnesses)

