"""Command-line driver: ``iotlysa analyze | simulate | check``.

Exit status: 0 the property holds (or the command succeeded), 1 the system
does not parse, 2 the configuration or invocation is invalid, 3 the checked
property is violated.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__, corpus
from .cfa import Estimate, MismatchedOrigin, analyze
from .config import ConfigError, parse_config
from .parser import ParseError, parse_system
from .security import (
    MissingLevel,
    Verdict,
    check_actuators,
    check_confined,
    check_levels,
    check_no_leaks,
    check_policy,
)
from .semantics import run, trace_from_ndjson, trace_to_ndjson
from .validate import cross_check
from .values import format_abstract

EXIT_OK, EXIT_PARSE, EXIT_CONFIG, EXIT_VIOLATED = 0, 1, 2, 3

PROPERTIES = ("confinement", "levels", "policy", "actuators", "crosscheck", "no-leaks")


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _read_spec(path: str) -> tuple[str, str]:
    if path.startswith("corpus:"):
        name = path.split(":", 1)[1]
        if name not in corpus.NAMES:
            raise _Fail(EXIT_PARSE, f"unknown bundled system {name!r}; choose from {', '.join(corpus.NAMES)}")
        return corpus.spec_text(name), path
    try:
        return Path(path).read_text(), path
    except OSError as exc:
        raise _Fail(EXIT_PARSE, f"{path}: {exc.strerror}") from None


def _read_config(spec_path: str, config_path: str | None) -> tuple[str, str | None]:
    if config_path is None:
        if spec_path.startswith("corpus:"):
            return corpus.config_text(spec_path.split(":", 1)[1]), spec_path
        sibling = Path(spec_path).with_suffix(".cfg.json")
        if not sibling.exists():
            return "", None
        config_path = str(sibling)
    try:
        return Path(config_path).read_text(), config_path
    except OSError as exc:
        raise _Fail(EXIT_CONFIG, f"{config_path}: {exc.strerror}") from None


def _load(args):
    spec_text, spec_name = _read_spec(args.spec)
    try:
        system = parse_system(spec_text)
    except ParseError as exc:
        raise _Fail(EXIT_PARSE, f"{spec_name}:{exc}") from None
    cfg_text, cfg_name = _read_config(args.spec, args.config)
    try:
        cfg = parse_config(cfg_text, system)
    except ConfigError as exc:
        raise _Fail(EXIT_CONFIG, f"{cfg_name}:{exc}") from None
    overrides = {}
    if getattr(args, "depth", None) is not None:
        if args.depth < 1:
            raise _Fail(EXIT_CONFIG, "--depth must be at least 1")
        overrides["depth"] = args.depth
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        overrides["max_steps"] = args.steps
    if getattr(args, "precise_match", False):
        overrides["precise_match"] = True
    cfg = cfg.with_options(**overrides)
    inputs = {"spec": _digest(spec_text), "config": _digest(cfg_text) if cfg_name else None}
    return system, cfg, inputs


def _estimate(args, system, cfg, timing):
    if getattr(args, "estimate", None):
        try:
            return Estimate.loads(Path(args.estimate).read_text())
        except (OSError, ValueError, KeyError) as exc:
            raise _Fail(EXIT_CONFIG, f"{args.estimate}: cannot load estimate ({exc})") from None
    start = time.perf_counter()
    e = analyze(system, cfg)
    timing["analysis_s"] = round(time.perf_counter() - start, 6)
    return e


def _report(inputs, cfg, e: Estimate | None = None, **extra) -> dict:
    out = {"tool": "iotlysa", "version": __version__, "inputs": inputs, "depth": cfg.depth}
    if e is not None:
        out["estimate"] = e.sizes()
    out.update(extra)
    return out


def _emit(args, report: dict, text_lines: list[str]):
    if args.timing and "timing" not in report:
        report["timing"] = {}
    if not args.timing:
        report.pop("timing", None)
    if args.format == "json":
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        for line in text_lines:
            print(line)
        if args.timing:
            for k, v in sorted(report["timing"].items()):
                print(f"time {k}: {v}")


def _estimate_lines(e: Estimate) -> list[str]:
    lines = []
    for label, locs in sorted(e.sigma_hat.items()):
        for loc, vals in sorted(locs.items(), key=lambda kv: str(kv[0])):
            name = f"@{loc}" if isinstance(loc, int) else loc
            lines.append(f"sigma[{label}]({name}) = {{{', '.join(sorted(map(format_abstract, vals)))}}}")
    for label, msgs in sorted(e.kappa.items()):
        for sender, vals in sorted(msgs, key=lambda m: (m[0], [format_abstract(v) for v in m[1]])):
            lines.append(f"kappa[{label}] <- {sender}: <{', '.join(format_abstract(v) for v in vals)}>")
    for label, vals in sorted(e.theta.items()):
        lines.append(f"theta[{label}] = {{{', '.join(sorted(map(format_abstract, vals)))}}}")
    for (label, j), acts in sorted(e.alpha.items()):
        lines.append(f"alpha[{label}]({j}) = {{{', '.join(sorted(acts))}}}")
    return lines


# ---------------------------------------------------------------------------
# subcommands


def cmd_analyze(args) -> int:
    system, cfg, inputs = _load(args)
    timing: dict = {}
    e = _estimate(args, system, cfg, timing)
    if args.output:
        Path(args.output).write_text(e.dumps())
    report = _report(inputs, cfg, e, timing=timing)
    if args.format == "json" and not args.output:
        report["result"] = e.to_json()
    sizes = ", ".join(f"{k} {v}" for k, v in report["estimate"].items())
    _emit(args, report, _estimate_lines(e) + [f"# estimate at depth {cfg.depth}: {sizes}"])
    return EXIT_OK


def cmd_simulate(args) -> int:
    system, cfg, inputs = _load(args)
    start = time.perf_counter()
    trace = run(system, cfg)
    elapsed = round(time.perf_counter() - start, 6)
    text = trace_to_ndjson(trace)
    if not args.output:
        sys.stdout.write(text)
        return EXIT_OK
    Path(args.output).write_text(text)
    counts: dict = {}
    for ev in trace.events:
        counts[ev.kind] = counts.get(ev.kind, 0) + 1
    report = _report(
        inputs,
        cfg,
        seed=trace.seed,
        steps=trace.steps,
        termination=trace.termination,
        events=dict(sorted(counts.items())),
        timing={"simulation_s": elapsed},
    )
    lines = [f"seed {trace.seed}: {trace.steps} steps, {trace.termination}"]
    lines += [f"  {k}: {v}" for k, v in sorted(counts.items())]
    _emit(args, report, lines)
    return EXIT_OK


def _traces(args, system, cfg):
    """Traces from --trace files, or --runs seeded simulations fanned over threads."""
    if args.trace:
        out = []
        for path in args.trace:
            try:
                out.append(trace_from_ndjson(Path(path).read_text()))
            except (OSError, ValueError, KeyError) as exc:
                raise _Fail(EXIT_CONFIG, f"{path}: cannot load trace ({exc})") from None
        return out
    seeds = [cfg.seed + k for k in range(args.runs)]
    with ThreadPoolExecutor() as pool:
        return list(pool.map(lambda s: run(system, cfg, seed=s), seeds))


def _secret_nodes(args, cfg, system) -> list[str]:
    if args.node:
        if args.node not in system.labels:
            raise _Fail(EXIT_CONFIG, f"unknown node {args.node!r}")
        return [args.node]
    return sorted(label for label, atoms in cfg.secret.atoms().items() if atoms)


def cmd_check(args) -> int:
    system, cfg, inputs = _load(args)
    timing: dict = {}
    prop = args.property
    verdicts = []
    e = None
    if prop in ("confinement", "levels", "policy", "actuators", "crosscheck"):
        e = _estimate(args, system, cfg, timing)
    try:
        if prop == "confinement":
            verdicts = [check_confined(e, cfg.secret, n) for n in _secret_nodes(args, cfg, system)]
        elif prop == "levels":
            verdicts = [check_levels(e, cfg.levels, args.node)]
        elif prop == "policy":
            verdicts = [check_policy(e, cfg.allowed_flow)]
        elif prop == "actuators":
            verdicts = [check_actuators(e, system)]
        elif prop == "crosscheck":
            traces = _traces(args, system, cfg)
            witnesses = []
            for t in traces:
                witnesses += [{"seed": t.seed, "violation": str(v)} for v in cross_check(t, e)]
            verdicts = [_crosscheck_verdict(witnesses, traces)]
        elif prop == "no-leaks":
            traces = _traces(args, system, cfg)
            for n in _secret_nodes(args, cfg, system):
                merged = [w | {"seed": t.seed} for t in traces for w in check_no_leaks(t, cfg.secret, n).witnesses]
                verdicts.append(_named("no-leaks", merged, {"node": n, "traces": len(traces)}))
    except MissingLevel as exc:
        raise _Fail(EXIT_CONFIG, str(exc.args[0])) from None
    except MismatchedOrigin as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from None
    holds = all(v.holds for v in verdicts)
    report = _report(inputs, cfg, e, property=prop, holds=holds, verdicts=[v.to_json() for v in verdicts], timing=timing)
    lines = []
    for v in verdicts:
        where = f" ({v.details['node']})" if v.details.get("node") else ""
        lines.append(f"{v.property}{where}: {'holds' if v.holds else 'VIOLATED'}")
        lines += [f"  {_witness_text(w)}" for w in v.witnesses]
        for row in v.details.get("actuators", []):
            lines.append(
                f"  {row['node']}/{row['actuator']}: triggered {{{', '.join(row['triggered'])}}}"
                f" never-triggered {{{', '.join(row['never_triggered'])}}}"
            )
    if not verdicts:
        lines.append(f"{prop}: holds (nothing to check)")
    _emit(args, report, lines)
    return EXIT_OK if holds else EXIT_VIOLATED


def _named(prop, witnesses, details):
    return Verdict(prop, witnesses, details)


def _crosscheck_verdict(witnesses, traces):
    return _named("crosscheck", witnesses, {"traces": len(traces), "events": sum(len(t.events) for t in traces)})


def _witness_text(w: dict) -> str:
    return ", ".join(f"{k}={v}" for k, v in w.items())


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iotlysa", description="IoT-LySa analysis toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("spec", help="system file (.iot) or corpus:NAME")
        sp.add_argument("config", nargs="?", help="configuration (.cfg.json); defaults to the sibling file")
        sp.add_argument("--format", choices=("text", "json"), default="text")
        sp.add_argument("--timing", action="store_true", help="include wall-clock timings in the report")

    a = sub.add_parser("analyze", help="compute the least estimate")
    common(a)
    a.add_argument("--depth", type=int)
    a.add_argument("--precise-match", action="store_true")
    a.add_argument("-o", "--output", help="write the estimate JSON here")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run the reduction semantics")
    common(s)
    s.add_argument("--depth", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("-o", "--output", help="write the NDJSON trace here (default: stdout)")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("check", help="check a property")
    common(c)
    c.add_argument("--property", required=True, choices=PROPERTIES)
    c.add_argument("--node", help="restrict to flows leaving this node")
    c.add_argument("--depth", type=int)
    c.add_argument("--precise-match", action="store_true")
    c.add_argument("--estimate", help="reuse a saved estimate instead of recomputing it")
    c.add_argument("--trace", action="append", help="trace file (repeatable)")
    c.add_argument("--runs", type=int, default=1, help="seeded runs when no trace is given")
    c.add_argument("--seed", type=int)
    c.add_argument("--steps", type=int)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"iotlysa: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
