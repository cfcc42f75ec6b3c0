"""Static analysis toolkit for IoT-LySa systems.

Parse a system, simulate it with an instrumented store, compute the least
control flow estimate (Σ̂, κ, Θ, α), and check actuator usage and security
properties against it::

    from iotlysa import corpus, analyze, check_confined
    system, cfg = corpus.load("street")
    estimate = analyze(system, cfg)
    check_confined(estimate, cfg.secret, "lcp").holds   # False
"""

__version__ = "0.1.0"

from .cfa import ConstraintSet, Estimate, MismatchedOrigin, analyze, analyze_term, generate, solve
from .config import AnalysisConfig, ConfigError, FunctionSig, config_from_dict, parse_config
from .parser import ParseError, parse_system
from .security import (
    MissingLevel,
    Verdict,
    actuator_report,
    check_actuator_trace,
    check_actuators,
    check_commutation,
    check_confined,
    check_levels,
    check_no_leaks,
    check_policy,
    check_respects_levels,
)
from .semantics import (
    Configuration,
    InstrumentedValue,
    InvalidChoice,
    Trace,
    enabled_steps,
    eval_term,
    initial_configuration,
    run,
    step,
    trace_from_ndjson,
    trace_to_ndjson,
)
from .syntax import System, congruence_normalize, format_system, unfold
from .validate import Violation, cross_check, store_agreement, validate
from .values import Classification, cut, d_cls, depth, s_cls
from . import corpus

__all__ = [
    "AnalysisConfig",
    "Classification",
    "ConfigError",
    "Configuration",
    "ConstraintSet",
    "Estimate",
    "FunctionSig",
    "InstrumentedValue",
    "InvalidChoice",
    "MismatchedOrigin",
    "MissingLevel",
    "ParseError",
    "System",
    "Trace",
    "Verdict",
    "Violation",
    "actuator_report",
    "analyze",
    "analyze_term",
    "check_actuator_trace",
    "check_actuators",
    "check_commutation",
    "check_confined",
    "check_levels",
    "check_no_leaks",
    "check_policy",
    "check_respects_levels",
    "config_from_dict",
    "congruence_normalize",
    "corpus",
    "cross_check",
    "cut",
    "d_cls",
    "depth",
    "enabled_steps",
    "eval_term",
    "format_system",
    "generate",
    "initial_configuration",
    "parse_config",
    "parse_system",
    "run",
    "s_cls",
    "solve",
    "step",
    "store_agreement",
    "trace_from_ndjson",
    "trace_to_ndjson",
    "unfold",
    "validate",
]
