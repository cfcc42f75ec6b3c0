"""Parser for the textual system format.

Grammar (``;`` separates match terms from binders)::

    system   ::= node ("|" node)*
    node     ::= "0" | LABEL ":" "[" comp ("||" comp)* "]"
    comp     ::= "store" | "sensor" NAT "{" sproc "}" | "actuator" NAT "{" aproc "}" | proc
    proc     ::= "0" | "<<" terms ">>" ":" "{" labels "}" "." proc
               | "(" terms ";" vars ")" "." proc
               | "decrypt" term "as" "{" terms ";" vars "}" "key" KEY "in" proc
               | term "?" proc ":" proc | "mu" IDENT "." proc | IDENT
               | IDENT ":=" term "." proc | "<" NAT "," IDENT ">" "." proc
               | "(" proc ")"
    sproc    ::= "0" | "tau" "." sproc | "@" NAT ":=" "read" "." sproc | "mu" IDENT "." sproc | IDENT
    aproc    ::= "0" | "tau" "." aproc | "(|" NAT "," "{" idents "}" "|)" "." aproc
               | "mu" IDENT "." aproc | IDENT
    term     ::= LITERAL | "@" NAT | IDENT | "{" terms "}" "key" KEY | IDENT "(" terms ")"
               | term BINOP term | "not" term | "(" term ")"

Literals are integers, ``true``/``false`` and double-quoted strings.  Infix
operators (``or and not = <= < >= > + - *``) are sugar for applications of the
builtin functions of the same name.  ``#`` and ``//`` start line comments.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .syntax import (
    BUILTINS,
    NIL,
    ActOut,
    Actuator,
    App,
    Assign,
    Command,
    Cond,
    Const,
    Decrypt,
    Enc,
    InactiveNode,
    Input,
    IterVar,
    Mu,
    MultiOut,
    Node,
    Sensor,
    SensorLoc,
    Store,
    StoreValue,
    System,
    Tau,
    Var,
    subterms,
    terms_of,
)


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 1, column: int = 1, expected=()):
        self.message = message
        self.line = line
        self.column = column
        self.expected = list(expected)
        text = f"{line}:{column}: {message}"
        if self.expected:
            text += f" (expected {', '.join(self.expected)})"
        super().__init__(text)


KEYWORDS = {
    "store", "sensor", "actuator", "mu", "decrypt", "as", "key", "in",
    "tau", "read", "true", "false", "and", "or", "not",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*|//[^\n]*)
  | (?P<int>\d+)
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*'*)
  | (?P<sym><<|>>|\(\||\|\)|\|\||:=|<=|>=|[|<>=+\-*(){}\[\],;:.?@])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # int, str, ident, sym, eof
    text: str
    line: int
    column: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        if kind != "ws":
            tokens.append(Token(kind, text, line, pos - line_start + 1))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


_CMP = ("=", "<=", "<", ">=", ">")
# tokens that may follow an identifier inside a term
_TERM_CONT = {"(", "?", "=", "<=", "<", ">=", ">", "+", "-", "*", "and", "or"}


class _Backtrack(Exception):
    pass


class Parser:
    def __init__(self, source: str):
        self.toks = tokenize(source)
        self.i = 0
        self.functions: dict[str, tuple[int, Token]] = {}

    # -- token helpers -------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.text == text and t.kind in ("sym", "ident", "int")

    def error(self, message: str, tok: Token | None = None, expected=()):
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.column, expected)

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"unexpected {found!r}", expected=[repr(text)])
        t = self.tok
        self.i += 1
        return t

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def ident(self, what: str = "identifier") -> str:
        t = self.tok
        if t.kind != "ident" or t.text in KEYWORDS:
            raise self.error(f"unexpected {t.text or 'end of input'!r}", expected=[what])
        self.i += 1
        return t.text

    def nat(self) -> int:
        t = self.tok
        if t.kind != "int":
            raise self.error(f"unexpected {t.text or 'end of input'!r}", expected=["natural number"])
        self.i += 1
        return int(t.text)

    # -- systems -------------------------------------------------------

    def system(self) -> System:
        nodes = [self.node()]
        while self.accept("|"):
            nodes.append(self.node())
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}", expected=["'|'", "end of input"])
        seen: dict[str, Token] = {}
        for node, tok in nodes:
            if node is None:
                continue
            if node.label in seen:
                raise self.error(f"duplicate node label {node.label!r}", tok)
            seen[node.label] = tok
        return System(tuple(n if n is not None else InactiveNode() for n, _ in nodes))

    def node(self):
        start = self.tok
        if self.accept("0"):
            return None, start
        label = self.ident("node label")
        self.expect(":")
        self.expect("[")
        self._sensor_refs: list[tuple[int, Token]] = []
        self._act_refs: list[tuple[int, str, Token]] = []
        comps: list = []
        positions: list[Token] = []
        if not self.at("]"):
            positions.append(self.tok)
            comps.append(self.component())
            while self.accept("||"):
                positions.append(self.tok)
                comps.append(self.component())
        end = self.expect("]")
        self._check_node(label, comps, positions, start, end)
        return Node(label, tuple(comps)), start

    def _check_node(self, label, comps, positions, start, end):
        store_seen = False
        sensors: dict[int, Sensor] = {}
        actuators: dict[int, Actuator] = {}
        for c, tok in zip(comps, positions):
            if isinstance(c, Store):
                if store_seen:
                    raise self.error(f"duplicate store in node {label!r}", tok)
                store_seen = True
            elif isinstance(c, Sensor):
                if c.ident in sensors:
                    raise self.error(f"duplicate sensor id {c.ident} in node {label!r}", tok)
                sensors[c.ident] = c
            elif isinstance(c, Actuator):
                if c.ident in actuators:
                    raise self.error(f"duplicate actuator id {c.ident} in node {label!r}", tok)
                actuators[c.ident] = c
        if not store_seen:
            raise self.error(f"missing store in node {label!r}", start)
        for i, tok in self._sensor_refs:
            if i not in sensors:
                raise self.error(f"unknown sensor location @{i} in node {label!r}", tok)
        for j, action, tok in self._act_refs:
            if j not in actuators:
                raise self.error(f"unknown actuator {j} in node {label!r}", tok)

    def component(self):
        if self.accept("store"):
            return Store()
        if self.accept("sensor"):
            ident = self.nat()
            self.expect("{")
            body = self.sproc(ident, [])
            self.expect("}")
            return Sensor(ident, body)
        if self.accept("actuator"):
            ident = self.nat()
            self.expect("{")
            body = self.aproc(ident, [])
            self.expect("}")
            return Actuator(ident, body)
        return self.proc([])

    # -- sensors and actuators -----------------------------------------

    def _itervar(self, bound: list[str]):
        tok = self.tok
        name = self.ident("process")
        if name not in bound:
            raise self.error(f"unbound iteration variable {name!r}", tok)
        return IterVar(name)

    def sproc(self, ident: int, bound: list[str]):
        if self.accept("0"):
            return NIL
        if self.accept("tau"):
            self.expect(".")
            return Tau(self.sproc(ident, bound))
        if self.at("@"):
            tok = self.tok
            self.i += 1
            loc = self.nat()
            if loc != ident:
                raise self.error(f"sensor {ident} cannot store into location @{loc}", tok)
            self.expect(":=")
            self.expect("read")
            self.expect(".")
            return StoreValue(loc, self.sproc(ident, bound))
        if self.accept("mu"):
            name = self.ident("iteration variable")
            self.expect(".")
            return Mu(name, self.sproc(ident, bound + [name]))
        return self._itervar(bound)

    def aproc(self, ident: int, bound: list[str]):
        if self.accept("0"):
            return NIL
        if self.accept("tau"):
            self.expect(".")
            return Tau(self.aproc(ident, bound))
        if self.at("(|"):
            tok = self.tok
            self.i += 1
            j = self.nat()
            if j != ident:
                raise self.error(f"actuator {ident} cannot accept commands for actuator {j}", tok)
            self.expect(",")
            self.expect("{")
            actions = self.idents("}")
            self.expect("}")
            self.expect("|)")
            self.expect(".")
            return Command(j, frozenset(actions), self.aproc(ident, bound))
        if self.accept("mu"):
            name = self.ident("iteration variable")
            self.expect(".")
            return Mu(name, self.aproc(ident, bound + [name]))
        if self.tok.kind == "ident" and self.peek().text == ".":
            raise self.error("triggered actions are produced by the semantics and cannot appear in source")
        return self._itervar(bound)

    # -- processes -----------------------------------------------------

    def proc(self, bound: list[str]):
        tok = self.tok
        if tok.text == "0" and tok.kind == "int" and self.peek().text not in _TERM_CONT:
            self.i += 1
            return NIL
        if self.accept("<<"):
            terms = self.terms(">>")
            self.expect(">>")
            self.expect(":")
            self.expect("{")
            labels = self.idents("}")
            self.expect("}")
            self.expect(".")
            return MultiOut(tuple(terms), frozenset(labels), self.proc(bound))
        if self.at("<"):
            self.i += 1
            j = self.nat()
            self.expect(",")
            action = self.ident("action name")
            self.expect(">")
            self.expect(".")
            self._act_refs.append((j, action, tok))
            return ActOut(j, action, self.proc(bound))
        if self.accept("decrypt"):
            subject = self.term()
            self.expect("as")
            self.expect("{")
            match = self.terms(";")
            self.expect(";")
            binders = self.binders("}")
            self.expect("}")
            self.expect("key")
            key = self.ident("key")
            self.expect("in")
            return Decrypt(subject, tuple(match), tuple(binders), key, self.proc(bound))
        if self.accept("mu"):
            name = self.ident("iteration variable")
            self.expect(".")
            return Mu(name, self.proc(bound + [name]))
        if self.at("("):
            return self._paren_proc(bound)
        if tok.kind == "ident" and tok.text not in KEYWORDS:
            nxt = self.peek().text
            if nxt == ":=":
                self.i += 2
                rhs = self.term()
                self.expect(".")
                return Assign(tok.text, rhs, self.proc(bound))
            if nxt not in _TERM_CONT:
                return self._itervar(bound)
        return self._cond(bound)

    def _cond(self, bound):
        guard = self.term()
        self.expect("?")
        then = self.proc(bound)
        self.expect(":")
        orelse = self.proc(bound)
        return Cond(guard, then, orelse)

    def _paren_proc(self, bound):
        start = self.i
        # input prefix: commit once the ";" is seen
        try:
            self.i += 1
            match = self.terms(";")
            if not self.at(";"):
                raise _Backtrack
        except (ParseError, _Backtrack):
            self.i = start
        else:
            self.i += 1
            binders = self.binders(")")
            self.expect(")")
            self.expect(".")
            return Input(tuple(match), tuple(binders), self.proc(bound))
        # conditional with a parenthesised guard
        try:
            guard = self.term()
            if not self.at("?"):
                raise _Backtrack
        except (ParseError, _Backtrack):
            self.i = start
        else:
            self.i = start
            return self._cond(bound)
        self.expect("(")
        p = self.proc(bound)
        self.expect(")")
        return p

    def idents(self, closer: str) -> list[str]:
        out = []
        if self.at(closer):
            return out
        out.append(self.ident())
        while self.accept(","):
            out.append(self.ident())
        return out

    def binders(self, closer: str) -> list[str]:
        out = []
        if self.at(closer):
            return out
        while True:
            tok = self.tok
            name = self.ident("variable")
            if name in out:
                raise self.error(f"duplicate binder {name!r}", tok)
            out.append(name)
            if not self.accept(","):
                return out

    # -- terms ---------------------------------------------------------

    def terms(self, closer: str) -> list:
        out = []
        if self.at(closer):
            return out
        out.append(self.term())
        while self.accept(","):
            out.append(self.term())
        return out

    def term(self):
        return self._or()

    def _or(self):
        left = self._and()
        while self.at("or"):
            self.i += 1
            left = App("or", (left, self._and()))
        return left

    def _and(self):
        left = self._not()
        while self.at("and"):
            self.i += 1
            left = App("and", (left, self._not()))
        return left

    def _not(self):
        if self.accept("not"):
            return App("not", (self._not(),))
        return self._cmp()

    def _cmp(self):
        left = self._add()
        if self.tok.kind == "sym" and self.tok.text in _CMP:
            op = self.tok.text
            self.i += 1
            return App(op, (left, self._add()))
        return left

    def _add(self):
        left = self._mul()
        while self.tok.kind == "sym" and self.tok.text in ("+", "-"):
            op = self.tok.text
            self.i += 1
            left = App(op, (left, self._mul()))
        return left

    def _mul(self):
        left = self._unary()
        while self.at("*"):
            self.i += 1
            left = App("*", (left, self._unary()))
        return left

    def _unary(self):
        if self.at("-") and self.peek().kind == "int":
            self.i += 1
            return Const(-self.nat())
        return self._atom()

    def _atom(self):
        tok = self.tok
        if tok.kind == "int":
            self.i += 1
            return Const(int(tok.text))
        if tok.kind == "str":
            self.i += 1
            return Const(json.loads(tok.text))
        if self.accept("true"):
            return Const(True)
        if self.accept("false"):
            return Const(False)
        if self.accept("@"):
            i = self.nat()
            self._sensor_refs.append((i, tok))
            return SensorLoc(i)
        if self.accept("{"):
            args = self.terms("}")
            self.expect("}")
            self.expect("key")
            key = self.ident("key")
            return Enc(tuple(args), key)
        if self.accept("("):
            t = self.term()
            self.expect(")")
            return t
        if tok.kind == "ident" and tok.text not in KEYWORDS:
            self.i += 1
            if self.accept("("):
                args = self.terms(")")
                self.expect(")")
                self._note_function(tok, len(args))
                return App(tok.text, tuple(args))
            return Var(tok.text)
        raise self.error(f"unexpected {tok.text or 'end of input'!r}", expected=["term"])

    def _note_function(self, tok: Token, arity: int):
        name = tok.text
        if name in BUILTINS:
            raise self.error(f"builtin {name!r} must be written as an operator", tok)
        known = self.functions.get(name)
        if known is None:
            self.functions[name] = (arity, tok)
        elif known[0] != arity:
            raise self.error(f"function {name!r} used with arity {arity}, previously {known[0]}", tok)


def parse_system(source: str) -> System:
    """Parse a system; raises :class:`ParseError` with the offending position."""
    return Parser(source).system()


def function_arities(source_or_system) -> dict[str, int]:
    """Arity of every non-builtin function applied in a system."""
    system = parse_system(source_or_system) if isinstance(source_or_system, str) else source_or_system
    out: dict[str, int] = {}
    for node in system.nodes:
        if not isinstance(node, Node):
            continue
        for p in node.processes:
            for t in terms_of(p):
                for s in subterms(t):
                    if isinstance(s, App) and s.func not in BUILTINS:
                        out.setdefault(s.func, len(s.args))
    return out
