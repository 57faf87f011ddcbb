"""Assignment language: `name = builtin(kw=value, ...);` statements.

A small PlanOut-style language for describing treatment assignment.  Three
builtins are supported: uniformChoice(choices, unit), bernoulliTrial(p,
unit) and randomFloat(min, max, unit).  Each statement assigns the result
of one builtin call to a variable; later statements may reference earlier
variables (hierarchical designs) and the same variable may be reassigned.
`#` starts a comment.

Randomness comes from the deterministic hash primitive with the salt
experiment + "." + variable, so distinct variables in one experiment are
independent and re-evaluating a program never changes past assignments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .errors import DslError
from .hashing import hash_uniform

# ---------------------------------------------------------------- tokens

_PUNCT = set("=()[],;")


@dataclass(frozen=True)
class Token:
    kind: str  # NAME, NUMBER, or one of the punctuation characters
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[Token]:
    tokens = []
    line, col = 1, 1
    i = 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        if ch in _PUNCT:
            tokens.append(Token(ch, ch, line, col))
            i += 1
            col += 1
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(Token("NAME", source[i:j], line, col))
            col += j - i
            i = j
            continue
        if ch.isdigit() or (ch == "-" and i + 1 < n and source[i + 1].isdigit()):
            j = i + 1
            seen_dot = False
            while j < n and (source[j].isdigit() or (source[j] == "." and not seen_dot)):
                seen_dot = seen_dot or source[j] == "."
                j += 1
            tokens.append(Token("NUMBER", source[i:j], line, col))
            col += j - i
            i = j
            continue
        raise DslError(f"unexpected character {ch!r}", line=line, col=col)
    return tokens


# ------------------------------------------------------------------- AST

@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class UnitRef:
    name: str


@dataclass(frozen=True)
class Call:
    builtin: str
    kwargs: tuple  # of (name, value) pairs


@dataclass(frozen=True)
class Statement:
    name: str
    call: Call
    line: int


@dataclass(frozen=True)
class Program:
    statements: tuple


_BUILTINS = {
    "uniformChoice": ("choices", "unit"),
    "bernoulliTrial": ("p", "unit"),
    "randomFloat": ("min", "max", "unit"),
}


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def _peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self, kind: str, what: str) -> Token:
        tok = self._peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else None
            raise DslError(f"unexpected end of input, expected {what}",
                           line=last.line if last else 1,
                           col=last.col + len(last.text) if last else 1)
        if tok.kind != kind:
            raise DslError(f"expected {what}, got {tok.text!r}", line=tok.line, col=tok.col)
        self.pos += 1
        return tok

    def parse_program(self) -> Program:
        statements = []
        assigned: set[str] = set()
        while self._peek() is not None:
            statements.append(self._statement(assigned))
        return Program(tuple(statements))

    def _statement(self, assigned: set[str]) -> Statement:
        name_tok = self._next("NAME", "a variable name")
        self._next("=", "'='")
        call = self._call(assigned)
        self._next(";", "';'")
        assigned.add(name_tok.text)
        return Statement(name_tok.text, call, line=name_tok.line)

    def _call(self, assigned: set[str]) -> Call:
        fn_tok = self._next("NAME", "a builtin name")
        if fn_tok.text not in _BUILTINS:
            raise DslError(f"unknown builtin {fn_tok.text!r}", line=fn_tok.line, col=fn_tok.col)
        required = _BUILTINS[fn_tok.text]
        self._next("(", "'('")
        kwargs = []
        seen = set()
        while True:
            tok = self._peek()
            if tok is not None and tok.kind == ")":
                self.pos += 1
                break
            key_tok = self._next("NAME", "a keyword argument name")
            if key_tok.text not in required:
                raise DslError(
                    f"{fn_tok.text} takes no keyword {key_tok.text!r}",
                    line=key_tok.line, col=key_tok.col,
                )
            if key_tok.text in seen:
                raise DslError(f"duplicate keyword {key_tok.text!r}",
                               line=key_tok.line, col=key_tok.col)
            seen.add(key_tok.text)
            self._next("=", "'='")
            kwargs.append((key_tok.text, self._value(assigned, key_tok.text == "unit")))
            tok = self._peek()
            if tok is not None and tok.kind == ",":
                self.pos += 1
                continue
            self._next(")", "')' or ','")
            break
        missing = [k for k in required if k not in seen]
        if missing:
            raise DslError(
                f"{fn_tok.text} missing required keyword {missing[0]!r}",
                line=fn_tok.line, col=fn_tok.col,
            )
        return Call(fn_tok.text, tuple(kwargs))

    def _value(self, assigned: set[str], is_unit: bool):
        tok = self._peek()
        if tok is None:
            raise DslError("unexpected end of input in argument", line=1, col=1)
        if tok.kind == "NUMBER":
            self.pos += 1
            return _number(tok.text)
        if tok.kind == "[":
            self.pos += 1
            items = []
            while True:
                nxt = self._peek()
                if nxt is not None and nxt.kind == "]":
                    self.pos += 1
                    break
                num = self._next("NUMBER", "a number")
                items.append(_number(num.text))
                nxt = self._peek()
                if nxt is not None and nxt.kind == ",":
                    self.pos += 1
                    continue
                self._next("]", "']' or ','")
                break
            return tuple(items)
        if tok.kind == "NAME":
            self.pos += 1
            if is_unit:
                return UnitRef(tok.text)
            if tok.text not in assigned:
                raise DslError(f"reference to undefined variable {tok.text!r}",
                               line=tok.line, col=tok.col)
            return VarRef(tok.text)
        raise DslError(f"expected a value, got {tok.text!r}", line=tok.line, col=tok.col)


def _number(text: str):
    return float(text) if "." in text else int(text)


def parse(source: str) -> Program:
    """Parse program text; raises DslError with line/column on bad input."""
    return _Parser(_tokenize(source)).parse_program()


def evaluate(program: Program, experiment: str, units: Mapping[str, object]) -> dict:
    """Run the program for one subject; returns {variable: value}.

    units binds unit names (e.g. subject_id) to identifier values, which
    are stringified before hashing.  Evaluation is sequential and pure;
    the variable v draws from salt experiment + "." + v.
    """
    env: dict = {}
    for stmt in program.statements:
        salt = f"{experiment}.{stmt.name}"
        kwargs = dict(stmt.call.kwargs)
        unit_value = _resolve_unit(kwargs.pop("unit"), units)
        u = hash_uniform(salt, unit_value)
        if stmt.call.builtin == "uniformChoice":
            choices = _resolve(kwargs["choices"], env)
            if not isinstance(choices, tuple) or not choices:
                raise DslError(f"empty or non-list choices in {stmt.name!r}",
                               line=stmt.line)
            env[stmt.name] = choices[int(u * len(choices))]
        elif stmt.call.builtin == "bernoulliTrial":
            p = _resolve(kwargs["p"], env)
            if not isinstance(p, (int, float)) or isinstance(p, bool) or not 0.0 <= p <= 1.0:
                raise DslError(f"p={p!r} outside [0,1] in {stmt.name!r}", line=stmt.line)
            env[stmt.name] = int(u < p)
        else:  # randomFloat
            lo = _resolve(kwargs["min"], env)
            hi = _resolve(kwargs["max"], env)
            if not isinstance(lo, (int, float)) or not isinstance(hi, (int, float)):
                raise DslError(f"min/max must be numbers in {stmt.name!r}", line=stmt.line)
            if hi < lo:
                raise DslError(f"max < min in {stmt.name!r}", line=stmt.line)
            env[stmt.name] = lo + u * (hi - lo)
    return env


def _resolve_unit(value, units: Mapping[str, object]) -> str:
    if isinstance(value, UnitRef):
        if value.name not in units:
            raise DslError(f"unbound unit {value.name!r}")
        return str(units[value.name])
    # a literal unit id is legal, if unusual
    return str(value)


def _resolve(value, env: dict):
    if isinstance(value, VarRef):
        return env[value.name]
    return value
