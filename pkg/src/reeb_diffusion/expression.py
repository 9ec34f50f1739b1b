"""Expression strings over (x1, x2) compiled to an evaluation tape.

Grammar (recursive descent)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom (('^' | '**') unary)?
    atom   := number | name | func '(' expr ')' | '(' expr ')'

The same tape is replayed on floats, numpy arrays or ``Jet`` values, so an
expression and its derivatives always come from one source.
"""
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .autodiff import UNARY_FUNCTIONS, Jet

logger = logging.getLogger(__name__)

VARIABLES = ("x1", "x2")
CONSTANTS = {"pi": math.pi, "e": math.e}

TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>\*\*|[-+*/^()]))"
)


class ExpressionError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    column: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    stripped = source.rstrip()
    while pos < len(stripped):
        while stripped[pos].isspace():
            pos += 1
        match = TOKEN_RE.match(stripped, pos)
        if match is None or match.end() == pos:
            raise ExpressionError(f"column {pos + 1}: unexpected character {stripped[pos]!r}")
        kind = match.lastgroup
        tokens.append(Token(kind, match.group(kind), match.start(kind) + 1))
        pos = match.end()
    tokens.append(Token("end", "", len(stripped) + 1))
    return tokens


class _Parser:
    def __init__(self, source: str, params: Mapping[str, float]):
        self.source = source
        self.params = dict(params)
        self.tokens = tokenize(source)
        self.pos = 0
        self.tape: list[tuple] = []
        self.used_variables: set[str] = set()

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def expect(self, text: str) -> None:
        token = self.advance()
        if token.text != text:
            found = token.text or "end of input"
            raise ExpressionError(f"column {token.column}: expected {text!r}, found {found!r}")

    def parse(self) -> list[tuple]:
        self.expr()
        token = self.peek()
        if token.kind != "end":
            raise ExpressionError(f"column {token.column}: unexpected {token.text!r}")
        return self.tape

    def expr(self) -> None:
        self.term()
        while self.peek().text in ("+", "-"):
            op = self.advance().text
            self.term()
            self.tape.append(("add",) if op == "+" else ("sub",))

    def term(self) -> None:
        self.unary()
        while self.peek().text in ("*", "/"):
            op = self.advance().text
            self.unary()
            self.tape.append(("mul",) if op == "*" else ("div",))

    def unary(self) -> None:
        if self.peek().text in ("-", "+"):
            op = self.advance().text
            self.unary()
            if op == "-":
                self.tape.append(("neg",))
            return
        self.power()

    def power(self) -> None:
        self.atom()
        if self.peek().text in ("^", "**"):
            self.advance()
            self.unary()
            self.tape.append(("pow",))

    def atom(self) -> None:
        token = self.advance()
        if token.kind == "number":
            self.tape.append(("const", float(token.text)))
            return
        if token.text == "(":
            self.expr()
            self.expect(")")
            return
        if token.kind == "name":
            name = token.text
            if name in UNARY_FUNCTIONS:
                self.expect("(")
                self.expr()
                self.expect(")")
                self.tape.append(("call", name))
            elif name in VARIABLES:
                self.used_variables.add(name)
                self.tape.append(("var", VARIABLES.index(name)))
            elif name in self.params:
                self.tape.append(("const", float(self.params[name])))
            elif name in CONSTANTS:
                self.tape.append(("const", CONSTANTS[name]))
            else:
                raise ExpressionError(f"column {token.column}: unknown name {name!r}")
            return
        found = token.text or "end of input"
        raise ExpressionError(f"column {token.column}: unexpected {found!r}")


def _binary(op: str, a: Any, b: Any) -> Any:
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    if isinstance(a, Jet) or isinstance(b, Jet):
        return a ** b
    return np.power(a, b)


@dataclass(frozen=True)
class Expression:
    source: str
    tape: tuple = field(repr=False)
    used_variables: frozenset = field(default_factory=frozenset, repr=False)

    @classmethod
    def parse(cls, source: str, params: Mapping[str, float] | None = None) -> "Expression":
        if not isinstance(source, str) or not source.strip():
            raise ExpressionError("column 1: expression must be a non-empty string")
        parser = _Parser(source, params or {})
        tape = parser.parse()
        logger.debug("Compiled %r to %d tape ops", source, len(tape))
        return cls(source, tuple(tape), frozenset(parser.used_variables))

    @property
    def is_constant(self) -> bool:
        return not self.used_variables

    def run(self, x1: Any, x2: Any) -> Any:
        """Replay the tape on any operands supporting arithmetic (floats, arrays, Jets)."""
        inputs = (x1, x2)
        stack: list[Any] = []
        for instr in self.tape:
            code = instr[0]
            if code == "const":
                stack.append(instr[1])
            elif code == "var":
                stack.append(inputs[instr[1]])
            elif code == "neg":
                stack.append(-stack.pop())
            elif code == "call":
                value_fn, jet_fn = UNARY_FUNCTIONS[instr[1]]
                operand = stack.pop()
                stack.append(jet_fn(operand) if isinstance(operand, Jet) else value_fn(operand))
            else:
                b = stack.pop()
                a = stack.pop()
                stack.append(_binary(code, a, b))
        return stack[0]

    def __call__(self, x1: Any, x2: Any) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        with np.errstate(all="ignore"):
            value = self.run(x1, x2)
        return np.broadcast_to(np.asarray(value, dtype=float), np.broadcast(x1, x2).shape).copy()

    def jet(self, x1: Any, x2: Any, order: int = 2) -> Jet:
        v1, v2 = Jet.variables(x1, x2, order=order)
        with np.errstate(all="ignore"):
            value = self.run(v1, v2)
        if not isinstance(value, Jet):
            value = v1.constant_like(value)
        return value
