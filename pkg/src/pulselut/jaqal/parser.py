"""Recursive-descent parser producing the tree IR.

The grammar is LL(1) over the token stream plus line information:
statements are newline- or semicolon-separated, and a gate's argument
list ends at the first token on a new line (Jaqal has no expression
syntax, so no statement spans lines outside of blocks).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction

from ..errors import JaqalSyntaxError
from . import lexer
from .lexer import IDENTIFIER, INTEGER, FLOAT, KEYWORD, PUNCT

MAX_DENOMINATOR = 10**9


def parse_number(text: str) -> Fraction:
    """Source literal to an exact rational (denominator capped)."""
    f = Fraction(Decimal(text))
    if f.denominator > MAX_DENOMINATOR:
        f = f.limit_denominator(MAX_DENOMINATOR)
    return f


def _pos(kw):
    return {"line": kw.line, "column": kw.column}


@dataclass(frozen=True)
class Node:
    line: int = field(default=0, compare=False, kw_only=True)
    column: int = field(default=0, compare=False, kw_only=True)


@dataclass(frozen=True)
class Program(Node):
    statements: tuple = ()


@dataclass(frozen=True)
class RegisterDecl(Node):
    name: str = ""
    size: int = 0


@dataclass(frozen=True)
class MapDecl(Node):
    alias: str = ""
    target: str = ""
    index: int | None = None


@dataclass(frozen=True)
class LetDecl(Node):
    name: str = ""
    value: Fraction = Fraction(0)


@dataclass(frozen=True)
class MacroDef(Node):
    name: str = ""
    params: tuple = ()
    body: "Block" = None


@dataclass(frozen=True)
class LoopStmt(Node):
    count: "Number | Identifier" = None
    body: "Block | ParallelBlock" = None


@dataclass(frozen=True)
class Block(Node):
    statements: tuple = ()


@dataclass(frozen=True)
class ParallelBlock(Node):
    gates: tuple = ()


@dataclass(frozen=True)
class GateStmt(Node):
    name: "Identifier" = None
    args: tuple = ()


@dataclass(frozen=True)
class Identifier(Node):
    name: str = ""
    resolution: object = field(default=None, compare=False)


@dataclass(frozen=True)
class Number(Node):
    value: Fraction = Fraction(0)


@dataclass(frozen=True)
class QubitRef(Node):
    register: "Identifier" = None
    index: "Number | Identifier" = None


class Parser:
    def __init__(self, tokens):
        self.tokens = list(tokens)
        self.pos = 0
        self.ops = 0

    # -- stream helpers ----------------------------------------------

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def advance(self):
        tok = self.peek()
        self.pos += 1
        self.ops += 1
        return tok

    def expect(self, kind, text=None):
        tok = self.peek()
        if tok is None or tok.kind != kind or (text is not None and tok.text != text):
            want = text if text is not None else kind
            got = tok.text if tok else "end of input"
            line = tok.line if tok else 0
            col = tok.column if tok else 0
            raise JaqalSyntaxError(f"unexpected {got!r}", line, col, expected=(want,))
        return self.advance()

    def _skip_separators(self):
        while (tok := self.peek()) is not None and tok.kind == PUNCT and tok.text == ";":
            self.advance()

    # -- grammar -------------------------------------------------------

    def parse_program(self) -> Program:
        stmts = []
        self._skip_separators()
        while self.peek() is not None:
            stmts.append(self.parse_statement())
            self._skip_separators()
        return Program(tuple(stmts), line=1, column=1)

    def parse_statement(self):
        tok = self.peek()
        if tok.kind == KEYWORD:
            return getattr(self, f"_parse_{tok.text}")()
        if tok.kind == PUNCT and tok.text == "{":
            return self.parse_block()
        if tok.kind == PUNCT and tok.text == "<":
            return self.parse_parallel()
        if tok.kind == IDENTIFIER:
            return self.parse_gate()
        raise JaqalSyntaxError(
            f"unexpected {tok.text!r}", tok.line, tok.column,
            expected=("statement",),
        )

    def _parse_register(self):
        kw = self.advance()
        name = self.expect(IDENTIFIER)
        self.expect(PUNCT, "[")
        size = self.expect(INTEGER)
        self.expect(PUNCT, "]")
        return RegisterDecl(name.text, int(size.text), **_pos(kw))

    def _parse_map(self):
        kw = self.advance()
        alias = self.expect(IDENTIFIER)
        target = self.expect(IDENTIFIER)
        index = None
        nxt = self.peek()
        if nxt is not None and nxt.kind == PUNCT and nxt.text == "[":
            self.advance()
            index = int(self.expect(INTEGER).text)
            self.expect(PUNCT, "]")
        return MapDecl(alias.text, target.text, index, **_pos(kw))

    def _parse_let(self):
        kw = self.advance()
        name = self.expect(IDENTIFIER)
        tok = self.peek()
        if tok is None or tok.kind not in (INTEGER, FLOAT):
            raise JaqalSyntaxError(
                "let needs a numeric value",
                tok.line if tok else 0, tok.column if tok else 0,
                expected=("number",),
            )
        self.advance()
        return LetDecl(name.text, parse_number(tok.text), **_pos(kw))

    def _parse_macro(self):
        kw = self.advance()
        name = self.expect(IDENTIFIER)
        par = []
        while (tok := self.peek()) is not None and tok.kind == IDENTIFIER:
            par.append(self.advance().text)
        body = self.parse_block()
        return MacroDef(name.text, tuple(par), body, **_pos(kw))

    def _parse_loop(self):
        kw = self.advance()
        tok = self.peek()
        if tok is not None and tok.kind == INTEGER:
            self.advance()
            count = Number(Fraction(int(tok.text)), **_pos(tok))
        elif tok is not None and tok.kind == IDENTIFIER:
            self.advance()
            count = Identifier(tok.text, **_pos(tok))
        else:
            raise JaqalSyntaxError(
                "loop needs a repeat count",
                tok.line if tok else 0, tok.column if tok else 0,
                expected=("integer", "identifier"),
            )
        nxt = self.peek()
        if nxt is not None and nxt.kind == PUNCT and nxt.text == "<":
            body = self.parse_parallel()
        else:
            body = self.parse_block()
        return LoopStmt(count, body, **_pos(kw))

    def parse_block(self) -> Block:
        opening = self.expect(PUNCT, "{")
        stmts = []
        self._skip_separators()
        while True:
            tok = self.peek()
            if tok is None:
                raise JaqalSyntaxError(
                    "unterminated block", opening.line, opening.column, expected=("}",)
                )
            if tok.kind == PUNCT and tok.text == "}":
                self.advance()
                break
            stmts.append(self.parse_statement())
            self._skip_separators()
        return Block(tuple(stmts), **_pos(opening))

    def parse_parallel(self) -> ParallelBlock:
        opening = self.expect(PUNCT, "<")
        gates = []
        while True:
            tok = self.peek()
            if tok is None:
                raise JaqalSyntaxError(
                    "unterminated parallel block", opening.line, opening.column,
                    expected=(">",),
                )
            if tok.kind == PUNCT and tok.text == ">":
                self.advance()
                break
            if tok.kind == PUNCT and tok.text == "|":
                self.advance()
                continue
            gates.append(self.parse_gate())
        return ParallelBlock(tuple(gates), **_pos(opening))

    def parse_gate(self) -> GateStmt:
        name_tok = self.expect(IDENTIFIER)
        name = Identifier(name_tok.text, **_pos(name_tok))
        args = []
        while True:
            tok = self.peek()
            if tok is None or tok.line != name_tok.line:
                break
            if tok.kind == PUNCT:
                break
            args.append(self.parse_arg())
        return GateStmt(name, tuple(args), **_pos(name_tok))

    def parse_arg(self):
        tok = self.advance()
        if tok.kind in (INTEGER, FLOAT):
            return Number(parse_number(tok.text), **_pos(tok))
        if tok.kind != IDENTIFIER:
            raise JaqalSyntaxError(
                f"unexpected {tok.text!r} in argument list",
                tok.line, tok.column, expected=("argument",),
            )
        ident = Identifier(tok.text, **_pos(tok))
        nxt = self.peek()
        if (
            nxt is not None
            and nxt.kind == PUNCT
            and nxt.text == "["
            and nxt.line == tok.line
        ):
            self.advance()
            idx_tok = self.peek()
            if idx_tok is not None and idx_tok.kind == INTEGER:
                self.advance()
                index = Number(Fraction(int(idx_tok.text)), **_pos(idx_tok))
            elif idx_tok is not None and idx_tok.kind == IDENTIFIER:
                self.advance()
                index = Identifier(idx_tok.text, **_pos(idx_tok))
            else:
                raise JaqalSyntaxError(
                    "bad qubit index",
                    idx_tok.line if idx_tok else 0,
                    idx_tok.column if idx_tok else 0,
                    expected=("integer", "identifier"),
                )
            self.expect(PUNCT, "]")
            return QubitRef(ident, index, **_pos(tok))
        return ident


def parse(tokens) -> Program:
    parser = Parser(tokens)
    return parser.parse_program()


def parse_text(source: str) -> Program:
    return parse(lexer.tokenize(source))


# -- pretty printer (round-trip support) -----------------------------------

def pretty(node, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(node, Program):
        return "\n".join(pretty(s, indent) for s in node.statements) + "\n"
    if isinstance(node, RegisterDecl):
        return f"{pad}register {node.name}[{node.size}]"
    if isinstance(node, MapDecl):
        tail = f"[{node.index}]" if node.index is not None else ""
        return f"{pad}map {node.alias} {node.target}{tail}"
    if isinstance(node, LetDecl):
        return f"{pad}let {node.name} {_fmt_number(node.value)}"
    if isinstance(node, MacroDef):
        par = "".join(f" {p}" for p in node.params)
        return f"{pad}macro {node.name}{par} " + pretty(node.body, indent).lstrip()
    if isinstance(node, LoopStmt):
        count = node.count.name if isinstance(node.count, Identifier) else _fmt_number(node.count.value)
        return f"{pad}loop {count} " + pretty(node.body, indent).lstrip()
    if isinstance(node, Block):
        inner = "\n".join(pretty(s, indent + 1) for s in node.statements)
        return f"{pad}{{\n{inner}\n{pad}}}" if inner else f"{pad}{{ }}"
    if isinstance(node, ParallelBlock):
        inner = " | ".join(pretty(g, 0) for g in node.gates)
        return f"{pad}< {inner} >"
    if isinstance(node, GateStmt):
        args = "".join(" " + _fmt_arg(a) for a in node.args)
        return f"{pad}{node.name.name}{args}"
    raise TypeError(f"cannot pretty-print {node!r}")


def _fmt_arg(arg) -> str:
    if isinstance(arg, Number):
        return _fmt_number(arg.value)
    if isinstance(arg, QubitRef):
        idx = arg.index.name if isinstance(arg.index, Identifier) else _fmt_number(arg.index.value)
        return f"{arg.register.name}[{idx}]"
    return arg.name


def _fmt_number(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return repr(float(value))
