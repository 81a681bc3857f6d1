"""Tokenizer for the Jaqal subset.

Tokens reference spans of the source buffer instead of carrying
substring copies; the token list is the only per-run allocation that
scales with input size. Newlines are whitespace at the token level, but
every token records its line so the parser can detect statement
boundaries (gate argument lists end at the line break).
"""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import IllegalCharacter

KEYWORDS = frozenset({"register", "map", "let", "macro", "loop"})
PUNCTUATION = frozenset("[]{}<>|;")

KEYWORD = "keyword"
IDENTIFIER = "identifier"
INTEGER = "integer"
FLOAT = "float"
PUNCT = "punctuation"

_IDENT_START = frozenset(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz_"
)
_IDENT_BODY = _IDENT_START | frozenset("0123456789")
_DIGITS = frozenset("0123456789")


@dataclass(frozen=True, slots=True)
class Token:
    kind: str
    source: str
    start: int
    end: int
    line: int
    column: int

    @property
    def text(self) -> str:
        return self.source[self.start : self.end]

    def __repr__(self):
        return f"Token({self.kind}, {self.text!r}, {self.line}:{self.column})"


class Tokenizer:
    """Single-pass scanner; `ops` counts character-level steps so parse
    cost can be measured without a clock."""

    def __init__(self, source: str):
        try:
            source.encode("ascii")
        except UnicodeEncodeError as exc:
            line, col = _locate(source, exc.start)
            raise IllegalCharacter(
                f"non-ASCII byte {source[exc.start]!r}", line, col
            ) from None
        self.source = source
        self.ops = 0

    def tokens(self) -> list[Token]:
        src = self.source
        n = len(src)
        i = 0
        line = 1
        line_start = 0
        out = []
        while i < n:
            c = src[i]
            self.ops += 1
            if c == "\n":
                line += 1
                i += 1
                line_start = i
                continue
            if c in " \t\r":
                i += 1
                continue
            if c == "/" and i + 1 < n and src[i + 1] == "/":
                while i < n and src[i] != "\n":
                    i += 1
                continue
            if c == "/" and i + 1 < n and src[i + 1] == "*":
                i += 2
                while i + 1 < n and not (src[i] == "*" and src[i + 1] == "/"):
                    if src[i] == "\n":
                        line += 1
                        line_start = i + 1
                    i += 1
                if i + 1 >= n:
                    raise IllegalCharacter("unterminated block comment", line,
                                           i - line_start + 1)
                i += 2
                continue
            col = i - line_start + 1
            if c in _IDENT_START:
                j = i + 1
                while j < n and src[j] in _IDENT_BODY:
                    j += 1
                kind = KEYWORD if src[i:j] in KEYWORDS else IDENTIFIER
                out.append(Token(kind, src, i, j, line, col))
                i = j
                continue
            if c in _DIGITS or (c == "-" and i + 1 < n and src[i + 1] in _DIGITS):
                i = self._number(out, i, line, col)
                continue
            if c == "." and i + 1 < n and src[i + 1] in _DIGITS:
                i = self._number(out, i, line, col)
                continue
            if c in PUNCTUATION:
                out.append(Token(PUNCT, src, i, i + 1, line, col))
                i += 1
                continue
            raise IllegalCharacter(f"unexpected character {c!r}", line, col)
        self.ops += len(out)
        return out

    def _number(self, out, i, line, col):
        src = self.source
        n = len(src)
        j = i + 1 if src[i] == "-" else i
        is_float = False
        while j < n and src[j] in _DIGITS:
            j += 1
        if j < n and src[j] == ".":
            is_float = True
            j += 1
            while j < n and src[j] in _DIGITS:
                j += 1
        if j < n and src[j] in "eE":
            k = j + 1
            if k < n and src[k] in "+-":
                k += 1
            if k < n and src[k] in _DIGITS:
                is_float = True
                j = k
                while j < n and src[j] in _DIGITS:
                    j += 1
        out.append(Token(FLOAT if is_float else INTEGER, src, i, j, line, col))
        return j


def _locate(source: str, offset: int):
    line = source.count("\n", 0, offset) + 1
    col = offset - (source.rfind("\n", 0, offset) + 1) + 1
    return line, col


def tokenize(source: str) -> list[Token]:
    return Tokenizer(source).tokens()
