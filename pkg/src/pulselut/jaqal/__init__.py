"""Jaqal-subset frontend: tokenizer, recursive-descent parser, semantic
analyzer, and the tabulated IR."""

from .lexer import Token, Tokenizer, tokenize
from .parser import Parser, parse, parse_text, pretty
from .resolve import Kind, Resolution, analyze
from .tir import TIR, BlockEntry, GateEntry, lower_to_tir, naive_gate_walk

__all__ = [
    "Token",
    "Tokenizer",
    "tokenize",
    "Parser",
    "parse",
    "parse_text",
    "pretty",
    "Kind",
    "Resolution",
    "analyze",
    "TIR",
    "BlockEntry",
    "GateEntry",
    "lower_to_tir",
    "naive_gate_walk",
]


def frontend(source: str, overrides=None) -> TIR:
    """Source text straight to tables."""
    return lower_to_tir(analyze(parse_text(source)), overrides)
