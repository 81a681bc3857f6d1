"""Tabulated intermediate representation.

Tables for gates, blocks, and macros with globally unique indices.
Sequential gate calls with equal (name, argument values) share one gate
entry; every gate occurrence inside a parallel block gets its own entry,
since duration matching against its neighbors can make its pulse data
unique. Macro substitution is memoized per (macro, argument values) and
works on the tables, not on a re-walk of the whole circuit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from ..errors import UnknownIdentifier
from . import parser as ast
from .resolve import Kind

GATE = "gate"
BLOCK = "block"


@dataclass(frozen=True)
class GateEntry:
    name: str
    args: tuple
    parallel: bool = False


@dataclass(frozen=True)
class BlockEntry:
    kind: str            # "seq" | "par" | "loop"
    children: tuple      # (GATE, i) or (BLOCK, i) refs
    count: int = 1       # loop repetitions


@dataclass
class TIR:
    gate_table: list = field(default_factory=list)
    block_table: list = field(default_factory=list)
    macro_table: list = field(default_factory=list)
    root_block: int = 0

    def expand(self) -> list[int]:
        """Flat gate-index sequence (loops unrolled); the dedup oracle.

        Physically unrolls loops, so this is for oracle-scale programs,
        not the bytecode path.
        """
        out: list[int] = []
        stack = [(BLOCK, self.root_block)]
        while stack:
            kind, idx = stack.pop()
            if kind == GATE:
                out.append(idx)
                continue
            entry = self.block_table[idx]
            if entry.kind == "loop":
                stack.extend([entry.children[0]] * entry.count)
            else:
                stack.extend(reversed(entry.children))
        return out


class _Lowering:
    def __init__(self, overrides):
        self.tir = TIR()
        self.overrides = dict(overrides or {})
        self.gate_index: dict = {}       # (name, args) -> gate table index
        self.macro_cache: dict = {}      # (macro name, args) -> block ref
        self.macro_index: dict = {}

    # -- value binding -----------------------------------------------

    def _const(self, ident: ast.Identifier, bindings):
        res = ident.resolution
        if res.kind is Kind.MACRO_PARAM:
            value = bindings[res.value]
            if not isinstance(value, Fraction):
                raise UnknownIdentifier(
                    f"macro parameter {ident.name!r} bound to a qubit where a "
                    f"number is needed",
                    ident.line,
                    ident.column,
                )
            return value
        if res.kind is Kind.CONSTANT:
            return self.overrides.get(ident.name, res.value)
        raise UnknownIdentifier(
            f"{ident.name!r} does not name a value", ident.line, ident.column
        )

    def _arg_value(self, arg, bindings):
        if isinstance(arg, ast.Number):
            return arg.value
        if isinstance(arg, ast.QubitRef):
            res = arg.register.resolution
            reg = arg.register.name
            if res.kind is Kind.NAMED_QUBIT:
                reg = res.value[0]
            if isinstance(arg.index, ast.Identifier):
                idx = self._const(arg.index, bindings)
            else:
                idx = arg.index.value
            if idx.denominator != 1 or idx < 0:
                raise UnknownIdentifier(
                    f"qubit index {idx} is not a valid offset",
                    arg.line,
                    arg.column,
                )
            return ("q", reg, int(idx))
        if isinstance(arg, ast.Identifier):
            res = arg.resolution
            if res.kind is Kind.NAMED_QUBIT:
                target, idx = res.value
                return ("q", target, int(idx))
            if res.kind is Kind.MACRO_PARAM:
                return bindings[res.value]
            if res.kind is Kind.CONSTANT:
                return self.overrides.get(arg.name, res.value)
            raise UnknownIdentifier(
                f"{arg.name!r} cannot be a gate argument", arg.line, arg.column
            )
        raise TypeError(f"unexpected argument {arg!r}")

    # -- tables ---------------------------------------------------------

    def gate_ref(self, name: str, args: tuple, parallel: bool):
        if parallel:
            self.tir.gate_table.append(GateEntry(name, args, True))
            return (GATE, len(self.tir.gate_table) - 1)
        key = (name, args)
        idx = self.gate_index.get(key)
        if idx is None:
            self.tir.gate_table.append(GateEntry(name, args, False))
            idx = len(self.tir.gate_table) - 1
            self.gate_index[key] = idx
        return (GATE, idx)

    def block_ref(self, kind: str, children, count: int = 1):
        self.tir.block_table.append(BlockEntry(kind, tuple(children), count))
        return (BLOCK, len(self.tir.block_table) - 1)

    # -- walking ----------------------------------------------------------

    def lower_statements(self, statements, bindings, parallel=False):
        refs = []
        for stmt in statements:
            ref = self.lower_statement(stmt, bindings, parallel)
            if ref is not None:
                refs.append(ref)
        return refs

    def lower_statement(self, stmt, bindings, parallel=False):
        if isinstance(stmt, (ast.RegisterDecl, ast.MapDecl, ast.LetDecl)):
            return None
        if isinstance(stmt, ast.MacroDef):
            if stmt.name not in self.macro_index:
                self.tir.macro_table.append(stmt)
                self.macro_index[stmt.name] = len(self.tir.macro_table) - 1
            return None
        if isinstance(stmt, ast.Block):
            return self.block_ref("seq", self.lower_statements(stmt.statements, bindings))
        if isinstance(stmt, ast.ParallelBlock):
            refs = self.lower_statements(stmt.gates, bindings, parallel=True)
            return self.block_ref("par", refs)
        if isinstance(stmt, ast.LoopStmt):
            count = stmt.count
            if isinstance(count, ast.Identifier):
                count = self._const(count, bindings)
            else:
                count = count.value
            if count.denominator != 1 or count < 0:
                raise UnknownIdentifier(
                    "loop count must be a non-negative integer",
                    stmt.line,
                    stmt.column,
                )
            body = self.lower_statement(stmt.body, bindings)
            return self.block_ref("loop", [body], int(count))
        if isinstance(stmt, ast.GateStmt):
            res = stmt.name.resolution
            args = tuple(self._arg_value(a, bindings) for a in stmt.args)
            if res is not None and res.kind is Kind.MACRO:
                return self.expand_macro(res.value, args)
            return self.gate_ref(stmt.name.name, args, parallel)
        raise TypeError(f"unexpected statement {stmt!r}")

    def expand_macro(self, macro: ast.MacroDef, args: tuple):
        key = (macro.name, args)
        ref = self.macro_cache.get(key)
        if ref is None:
            ref = self.lower_statement(macro.body, dict(enumerate(args)))
            self.macro_cache[key] = ref
        return ref


def lower_to_tir(tree: ast.Program, overrides=None) -> TIR:
    """Analyzed tree to tables; `overrides` re-binds let constants."""
    low = _Lowering(overrides)
    refs = low.lower_statements(tree.statements, {})
    root = low.block_ref("seq", refs)
    low.tir.root_block = root[1]
    return low.tir


def naive_gate_walk(tree: ast.Program, overrides=None) -> list:
    """Independent dedup oracle: flat (name, args, parallel) tuples from a
    direct tree walk with macros expanded inline."""
    out = []
    overrides = dict(overrides or {})

    def const(ident, bindings):
        res = ident.resolution
        if res.kind is Kind.MACRO_PARAM:
            return bindings[res.value]
        return overrides.get(ident.name, res.value)

    def arg_value(arg, bindings):
        if isinstance(arg, ast.Number):
            return arg.value
        if isinstance(arg, ast.QubitRef):
            res = arg.register.resolution
            reg = res.value[0] if res.kind is Kind.NAMED_QUBIT else arg.register.name
            idx = (
                const(arg.index, bindings)
                if isinstance(arg.index, ast.Identifier)
                else arg.index.value
            )
            return ("q", reg, int(idx))
        res = arg.resolution
        if res.kind is Kind.NAMED_QUBIT:
            return ("q", res.value[0], int(res.value[1]))
        if res.kind is Kind.MACRO_PARAM:
            return bindings[res.value]
        return overrides.get(arg.name, res.value)

    def walk(stmt, bindings, parallel):
        if isinstance(stmt, (ast.RegisterDecl, ast.MapDecl, ast.LetDecl, ast.MacroDef)):
            return
        if isinstance(stmt, ast.Block):
            for s in stmt.statements:
                walk(s, bindings, parallel)
            return
        if isinstance(stmt, ast.ParallelBlock):
            for g in stmt.gates:
                walk(g, bindings, True)
            return
        if isinstance(stmt, ast.LoopStmt):
            count = stmt.count
            count = const(count, bindings) if isinstance(count, ast.Identifier) else count.value
            for _ in range(int(count)):
                walk(stmt.body, bindings, parallel)
            return
        res = stmt.name.resolution
        args = tuple(arg_value(a, bindings) for a in stmt.args)
        if res is not None and res.kind is Kind.MACRO:
            macro = res.value
            walk(macro.body, dict(enumerate(args)), parallel)
            return
        out.append((stmt.name.name, args, parallel))

    for s in tree.statements:
        walk(s, {}, False)
    return out
