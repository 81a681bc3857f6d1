"""Semantic analysis: every identifier gets exactly one resolution.

The tree is never mutated; nodes that gain a resolution are rebuilt and
untouched subtrees are reused. Gate names that are neither macros nor
any other definition resolve as external gate names (the gate provider
validates them later).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from ..errors import ArityMismatch, DuplicateDefinition, UnknownIdentifier
from .parser import (
    Block,
    GateStmt,
    Identifier,
    LetDecl,
    LoopStmt,
    MacroDef,
    MapDecl,
    Number,
    ParallelBlock,
    Program,
    QubitRef,
    RegisterDecl,
)


class Kind(Enum):
    CONSTANT = "constant"
    REGISTER = "register"
    GATE = "gate name"
    MACRO = "macro"
    MACRO_PARAM = "macro parameter"
    NAMED_QUBIT = "named qubit"


@dataclass(frozen=True)
class Resolution:
    kind: Kind
    value: object = None  # constant value, register size, (reg, idx), param index


@dataclass(frozen=True)
class Scope:
    registers: dict
    lets: dict
    maps: dict
    macros: dict

    def check_free(self, name: str, node):
        for t in (self.registers, self.lets, self.maps, self.macros):
            if name in t:
                raise DuplicateDefinition(
                    f"{name!r} is already defined", node.line, node.column
                )

    def define(self, table: dict, name: str, value, node):
        self.check_free(name, node)
        table[name] = value


def analyze(tree: Program) -> Program:
    scope = Scope({}, {}, {}, {})
    # declarations first: Jaqal requires definition before use, so a single
    # in-order walk both collects and checks
    out = []
    for stmt in tree.statements:
        out.append(_analyze_stmt(stmt, scope, params=None))
    return replace(tree, statements=tuple(out))


def _analyze_stmt(stmt, scope: Scope, params):
    if isinstance(stmt, RegisterDecl):
        scope.define(scope.registers, stmt.name, stmt.size, stmt)
        return stmt
    if isinstance(stmt, MapDecl):
        if stmt.target not in scope.registers:
            raise UnknownIdentifier(
                f"map target {stmt.target!r} is not a register", stmt.line, stmt.column
            )
        if stmt.index is not None and not (
            0 <= stmt.index < scope.registers[stmt.target]
        ):
            raise UnknownIdentifier(
                f"map index {stmt.index} outside register {stmt.target!r}",
                stmt.line,
                stmt.column,
            )
        scope.define(scope.maps, stmt.alias, (stmt.target, stmt.index), stmt)
        return stmt
    if isinstance(stmt, LetDecl):
        scope.define(scope.lets, stmt.name, stmt.value, stmt)
        return stmt
    if isinstance(stmt, MacroDef):
        scope.check_free(stmt.name, stmt)
        if len(set(stmt.params)) != len(stmt.params):
            raise DuplicateDefinition(
                f"macro {stmt.name!r} repeats a parameter name", stmt.line, stmt.column
            )
        body = _analyze_block(stmt.body, scope, dict((p, i) for i, p in enumerate(stmt.params)))
        new = replace(stmt, body=body)
        scope.define(scope.macros, stmt.name, new, stmt)
        return new
    if isinstance(stmt, LoopStmt):
        count = stmt.count
        if isinstance(count, Identifier):
            count = _resolve_value_ident(count, scope, params)
        elif count.value < 0 or count.value.denominator != 1:
            raise UnknownIdentifier(
                "loop count must be a non-negative integer", stmt.line, stmt.column
            )
        body = (
            _analyze_parallel(stmt.body, scope, params)
            if isinstance(stmt.body, ParallelBlock)
            else _analyze_block(stmt.body, scope, params)
        )
        return replace(stmt, count=count, body=body)
    if isinstance(stmt, Block):
        return _analyze_block(stmt, scope, params)
    if isinstance(stmt, ParallelBlock):
        return _analyze_parallel(stmt, scope, params)
    if isinstance(stmt, GateStmt):
        return _analyze_gate(stmt, scope, params)
    raise TypeError(f"unexpected node {stmt!r}")


def _analyze_block(block: Block, scope, params) -> Block:
    return replace(
        block,
        statements=tuple(_analyze_stmt(s, scope, params) for s in block.statements),
    )


def _analyze_parallel(par: ParallelBlock, scope, params) -> ParallelBlock:
    gates = []
    for g in par.gates:
        resolved = _analyze_gate(g, scope, params)
        if resolved.name.resolution.kind is Kind.MACRO:
            raise UnknownIdentifier(
                "macro calls are not supported inside parallel blocks",
                g.line,
                g.column,
            )
        gates.append(resolved)
    return replace(par, gates=tuple(gates))


def _analyze_gate(gate: GateStmt, scope, params) -> GateStmt:
    name = gate.name
    macro = scope.macros.get(name.name)
    if macro is not None:
        if len(gate.args) != len(macro.params):
            raise ArityMismatch(
                f"macro {name.name!r} takes {len(macro.params)} arguments, "
                f"got {len(gate.args)}",
                gate.line,
                gate.column,
            )
        res = Resolution(Kind.MACRO, macro)
    else:
        res = Resolution(Kind.GATE)
    new_name = replace(name, resolution=res)
    new_args = tuple(_analyze_arg(a, scope, params) for a in gate.args)
    return replace(gate, name=new_name, args=new_args)


def _analyze_arg(arg, scope, params):
    if isinstance(arg, Number):
        return arg
    if isinstance(arg, QubitRef):
        reg = arg.register
        size = scope.registers.get(reg.name)
        alias = scope.maps.get(reg.name)
        if size is None and alias is None:
            raise UnknownIdentifier(
                f"{reg.name!r} is not a register", reg.line, reg.column
            )
        if alias is not None and alias[1] is not None:
            raise UnknownIdentifier(
                f"{reg.name!r} names a single qubit, not a register",
                reg.line,
                reg.column,
            )
        idx = arg.index
        if isinstance(idx, Identifier):
            idx = _resolve_value_ident(idx, scope, params)
        else:
            bound = size if size is not None else scope.registers[alias[0]]
            if not (0 <= idx.value < bound) or idx.value.denominator != 1:
                raise UnknownIdentifier(
                    f"index {idx.value} outside {reg.name!r}", idx.line, idx.column
                )
        kind = Kind.REGISTER if size is not None else Kind.NAMED_QUBIT
        return replace(
            arg,
            register=replace(reg, resolution=Resolution(kind, size or alias)),
            index=idx,
        )
    if isinstance(arg, Identifier):
        return _resolve_value_ident(arg, scope, params, allow_qubit=True)
    raise TypeError(f"unexpected argument node {arg!r}")


def _resolve_value_ident(ident: Identifier, scope, params, allow_qubit=False):
    if params is not None and ident.name in params:
        return replace(
            ident, resolution=Resolution(Kind.MACRO_PARAM, params[ident.name])
        )
    if ident.name in scope.lets:
        return replace(
            ident, resolution=Resolution(Kind.CONSTANT, scope.lets[ident.name])
        )
    if allow_qubit and ident.name in scope.maps:
        return replace(
            ident, resolution=Resolution(Kind.NAMED_QUBIT, scope.maps[ident.name])
        )
    if allow_qubit and ident.name in scope.registers:
        return replace(
            ident, resolution=Resolution(Kind.REGISTER, scope.registers[ident.name])
        )
    raise UnknownIdentifier(f"unknown identifier {ident.name!r}", ident.line, ident.column)
