"""Tokenizer, parser, semantic analysis, and TIR lowering."""
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulselut import jaqal
from pulselut.errors import (
    ArityMismatch,
    DuplicateDefinition,
    IllegalCharacter,
    JaqalSyntaxError,
    UnknownIdentifier,
)
from pulselut.jaqal import parser
from pulselut.jaqal.resolve import Kind


class TestTokenizer:
    def test_register_decl(self):
        toks = jaqal.tokenize("register q[2]")
        assert [(t.kind, t.text) for t in toks] == [
            ("keyword", "register"),
            ("identifier", "q"),
            ("punctuation", "["),
            ("integer", "2"),
            ("punctuation", "]"),
        ]

    def test_empty_input(self):
        assert jaqal.tokenize("") == []

    def test_comment_dropped(self):
        toks = jaqal.tokenize("Sx q[0] // c\n")
        assert len(toks) == 5
        assert [t.text for t in toks] == ["Sx", "q", "[", "0", "]"]

    def test_block_comment(self):
        toks = jaqal.tokenize("Sx /* mid */ q[0]")
        assert [t.text for t in toks] == ["Sx", "q", "[", "0", "]"]

    def test_concatenation_recovers_source_modulo_whitespace(self):
        src = "register q[3]\nlet x -1.5e3 // tail\nSx q[0]"
        toks = jaqal.tokenize(src)
        squashed = "".join(t.text for t in toks)
        stripped = (
            src.split("//")[0].replace(" ", "").replace("\n", "")
            + src.split("// tail\n")[1].replace(" ", "")
        )
        assert squashed == stripped

    def test_line_and_column(self):
        toks = jaqal.tokenize("Sx q[0]\n  Sy q[1]")
        assert (toks[0].line, toks[0].column) == (1, 1)
        sy = [t for t in toks if t.text == "Sy"][0]
        assert (sy.line, sy.column) == (2, 3)

    def test_numbers(self):
        toks = jaqal.tokenize("1 -2 0.5 -0.5 1e3 2.5e-4")
        assert [t.kind for t in toks] == [
            "integer", "integer", "float", "float", "float", "float",
        ]

    def test_illegal_character(self):
        with pytest.raises(IllegalCharacter) as err:
            jaqal.tokenize("Sx q[0] @")
        assert err.value.line == 1
        assert err.value.column == 9

    def test_non_ascii_rejected(self):
        with pytest.raises(IllegalCharacter):
            jaqal.tokenize("Sx qé[0]")

    def test_determinism(self):
        src = "register q[4]\nloop 3 { Sx q[0] }\n"
        a = jaqal.tokenize(src)
        b = jaqal.tokenize(src)
        assert [(t.kind, t.text, t.line, t.column) for t in a] == [
            (t.kind, t.text, t.line, t.column) for t in b
        ]


class TestParser:
    def test_loop_shape(self):
        tree = jaqal.parse_text("loop 2 { Sx q[0] }")
        (loop,) = tree.statements
        assert isinstance(loop, parser.LoopStmt)
        assert loop.count.value == 2
        assert len(loop.body.statements) == 1

    def test_parallel_shape(self):
        tree = jaqal.parse_text("<Sx q[0] | Sy q[1]>")
        (par,) = tree.statements
        assert isinstance(par, parser.ParallelBlock)
        assert [g.name.name for g in par.gates] == ["Sx", "Sy"]

    def test_loop_over_parallel(self):
        tree = jaqal.parse_text("loop 3 <Sx q[0] | Sy q[1]>")
        (loop,) = tree.statements
        assert isinstance(loop.body, parser.ParallelBlock)
        t = jaqal.lower_to_tir(jaqal.analyze(
            jaqal.parse_text("register q[2]\nloop 3 <Sx q[0] | Sy q[1]>")
        ))
        assert len(t.expand()) == 6

    def test_unbalanced_brace(self):
        with pytest.raises(JaqalSyntaxError):
            jaqal.parse_text("}")

    def test_unterminated_block(self):
        with pytest.raises(JaqalSyntaxError):
            jaqal.parse_text("{ Sx q[0]")

    def test_gate_args_end_at_newline(self):
        tree = jaqal.parse_text("MyGate 1 2\nOther 3")
        first, second = tree.statements
        assert len(first.args) == 2
        assert second.name.name == "Other"
        assert len(second.args) == 1

    def test_semicolon_separates(self):
        tree = jaqal.parse_text("Sx q[0] ; Sy q[0]")
        assert len(tree.statements) == 2

    def test_float_to_rational(self):
        tree = jaqal.parse_text("let x 0.5")
        assert tree.statements[0].value == Fraction(1, 2)

    def test_denominator_cap(self):
        value = parser.parse_number("0.12345678901234")
        assert value.denominator <= 10**9

    def test_pretty_roundtrip(self):
        src = (
            "register q[3]\nlet d 10\nmap alias q[1]\n"
            "macro two a { Sx a\nSy a }\n"
            "loop 4 { two q[0]\n<Sx q[0] | Sy q[2]> }\nmeasure_all\n"
        )
        tree = jaqal.parse_text(src)
        again = jaqal.parse_text(jaqal.pretty(tree))
        assert tree == again


class TestAnalyze:
    def test_let_constant_argument(self):
        tree = jaqal.analyze(jaqal.parse_text("let d 10\nMyGate d"))
        gate = tree.statements[1]
        assert gate.args[0].resolution.kind is Kind.CONSTANT
        assert gate.args[0].resolution.value == 10

    def test_unknown_register(self):
        with pytest.raises(UnknownIdentifier):
            jaqal.analyze(jaqal.parse_text("Sx r[0]"))

    def test_macro_shadowing_let(self):
        with pytest.raises(DuplicateDefinition):
            jaqal.analyze(jaqal.parse_text("register q[1]\nlet m 1\nmacro m { Sx q[0] }"))

    def test_macro_param_shadows_global(self):
        src = "register q[2]\nlet a 5\nmacro g a { Sx a }\ng q[1]"
        tree = jaqal.analyze(jaqal.parse_text(src))
        body_gate = tree.statements[2].body.statements[0]
        assert body_gate.args[0].resolution.kind is Kind.MACRO_PARAM

    def test_arity_mismatch(self):
        src = "register q[2]\nmacro g a b { Sx a }\ng q[0]"
        with pytest.raises(ArityMismatch):
            jaqal.analyze(jaqal.parse_text(src))

    def test_named_qubit(self):
        src = "register q[2]\nmap ancilla q[1]\nSx ancilla"
        tree = jaqal.analyze(jaqal.parse_text(src))
        arg = tree.statements[2].args[0]
        assert arg.resolution.kind is Kind.NAMED_QUBIT
        assert arg.resolution.value == ("q", 1)

    def test_index_out_of_range(self):
        with pytest.raises(UnknownIdentifier):
            jaqal.analyze(jaqal.parse_text("register q[2]\nSx q[2]"))

    def test_every_identifier_resolved(self):
        src = (
            "register q[2]\nlet d 3\nmap a q[0]\n"
            "macro g x { Sx x }\ng a\nMyGate d q[1]\nloop d { Sy q[0] }"
        )
        tree = jaqal.analyze(jaqal.parse_text(src))

        def check(node):
            if isinstance(node, parser.Identifier):
                assert node.resolution is not None, node
            for f in getattr(node, "__dataclass_fields__", {}):
                value = getattr(node, f)
                if isinstance(value, parser.Node):
                    check(value)
                elif isinstance(value, tuple):
                    for v in value:
                        if isinstance(v, parser.Node):
                            check(v)

        for stmt in tree.statements:
            check(stmt)


class TestTir:
    def lower(self, src, overrides=None):
        return jaqal.lower_to_tir(jaqal.analyze(jaqal.parse_text(src)), overrides)

    def test_sequential_dedup(self):
        t = self.lower("register q[1]\n" + "Sx q[0]\n" * 100)
        assert len(t.gate_table) == 1
        assert len(t.expand()) == 100

    def test_parallel_entries_unique(self):
        t = self.lower("register q[2]\n" + "<Sx q[0]|Sx q[1]>\n" * 2)
        assert len(t.gate_table) == 4

    def test_empty_program(self):
        t = self.lower("")
        assert t.gate_table == []
        assert t.macro_table == []
        assert t.block_table[t.root_block].children == ()

    def test_macro_stored_once_and_memoized(self):
        src = (
            "register q[2]\nmacro two a { Sx a\nSy a }\n"
            "two q[0]\ntwo q[0]\ntwo q[1]"
        )
        t = self.lower(src)
        assert len(t.macro_table) == 1
        # identical calls reuse the same expansion block
        root = t.block_table[t.root_block]
        assert root.children[0] == root.children[1]
        assert root.children[2] != root.children[0]

    def test_let_override_changes_dedup(self):
        src = "register q[1]\nlet d 1\nMyGate d\nMyGate 2"
        t = self.lower(src)
        assert len(t.gate_table) == 2
        t2 = self.lower(src, overrides={"d": Fraction(2)})
        assert len(t2.gate_table) == 1

    def test_loop_expansion_count(self):
        t = self.lower("register q[1]\nloop 5 { Sx q[0]\nloop 2 { Sy q[0] } }")
        flat = t.expand()
        assert len(flat) == 5 * (1 + 2)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_dedup_matches_naive_walk(self, seed):
        from pulselut.bench import random_circuit_source

        src = random_circuit_source(200, seed)
        tree = jaqal.analyze(jaqal.parse_text(src))
        t = jaqal.lower_to_tir(tree)
        naive = jaqal.naive_gate_walk(tree)
        expanded = [t.gate_table[i] for i in t.expand()]
        assert len(expanded) == len(naive)
        for entry, (name, args, par) in zip(expanded, naive):
            assert (entry.name, entry.args, entry.parallel) == (name, args, par)
        # sequential dedup soundness: no two non-parallel entries collide
        seen = set()
        for e in t.gate_table:
            if not e.parallel:
                assert (e.name, e.args) not in seen
                seen.add((e.name, e.args))


@settings(max_examples=30, deadline=None)
@given(
    st.lists(
        st.sampled_from(["Sx q[0]", "Sy q[1]", "Rz q[0] 0.25", "<Sx q[0] | Sy q[1]>"]),
        min_size=0,
        max_size=12,
    ),
    st.integers(min_value=2, max_value=5),
)
def test_roundtrip_property(lines, loop_count):
    src = "register q[2]\n" + "\n".join(lines)
    if lines:
        src += f"\nloop {loop_count} {{ {lines[0]} }}"
    tree = jaqal.parse_text(src)
    assert jaqal.parse_text(jaqal.pretty(tree)) == tree


def test_parse_cost_scales_linearly():
    from pulselut.bench import least_squares_line, parse_cost, random_circuit_source

    ns = list(range(8, 81, 8))
    costs = []
    for n in ns:
        src = random_circuit_source(n, seed=100 + n, loops=False, parallel_fraction=0.0)
        tok_ops, parse_ops = parse_cost(src)
        costs.append(tok_ops + parse_ops)
    _slope, _intercept, deviation = least_squares_line(ns, costs)
    assert deviation < 0.20
