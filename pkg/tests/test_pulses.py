"""Modulation trees, flattening, NOPs, duration quantization."""
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulselut import params, pulses
from pulselut.errors import DurationTooShort
from pulselut.pulses import Discrete, Mixed, Scalar, Spline


class TestFlatten:
    def test_scalar(self):
        segs = pulses.flatten(Scalar(0.5), 4096)
        assert [(s.cycles, s.a) for s in segs] == [(4096, 0.5)]
        assert segs[0].kind == pulses.SCALAR_SEGMENT

    def test_discrete_remainder_on_last(self):
        # floor-division oracle: 4098 // 4 = 1024, remainder 2 on the last
        segs = pulses.flatten(Discrete([1, 2, 3, 4]), 4098)
        assert [s.cycles for s in segs] == [1024, 1024, 1024, 1026]
        assert [s.a for s in segs] == [1.0, 2.0, 3.0, 4.0]

    def test_spline_segment_count(self):
        segs = pulses.flatten(Spline([0.0, 1.0, 0.5]), 64)
        assert len(segs) == 2
        assert all(s.kind == pulses.SPLINE_SEGMENT for s in segs)

    def test_mixed_recursive_split(self):
        node = Mixed([Scalar(1.0), Spline([0.0, 1.0, 2.0])])
        segs = pulses.flatten(node, 4096)
        assert [s.cycles for s in segs] == [2048, 1024, 1024]
        assert segs[0].kind == pulses.SCALAR_SEGMENT

    def test_too_short_leaf(self):
        with pytest.raises(DurationTooShort):
            pulses.flatten(Discrete([1] * 10), 70)

    @settings(max_examples=60, deadline=None)
    @given(
        st.recursive(
            st.one_of(
                st.builds(Scalar, st.floats(-1, 1)),
                st.builds(Discrete, st.lists(st.floats(-1, 1), min_size=1, max_size=4)),
                st.builds(Spline, st.lists(st.floats(-1, 1), min_size=2, max_size=5)),
            ),
            lambda inner: st.builds(Mixed, st.lists(inner, min_size=1, max_size=3)),
            max_leaves=6,
        ),
        st.integers(min_value=1, max_value=200_000),
    )
    def test_durations_always_sum(self, node, cycles):
        try:
            segs = pulses.flatten(node, cycles)
        except DurationTooShort:
            return
        assert sum(s.cycles for s in segs) == cycles


class TestPulse:
    def test_nop_is_zero_everywhere(self):
        n = pulses.nop(3, cycles=100)
        assert n.channel == 3
        assert n.is_nop
        for param in range(params.PARAMS):
            for tone in range(params.TONES):
                segs = pulses.flatten(n.slot(param, tone), n.cycles)
                assert [(s.cycles, s.a) for s in segs] == [(100, 0.0)]

    def test_nop_below_minimum(self):
        with pytest.raises(DurationTooShort):
            pulses.nop(0, cycles=7)

    def test_minimal_nop(self):
        assert pulses.nop(0, cycles=8).cycles == 8

    def test_channel_range(self):
        with pytest.raises(ValueError):
            pulses.pulse(8, cycles=100)

    def test_default_slot_is_zero(self):
        p = pulses.pulse(0, cycles=64, slots={(params.AMP, 0): Scalar(0.5)})
        assert p.slot(params.FRQ, 1) == Scalar(0.0)
        assert not p.is_nop


class TestQuantizeDuration:
    def test_ten_microseconds(self):
        assert pulses.quantize_duration(10e-6) == 4096

    def test_minimum(self):
        assert pulses.quantize_duration(8 / 409.6e6) == 8

    def test_two_hundred_microseconds(self):
        assert pulses.quantize_duration(200e-6) == 81920

    def test_too_short(self):
        with pytest.raises(DurationTooShort):
            pulses.quantize_duration(7 / 409.6e6)

    def test_nonpositive(self):
        with pytest.raises(DurationTooShort):
            pulses.quantize_duration(0.0)


class TestGateDefinition:
    def test_channel_durations(self, context):
        from pulselut.builders import ms

        gate = ms((0, 1), context)
        per = gate.channel_cycles()
        assert per[0] == per[1] == per[context.global_channel] == context.ms_cycles

    def test_asymmetric_definitions_allowed(self):
        g = pulses.GateDefinition(
            "asym",
            (),
            [pulses.nop(0, cycles=100), pulses.nop(1, cycles=200)],
        )
        g.validate()
        assert g.channel_cycles() == {0: 100, 1: 200}

    def test_empty_definition_invalid(self):
        from pulselut.errors import InvalidDefinition

        with pytest.raises(InvalidDefinition):
            pulses.GateDefinition("bad", (), []).validate()
