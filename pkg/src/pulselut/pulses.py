"""Pulse-level vocabulary: modulation trees, pulses, NOPs, gate definitions.

A gate is an array of pulses. Each pulse targets one channel for one
duration and carries a modulation tree per (parameter, tone) slot; unset
slots default to a scalar zero. A pulse that sets nothing but channel and
duration is a NOP and serves as timed padding.

Values stay in physical units (Hz, radians, normalized amplitude -1..1)
until spline quantization, so there is a single quantization point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from . import params, splines
from .errors import DurationTooShort, InvalidDefinition


# -- modulation trees ----------------------------------------------------

@dataclass(frozen=True)
class Scalar:
    value: float = 0.0


@dataclass(frozen=True)
class Discrete:
    values: tuple

    def __init__(self, values):
        object.__setattr__(self, "values", tuple(values))
        if not self.values:
            raise ValueError("Discrete needs at least one value")


@dataclass(frozen=True)
class Spline:
    knots: tuple

    def __init__(self, knots):
        object.__setattr__(self, "knots", tuple(knots))
        if not self.knots:
            raise ValueError("Spline needs at least one knot")


@dataclass(frozen=True)
class Mixed:
    children: tuple

    def __init__(self, children):
        object.__setattr__(self, "children", tuple(children))
        if not self.children:
            raise ValueError("Mixed needs at least one child")


ModulationNode = Scalar | Discrete | Spline | Mixed

SCALAR_SEGMENT = 0
DISCRETE_SEGMENT = 1
SPLINE_SEGMENT = 2


@dataclass(frozen=True)
class FlatSegment:
    """One pulselet-word-sized piece of a flattened modulation tree."""

    cycles: int
    kind: int  # SCALAR_SEGMENT | DISCRETE_SEGMENT | SPLINE_SEGMENT
    a: float
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0

    def cubic(self) -> splines.CubicSegment:
        return splines.CubicSegment(self.a, self.b, self.c, self.d, self.cycles)


def _split_equal(total: int, parts: int) -> list[int]:
    # floor division, remainder on the final part
    base = total // parts
    out = [base] * parts
    out[-1] += total - base * parts
    return out


def flatten(node: ModulationNode, duration_cycles: int) -> list[FlatSegment]:
    """Distribute a modulation tree over a duration.

    Splines with K knots become K-1 segments, discrete lists one segment
    per value, mixed nodes split the duration equally among children and
    recurse. Durations always sum exactly to duration_cycles.
    """
    segs = _flatten(node, duration_cycles)
    for s in segs:
        if s.cycles < params.MIN_PULSE_CYCLES:
            raise DurationTooShort(
                f"segment of {s.cycles} cycles is below the "
                f"{params.MIN_PULSE_CYCLES}-cycle minimum"
            )
    return segs


def _flatten(node, duration_cycles):
    if duration_cycles < 1:
        raise DurationTooShort("cannot flatten over a zero-cycle duration")
    if isinstance(node, Scalar):
        return [FlatSegment(duration_cycles, SCALAR_SEGMENT, float(node.value))]
    if isinstance(node, Discrete):
        pieces = _split_equal(duration_cycles, len(node.values))
        return [
            FlatSegment(n, DISCRETE_SEGMENT, float(v))
            for v, n in zip(node.values, pieces)
        ]
    if isinstance(node, Spline):
        if len(node.knots) == 1:
            return [FlatSegment(duration_cycles, DISCRETE_SEGMENT, float(node.knots[0]))]
        pieces = _split_equal(duration_cycles, len(node.knots) - 1)
        fitted = splines.fit_natural_cubic(node.knots, pieces)
        return [
            FlatSegment(seg.cycles, SPLINE_SEGMENT, seg.a, seg.b, seg.c, seg.d)
            for seg in fitted
        ]
    if isinstance(node, Mixed):
        pieces = _split_equal(duration_cycles, len(node.children))
        out = []
        for child, n in zip(node.children, pieces):
            out.extend(_flatten(child, n))
        return out
    raise TypeError(f"not a modulation node: {node!r}")


# -- pulses --------------------------------------------------------------

@dataclass(frozen=True)
class PulseMetadata:
    sync_flag: bool = False
    wait_trigger: bool = False
    feedforward_enable: bool = False
    frame_apply_mask: int = 0   # bit per tone
    frame_invert_mask: int = 0
    frame_apply_at_end: bool = False

    def __post_init__(self):
        if not 0 <= self.frame_apply_mask < 4 or not 0 <= self.frame_invert_mask < 4:
            raise ValueError("frame masks are 2-bit")


@dataclass(frozen=True)
class Pulse:
    """Per-channel modulation over one duration.

    Slots are keyed by (parameter, tone); anything unset is Scalar(0).
    Durations are given in seconds or directly in clock cycles.
    """

    channel: int
    cycles: int
    slots: dict = field(default_factory=dict)
    metadata: PulseMetadata = PulseMetadata()
    mutation_id: int | None = None

    def __post_init__(self):
        if not 0 <= self.channel < params.CHANNELS:
            raise ValueError(f"channel {self.channel} out of range")
        if self.cycles < params.MIN_PULSE_CYCLES:
            raise DurationTooShort(
                f"pulse of {self.cycles} cycles is below the "
                f"{params.MIN_PULSE_CYCLES}-cycle minimum"
            )
        for key in self.slots:
            p, t = key
            if not (0 <= p < params.PARAMS and 0 <= t < params.TONES):
                raise ValueError(f"bad slot {key}")

    def slot(self, param: int, tone: int) -> ModulationNode:
        return self.slots.get((param, tone), Scalar(0.0))

    @property
    def is_nop(self) -> bool:
        return all(
            isinstance(n, Scalar) and n.value == 0 for n in self.slots.values()
        )


def pulse(channel, duration=None, *, cycles=None, slots=None, metadata=None,
          mutation_id=None) -> Pulse:
    """Pulse constructor taking seconds (duration) or clock cycles."""
    if (duration is None) == (cycles is None):
        raise ValueError("give exactly one of duration (s) or cycles")
    if cycles is None:
        cycles = quantize_duration(duration)
    return Pulse(
        channel,
        int(cycles),
        dict(slots or {}),
        metadata or PulseMetadata(),
        mutation_id,
    )


def nop(channel, duration=None, *, cycles=None) -> Pulse:
    """Timed padding: all slots scalar zero, metadata all clear."""
    return pulse(channel, duration, cycles=cycles)


def quantize_duration(seconds: float) -> int:
    """Seconds to clock cycles at the parameter update rate."""
    if seconds <= 0:
        raise DurationTooShort("duration must be positive")
    cycles = splines.round_half_away(seconds * params.CLOCK_HZ)
    if cycles < params.MIN_PULSE_CYCLES:
        raise DurationTooShort(
            f"{seconds} s quantizes to {cycles} cycles, below the "
            f"{params.MIN_PULSE_CYCLES}-cycle minimum"
        )
    return cycles


# -- gate definitions ----------------------------------------------------

@dataclass(frozen=True)
class GateDefinition:
    name: str
    args: tuple
    pulses: tuple

    def __init__(self, name, args=(), pulses=()):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "args", tuple(Fraction(a) for a in args))
        object.__setattr__(self, "pulses", tuple(pulses))

    def channel_cycles(self) -> dict[int, int]:
        """Per-channel duration; same-channel pulses run back-to-back."""
        out: dict[int, int] = {}
        for p in self.pulses:
            out[p.channel] = out.get(p.channel, 0) + p.cycles
        return out

    def validate(self):
        failures = []
        if not self.pulses:
            failures.append(f"gate {self.name}: no pulses")
        for p in self.pulses:
            if not isinstance(p, Pulse):
                failures.append(f"gate {self.name}: non-pulse entry {p!r}")
        if failures:
            raise InvalidDefinition(failures)
        return self

    def canonical(self) -> "GateDefinition":
        """Stable pulse ordering for byte comparisons: by channel, then
        original order (per-channel order is semantic)."""
        order = sorted(range(len(self.pulses)), key=lambda i: (self.pulses[i].channel, i))
        return GateDefinition(self.name, self.args, tuple(self.pulses[i] for i in order))
