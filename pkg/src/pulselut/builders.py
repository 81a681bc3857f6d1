"""Standard gate builders and the calibration context they read.

Channel mapping: qubit k drives individual-addressing channel k; the
shared global beam is the last channel. Single-qubit gates run
copropagating (two tones on one channel); the two-qubit entangling gate
drives red/blue sideband tones on both ion channels plus the global
beam, so parallel instances exercise shared-channel merging.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, replace

import numpy as np

from . import dds, params, pulses
from .pulses import GateDefinition, Pulse, PulseMetadata, Scalar, Spline


@dataclass(frozen=True)
class CalibrationContext:
    """Tunable globals folded into the gate cache's generation check."""

    carrier_hz: float = 200e6
    rabi_amp: float = 0.8
    sq_cycles: int = 4096         # ~10 us single-qubit time
    rz_cycles: int = 8            # ~20 ns virtual-Z write
    ms_cycles: int = 16384        # desk-scale two-qubit time
    ms_detuning_hz: float = 2e5
    ms_envelope_knots: int = 8
    prepare_cycles: int = 2048
    measure_cycles: int = 2048
    stark_scale: float = 0.0      # rad per unit integrated intensity
    global_channel: int = params.CHANNELS - 1
    shaped_knots: int = 20
    shaped_mutation_id: int | None = None

    @property
    def token(self) -> int:
        # stable across processes, unlike hash() on strings
        return zlib.crc32(repr(sorted(self.__dict__.items())).encode())

    def tweak(self, **kw) -> "CalibrationContext":
        return replace(self, **kw)


def _qubit(args, i=0) -> int:
    return int(args[i])


def _sq_metadata():
    return PulseMetadata(sync_flag=True, frame_apply_mask=0b11)


def prepare_all(args, ctx) -> GateDefinition:
    return GateDefinition(
        "prepare_all",
        args,
        [pulses.nop(ch, cycles=ctx.prepare_cycles) for ch in range(params.CHANNELS)],
    )


def measure_all(args, ctx) -> GateDefinition:
    return GateDefinition(
        "measure_all",
        args,
        [pulses.nop(ch, cycles=ctx.measure_cycles) for ch in range(params.CHANNELS)],
    )


def _single_qubit(name, args, ctx, phase):
    q = _qubit(args)
    p = Pulse(
        q,
        ctx.sq_cycles,
        {
            (params.AMP, 0): Scalar(ctx.rabi_amp),
            (params.AMP, 1): Scalar(ctx.rabi_amp),
            (params.FRQ, 0): Scalar(ctx.carrier_hz),
            (params.FRQ, 1): Scalar(ctx.carrier_hz),
            (params.PHS, 0): Scalar(phase),
            (params.PHS, 1): Scalar(0.0),
        },
        _sq_metadata(),
    )
    return GateDefinition(name, args, [p])


def sx(args, ctx):
    return _single_qubit("Sx", args, ctx, 0.0)


def sy(args, ctx):
    return _single_qubit("Sy", args, ctx, math.pi / 2)


def rot(args, ctx):
    """R q phase: single-qubit rotation about an equatorial axis."""
    phase = float(args[1]) if len(args) > 1 else 0.0
    return _single_qubit("R", args, ctx, phase)


def wrap_phase(theta: float) -> float:
    """Map to (-pi, pi] so the frame-ramp mantissa always fits."""
    wrapped = math.remainder(theta, 2 * math.pi)
    return wrapped if wrapped != -math.pi else math.pi


def rz(args, ctx) -> GateDefinition:
    """Virtual Z: a minimum-length frame-rotation ramp, no output drive."""
    q = _qubit(args)
    theta = wrap_phase(float(args[1]))
    p = Pulse(
        q,
        ctx.rz_cycles,
        {(params.FRM, 0): Spline([0.0, theta])},
    )
    return GateDefinition("Rz", args, [p])


def _ms_envelope(ctx):
    # smooth turn-on/turn-off, peak at the calibrated drive amplitude
    k = np.sin(np.linspace(0.0, math.pi, ctx.ms_envelope_knots)) * ctx.rabi_amp
    return Spline(k)


def ms(args, ctx) -> GateDefinition:
    """Two-qubit entangling gate: sidebands on both ions, carrier on the
    global beam, with optional frame ramps compensating the light shift."""
    q0, q1 = _qubit(args, 0), _qubit(args, 1)
    envelope = _ms_envelope(ctx)
    ion_pulses = []
    for q in (q0, q1):
        slots = {
            (params.AMP, 0): envelope,
            (params.AMP, 1): envelope,
            (params.FRQ, 0): Scalar(ctx.carrier_hz + ctx.ms_detuning_hz),
            (params.FRQ, 1): Scalar(ctx.carrier_hz - ctx.ms_detuning_hz),
        }
        if ctx.stark_scale:
            profile = dds.tone_product(envelope.knots, envelope.knots)
            duration_s = ctx.ms_cycles / params.CLOCK_HZ
            slots[(params.FRM, 0)] = dds.stark_frame_from_amplitude(
                profile, ctx.stark_scale, duration_s
            )
        ion_pulses.append(Pulse(q, ctx.ms_cycles, slots, _sq_metadata()))
    global_pulse = Pulse(
        ctx.global_channel,
        ctx.ms_cycles,
        {
            (params.AMP, 0): Scalar(ctx.rabi_amp),
            (params.FRQ, 0): Scalar(ctx.carrier_hz),
        },
        _sq_metadata(),
    )
    return GateDefinition("MS", args, [*ion_pulses, global_pulse])


def shaped(args, ctx) -> GateDefinition:
    """Knot-programmable amplitude-shaped gate; the class shares a
    mutation id so calibration updates patch every member at once."""
    q = _qubit(args)
    n = int(args[1]) if len(args) > 1 else ctx.shaped_knots
    phase = float(args[2]) if len(args) > 2 else 0.0
    x = np.linspace(0.0, math.pi, max(n, 2))
    knots = np.sin(x) * ctx.rabi_amp
    cycles = max(params.MIN_PULSE_CYCLES * (max(n, 2) - 1), ctx.sq_cycles)
    p = Pulse(
        q,
        cycles,
        {
            (params.AMP, 0): Spline(knots),
            (params.FRQ, 0): Scalar(ctx.carrier_hz),
            (params.PHS, 0): Scalar(phase),
        },
        _sq_metadata(),
        mutation_id=ctx.shaped_mutation_id,
    )
    return GateDefinition("shaped", args, [p])


def idle(args, ctx) -> GateDefinition:
    """Explicit wait: NOP of N cycles on one channel."""
    q = _qubit(args)
    n = int(args[1]) if len(args) > 1 else ctx.sq_cycles
    return GateDefinition("idle", args, [pulses.nop(q, cycles=n)])


STANDARD_BUILDERS = {
    "prepare_all": prepare_all,
    "measure_all": measure_all,
    "Sx": sx,
    "Sy": sy,
    "R": rot,
    "Rz": rz,
    "MS": ms,
    "shaped": shaped,
    "idle": idle,
}


def standard_registry() -> dict:
    return dict(STANDARD_BUILDERS)
