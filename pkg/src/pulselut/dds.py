"""Dual-tone DDS phase bookkeeping.

Each channel has two tones; each tone has a free-running 40-bit phase
accumulator that advances by the frequency word every cycle. A
sync-flagged pulse reloads the accumulator from the global cycle counter
times the frequency word, which makes the tone phase-continuous with a
never-interrupted oscillator at that frequency (and, because the counter
is shared, synchronization across channels is automatic).

Each channel also has one persistent frame accumulator (virtual-Z
memory). Frame words contribute their interpolated trajectory relative
to its own start, at full internal precision; the readout is the top 40
bits. Per pulse, the frame can be applied to either tone, optionally
inverted, and optionally only after the pulse ends.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import params, pulses

MASK40 = params.MASK40


def sync_phase(counter: int, ftw: int) -> int:
    """Phase of an uninterrupted oscillator at ftw after counter cycles."""
    return (int(counter) * int(ftw)) & MASK40


def effective_phase(phase_acc: int, nominal: int, frame: int,
                    apply_frame: bool, invert_frame: bool) -> int:
    """Eq-of-motion phase argument for one tone at one cycle."""
    m = 0 if not apply_frame else (-1 if invert_frame else 1)
    return (phase_acc + nominal + m * frame) & MASK40


@dataclass
class DdsState:
    """Per-channel accumulators; persists across pulses and circuits."""

    phase_acc: np.ndarray = field(
        default_factory=lambda: np.zeros((params.CHANNELS, params.TONES), dtype=np.uint64)
    )
    # frame accumulators carry full internal precision; readout is top 40
    frame_int: list = field(default_factory=lambda: [0] * params.CHANNELS)

    def frame_readout(self, channel: int) -> int:
        return (self.frame_int[channel] >> params.FRAC_BITS) & MASK40


def apply_frame_word(state: DdsState, channel: int, fd, at_end: bool = False):
    """Feed one frame-rotation word into a channel's accumulator.

    The word's adder increments accumulate at full internal precision
    (its absolute starting value cancels out), so after cycles updates
    the accumulator has advanced by exactly p(1) - p(0). Returns
    (readout_per_cycle, applied_per_cycle): the second stream is what
    phase composition uses, frozen at the pre-word value when the
    apply-at-end flag is set.
    """
    from . import splines  # local import: splines pulls in the kernels

    base = state.frame_int[channel]
    n = fd.cycles
    if fd.u1 == 0 and fd.u2 == 0 and fd.u3 == 0:
        vals = np.full(n, (base >> params.FRAC_BITS) & MASK40, dtype=np.uint64)
    else:
        shifted = splines.FdCoefficients(
            base, fd.u1, fd.u2, fd.u3, n, kind=params.FRM
        )
        vals = splines.interpolate(shifted)
    if at_end:
        applied = np.full(n, (base >> params.FRAC_BITS) & MASK40, dtype=np.uint64)
    else:
        applied = vals
    delta = (
        fd.u1 * n
        + fd.u2 * (n * (n - 1) // 2)
        + fd.u3 * (n * (n - 1) * (n - 2) // 6)
    )
    state.frame_int[channel] = (base + delta) & params.MASK_ACC
    return vals, applied


def accumulate_phase(acc0: int, ftw_values: np.ndarray) -> np.ndarray:
    """Phase trace: out[t] = acc0 + sum(ftw[:t]) mod 2**40.

    The value at index t is the accumulator *used* at cycle t; the
    increment by ftw[t] lands on the next cycle.
    """
    n = len(ftw_values)
    out = np.empty(n, dtype=np.uint64)
    if n == 0:
        return out
    acc = int(acc0) & MASK40
    # chunked cumsum: 40-bit values sum without uint64 overflow for 2**24 terms
    chunk = 1 << 22
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        c = np.cumsum(ftw_values[lo:hi], dtype=np.uint64)
        out[lo] = acc
        if hi - lo > 1:
            out[lo + 1 : hi] = (acc + c[:-1]) & np.uint64(MASK40)
        acc = int((acc + int(c[-1])) & MASK40)
    return out


def phase_trace(ftw_values: np.ndarray, sync_cycles, acc0: int = 0,
                counter_base: int = 0) -> np.ndarray:
    """Per-cycle phase accumulator over a frequency-word stream with sync
    reloads at the given cycle indices (global counter = counter_base + t)."""
    n = len(ftw_values)
    out = np.empty(n, dtype=np.uint64)
    marks = sorted(set(int(c) for c in sync_cycles if 0 <= int(c) < n))
    edges = [0] + marks + [n]
    acc = int(acc0)
    for i, start in enumerate(edges[:-1]):
        stop = edges[i + 1]
        if start in marks:
            acc = sync_phase(counter_base + start, int(ftw_values[start]))
        seg = accumulate_phase(acc, ftw_values[start:stop])
        out[start:stop] = seg
        if stop > start:
            acc = int((int(seg[-1]) + int(ftw_values[stop - 1])) & MASK40)
    return out


def stark_frame_from_amplitude(amp_knots, scale: float, duration: float) -> pulses.Spline:
    """Frame-ramp knots compensating an amplitude-dependent level shift.

    The knot values are the cumulative trapezoidal integral of the
    amplitude profile (already the tone product for two-tone drives)
    scaled into radians; a constant profile yields a linear ramp.
    """
    y = np.asarray(amp_knots, dtype=np.float64)
    if y.ndim != 1 or len(y) < 1:
        raise ValueError("need a 1-D amplitude profile")
    if len(y) == 1:
        y = np.repeat(y, 2)
    dt = float(duration) / (len(y) - 1)
    steps = 0.5 * (y[1:] + y[:-1]) * dt
    ramp = np.concatenate([[0.0], np.cumsum(steps)]) * float(scale)
    return pulses.Spline(ramp)


def tone_product(profile0, profile1) -> np.ndarray:
    """Pointwise product of two tone amplitude profiles (intensity proxy)."""
    a = np.asarray(profile0, dtype=np.float64)
    b = np.asarray(profile1, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("tone profiles must share knot counts")
    return a * b
