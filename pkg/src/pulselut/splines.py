"""Cubic-spline fitting and fixed-point forward-difference coefficients.

Knot lists are fit with natural cubic splines (zero second derivative at
both ends). Each cubic segment p(tau) = a + b*tau + c*tau^2 + d*tau^3 on
tau in [0, 1] is transformed so an adder-only engine reproduces it: with
h = 1/N the per-cycle update

    emit u0; u0 += u1; u1 += u2; u2 += u3

yields p(k*h) exactly at cycle k (in exact arithmetic).

Quantization targets the hardware word format: a 40-bit starting value in
output-LSB units, and a 40-bit mantissa with its own 6-bit left-shift for
each of u1..u3 (a shared shift would let the cubic term's quantum inherit
the linear term's magnitude, and its error amplifies by N^3/6). Internal
accumulation carries 56 extra fractional bits (96-bit arithmetic) so that
same amplification keeps the ideal-rounding error below an output LSB out
to 1e5-cycle segments; outputs are truncated to the top 40 bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import params
from .errors import AccumulatorOverflow, RangeOverflow, TooFewKnots
from .kernels import backend


@dataclass(frozen=True)
class CubicSegment:
    a: float
    b: float
    c: float
    d: float
    cycles: int


@dataclass(frozen=True)
class FdCoefficients:
    """Forward-difference coefficients plus the segment duration.

    Pre-quantization instances hold real-valued u0..u3 (kind is None).
    Quantized instances hold exact integers in internal units (output LSB
    scaled by 2**FRAC_BITS), already snapped to the mantissa/shift grid
    so that encoding to a word and back is lossless.
    """

    u0: float | int | Fraction
    u1: float | int | Fraction
    u2: float | int | Fraction
    u3: float | int | Fraction
    cycles: int
    kind: int | None = None
    shifts: tuple[int, int, int] = (0, 0, 0)

    def word_fields(self):
        """(u0_word, m1, m2, m3, shifts) as stored in a pulselet word."""
        if self.kind is None:
            raise ValueError("word_fields requires quantized coefficients")
        u0w = _u0_to_word(self.u0 >> params.FRAC_BITS, self.kind)
        s1, s2, s3 = self.shifts
        return (u0w, self.u1 >> s1, self.u2 >> s2, self.u3 >> s3, self.shifts)


# -- output scaling ------------------------------------------------------

def output_lsb(kind: int) -> float:
    """Physical value of one output LSB for a parameter kind."""
    if kind == params.FRQ:
        return params.FREQ_FULL_SCALE_HZ / (1 << 40)
    if kind in (params.PHS, params.FRM):
        return 2.0 * math.pi / (1 << 40)
    if kind == params.AMP:
        return 1.0 / params.AMP_FULL_SCALE
    raise ValueError(f"unknown parameter kind {kind}")


def _u0_to_word(value: int, kind: int) -> int:
    """Map an integer output-LSB value onto its 40-bit field pattern."""
    if kind in (params.PHS, params.FRM):
        return value % (1 << 40)
    if kind == params.AMP:
        return value & 0xFFFF
    return value


# -- natural cubic fit ---------------------------------------------------

def fit_natural_cubic(knots, segment_cycles=None) -> list[CubicSegment]:
    """Fit a natural cubic spline through equally spaced knots.

    Returns K-1 segments, each parameterized on tau in [0, 1]. If
    segment_cycles is given it must have K-1 entries; otherwise every
    segment gets the minimum pulse length.
    """
    knots = list(knots)
    n = len(knots)
    if n < 2:
        raise TooFewKnots(f"need at least 2 knots, got {n}")
    if segment_cycles is None:
        segment_cycles = [params.MIN_PULSE_CYCLES] * (n - 1)
    if len(segment_cycles) != n - 1:
        raise ValueError("segment_cycles must have one entry per segment")
    y = np.asarray(knots, dtype=np.float64)
    m = second_derivatives(y)
    segs = []
    for i in range(n - 1):
        a = y[i]
        c = m[i] / 2.0
        d = (m[i + 1] - m[i]) / 6.0
        b = (y[i + 1] - y[i]) - m[i] / 3.0 - m[i + 1] / 6.0
        segs.append(CubicSegment(float(a), float(b), float(c), float(d), int(segment_cycles[i])))
    return segs


def second_derivatives(y: np.ndarray) -> np.ndarray:
    """Solve the natural-spline tridiagonal system M[i-1]+4M[i]+M[i+1]=6*d2y."""
    n = len(y)
    m = np.zeros(n, dtype=np.float64)
    if n <= 2:
        return m
    rhs = 6.0 * (y[2:] - 2.0 * y[1:-1] + y[:-2])
    k = n - 2
    # Thomas algorithm on the constant tridiagonal (1, 4, 1).
    cp = np.empty(k)
    dp = np.empty(k)
    cp[0] = 1.0 / 4.0
    dp[0] = rhs[0] / 4.0
    for i in range(1, k):
        denom = 4.0 - cp[i - 1]
        cp[i] = 1.0 / denom
        dp[i] = (rhs[i] - dp[i - 1]) / denom
    m[k] = dp[k - 1]
    for i in range(k - 1, 0, -1):
        m[i] = dp[i - 1] - cp[i - 1] * m[i + 1]
    return m


# -- forward differences -------------------------------------------------

def to_forward_difference(seg: CubicSegment) -> FdCoefficients:
    """Transform one cubic segment into adder-only update coefficients.

    Works over floats and exact Fractions alike; the duration rides along
    as the fifth parameter because the transform bakes in h = 1/N.
    """
    n = seg.cycles
    if n < 1:
        raise ValueError("segment needs at least one cycle")
    if any(isinstance(v, Fraction) for v in (seg.a, seg.b, seg.c, seg.d)):
        h = Fraction(1, n)
    else:
        h = 1.0 / n
    h2 = h * h
    h3 = h2 * h
    u1 = seg.b * h + seg.c * h2 + seg.d * h3
    u2 = 2 * seg.c * h2 + 6 * seg.d * h3
    u3 = 6 * seg.d * h3
    return FdCoefficients(seg.a, u1, u2, u3, n)


def forward_difference_arrays(a, b, c, d, cycles):
    """Vectorized to_forward_difference over segment coefficient arrays."""
    n = np.asarray(cycles, dtype=np.float64)
    h = 1.0 / n
    h2 = h * h
    h3 = h2 * h
    u1 = b * h + c * h2 + d * h3
    u2 = 2.0 * c * h2 + 6.0 * d * h3
    u3 = 6.0 * d * h3
    return a, u1, u2, u3


# -- quantization --------------------------------------------------------

def round_half_away(x: float) -> int:
    if x >= 0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))


def _quantize_u0(value: float, kind: int) -> int:
    """Starting value in output-LSB units, range-checked per kind."""
    word = round_half_away(value / output_lsb(kind))
    if kind == params.FRQ:
        if word < 0:
            raise RangeOverflow(f"negative frequency {value!r} Hz", value)
        if word > params.MASK40:
            raise RangeOverflow(f"frequency {value!r} Hz above full scale", value)
    elif kind == params.AMP:
        if abs(word) > params.AMP_FULL_SCALE:
            raise RangeOverflow(f"amplitude {value!r} outside -1..1", value)
    else:
        word %= 1 << 40
    return word


def _snap_mantissa(ideal: int, kind: int):
    """Round one ideal internal coefficient onto the mantissa/shift grid."""
    shift = max(0, _signed_bit_length(ideal) - params.MANTISSA_BITS)
    while True:
        if shift > params.MAX_SHIFT:
            raise RangeOverflow(
                f"coefficient slope too steep for {params.PARAM_NAMES[kind]} word format",
                ideal,
            )
        m = round_half_away(ideal / (1 << shift)) if shift else ideal
        if -(1 << 39) <= m < (1 << 39):
            return m, shift
        shift += 1


def _signed_bit_length(value: int) -> int:
    # bits needed in two's complement, sign included
    if value < 0:
        return (-value - 1).bit_length() + 1
    return value.bit_length() + 1


def quantize(fd: FdCoefficients, kind: int) -> FdCoefficients:
    """Snap real-valued coefficients onto the hardware grid.

    u0 becomes a 40-bit output-LSB value (held internally with zeroed
    fraction bits); u1..u3 become 40-bit mantissas, each with its own
    shift, so slow and steep ramps both quantize to sub-LSB accuracy.
    """
    lsb = output_lsb(kind)
    scale = float(1 << params.FRAC_BITS) / lsb
    u0w = _quantize_u0(float(fd.u0), kind)
    mants = []
    shifts = []
    for u in (fd.u1, fd.u2, fd.u3):
        m, s = _snap_mantissa(round_half_away(float(u) * scale), kind)
        mants.append(m)
        shifts.append(s)
    u1, u2, u3 = (m << s for m, s in zip(mants, shifts))
    return FdCoefficients(
        u0w << params.FRAC_BITS, u1, u2, u3, fd.cycles, kind=kind, shifts=tuple(shifts)
    )


def _word_to_signed_u0(word: int, kind: int) -> int:
    if kind == params.AMP:
        return word - 0x10000 if word & 0x8000 else word
    return word


def from_word_fields(u0_word, m1, m2, m3, shifts, cycles, kind) -> FdCoefficients:
    """Rebuild quantized coefficients from stored word fields."""
    u0 = _word_to_signed_u0(u0_word, kind)
    s1, s2, s3 = shifts
    return FdCoefficients(
        u0 << params.FRAC_BITS,
        m1 << s1,
        m2 << s2,
        m3 << s3,
        cycles,
        kind=kind,
        shifts=(s1, s2, s3),
    )


def quantize_scalar(value: float, kind: int, cycles: int) -> FdCoefficients:
    """Quantized constant-value coefficients (discrete steps, scalars)."""
    return quantize(FdCoefficients(value, 0.0, 0.0, 0.0, cycles), kind)


def _half_away_vec(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, np.floor(x + 0.5), -np.floor(-x + 0.5))


def _snap_mantissa_vec(ideal: np.ndarray, kind: int):
    """Vectorized _snap_mantissa; bit-identical to the scalar path."""
    mfrac, exp = np.frexp(np.abs(ideal))
    neg_pow2 = (ideal < 0) & (mfrac == 0.5)
    sbl = np.where(ideal == 0, 1, exp + 1 - neg_pow2)
    shift = np.maximum(sbl - params.MANTISSA_BITS, 0)
    mant = _half_away_vec(ideal / np.exp2(shift))
    bump = mant == float(1 << 39)  # rounding crossed the positive edge
    if bump.any():
        shift = np.where(bump, shift + 1, shift)
        mant = np.where(bump, _half_away_vec(ideal / np.exp2(shift)), mant)
    if (shift > params.MAX_SHIFT).any():
        raise RangeOverflow(
            f"coefficient slope too steep for {params.PARAM_NAMES[kind]} word format",
            float(ideal[np.argmax(shift)]),
        )
    return mant.astype(np.int64), shift.astype(np.uint8)


def quantize_fd_arrays(u0, u1, u2, u3, kind: int):
    """Vectorized quantize over parallel real-valued coefficient arrays.

    Returns word-field columns (u0_field u64, m1..m3 i64, s1..s3 u8).
    """
    lsb = output_lsb(kind)
    scale = float(1 << params.FRAC_BITS) / lsb
    w0 = _half_away_vec(np.asarray(u0, dtype=np.float64) / lsb)
    if kind == params.FRQ:
        if (w0 < 0).any():
            raise RangeOverflow("negative frequency", float(w0.min()))
        if (w0 > params.MASK40).any():
            raise RangeOverflow("frequency above full scale", float(w0.max()))
        field0 = w0.astype(np.uint64)
    elif kind == params.AMP:
        if (np.abs(w0) > params.AMP_FULL_SCALE).any():
            raise RangeOverflow("amplitude outside -1..1", float(np.abs(w0).max()))
        field0 = (w0.astype(np.int64) & 0xFFFF).astype(np.uint64)
    else:
        if (np.abs(w0) >= float(1 << 62)).any():
            raise RangeOverflow("phase value too large to quantize", float(np.abs(w0).max()))
        field0 = np.mod(w0.astype(np.int64), 1 << 40).astype(np.uint64)
    m1, s1 = _snap_mantissa_vec(_half_away_vec(np.asarray(u1, dtype=np.float64) * scale), kind)
    m2, s2 = _snap_mantissa_vec(_half_away_vec(np.asarray(u2, dtype=np.float64) * scale), kind)
    m3, s3 = _snap_mantissa_vec(_half_away_vec(np.asarray(u3, dtype=np.float64) * scale), kind)
    return field0, m1, m2, m3, s1, s2, s3


# -- interpolation -------------------------------------------------------

def interpolate(fd: FdCoefficients) -> np.ndarray:
    """Run the adder-only engine; one 40-bit output word per cycle.

    Phase-like kinds wrap modulo a full turn; frequency and amplitude
    raise AccumulatorOverflow if the output ever leaves its range.
    """
    if fd.kind is None:
        raise ValueError("interpolate requires quantized coefficients")
    out = np.empty(fd.cycles, dtype=np.uint64)
    status = backend.interpolate_fd(
        fd.kind, int(fd.u0), int(fd.u1), int(fd.u2), int(fd.u3), fd.cycles, out
    )
    if status >= 0:
        raise AccumulatorOverflow(
            f"{params.PARAM_NAMES[fd.kind]} accumulator left its range at cycle {status}"
        )
    return out


def polynomial_trajectory(seg: CubicSegment) -> np.ndarray:
    """p(k/N) for k = 0..N-1 in physical units."""
    tau = np.arange(seg.cycles, dtype=np.float64) / float(seg.cycles)
    return seg.a + tau * (seg.b + tau * (seg.c + tau * seg.d))
