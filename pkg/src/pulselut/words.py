"""Pulselet words: the 256-bit atomic unit of the streaming pipeline.

Streaming layout (LSB first):
    [0:40)    u0 field (starting value in output-LSB units)
    [40:80)   u1 mantissa (40-bit two's complement)
    [80:120)  u2 mantissa
    [120:160) u3 mantissa
    [160:200) duration in clock cycles
    [200:203) channel        [203:205) parameter    [205] tone
    [206] wait_trigger       [207] sync
    [208] feedforward        [209:211) frame apply mask
    [211:213) frame invert mask                  [213] frame apply-at-end
    [214:220) u1 shift       [220:226) u2 shift  [226:232) u3 shift
    [232:256) reserved (zero)

Stored (LUT) form keeps the 200-bit payload plus the replicated flags and
shifts; channel is implied by the per-channel table and wait/sync are
sequence-position dependent, carried out of band per gate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import params, pulses, splines

# flags byte layout (shared by streams and stored metadata)
FLAG_FF = 1 << 0
FLAG_APPLY_SHIFT = 1
FLAG_INVERT_SHIFT = 3
FLAG_AT_END = 1 << 5

WORD_DTYPE = np.dtype(
    [
        ("u0", "<u8"),
        ("m1", "<i8"),
        ("m2", "<i8"),
        ("m3", "<i8"),
        ("dur", "<u8"),
        ("s1", "u1"),
        ("s2", "u1"),
        ("s3", "u1"),
        ("flags", "u1"),
        ("par", "u1"),
        ("ton", "u1"),
        ("mid", "<i4"),  # mutation id (-1 untagged); intern identity, not stored bits
    ]
)

_M40 = params.MASK40


def flags_byte(md: pulses.PulseMetadata) -> int:
    return (
        (FLAG_FF if md.feedforward_enable else 0)
        | (md.frame_apply_mask << FLAG_APPLY_SHIFT)
        | (md.frame_invert_mask << FLAG_INVERT_SHIFT)
        | (FLAG_AT_END if md.frame_apply_at_end else 0)
    )


def _tc40(value: int) -> int:
    return value & _M40


def _untc40(field: int) -> int:
    return field - (1 << 40) if field & (1 << 39) else field


def pack_streaming(row, channel: int, wait: bool, sync: bool) -> int:
    """One WORD_DTYPE record to its 256-bit streaming integer."""
    word = int(row["u0"]) & _M40
    word |= _tc40(int(row["m1"])) << 40
    word |= _tc40(int(row["m2"])) << 80
    word |= _tc40(int(row["m3"])) << 120
    word |= (int(row["dur"]) & _M40) << 160
    word |= (channel & 7) << 200
    word |= (int(row["par"]) & 3) << 203
    word |= (int(row["ton"]) & 1) << 205
    word |= (1 if wait else 0) << 206
    word |= (1 if sync else 0) << 207
    flags = int(row["flags"])
    word |= (flags & 1) << 208          # feedforward
    word |= ((flags >> 1) & 0b1111) << 209  # apply + invert masks
    word |= ((flags >> 5) & 1) << 213   # apply-at-end
    word |= (int(row["s1"]) & 0x3F) << 214
    word |= (int(row["s2"]) & 0x3F) << 220
    word |= (int(row["s3"]) & 0x3F) << 226
    return word


def unpack_streaming(word: int):
    """256-bit integer to (record, channel, wait, sync)."""
    row = np.zeros((), dtype=WORD_DTYPE)
    row["u0"] = word & _M40
    row["m1"] = _untc40((word >> 40) & _M40)
    row["m2"] = _untc40((word >> 80) & _M40)
    row["m3"] = _untc40((word >> 120) & _M40)
    row["dur"] = (word >> 160) & _M40
    channel = (word >> 200) & 7
    row["par"] = (word >> 203) & 3
    row["ton"] = (word >> 205) & 1
    wait = bool((word >> 206) & 1)
    sync = bool((word >> 207) & 1)
    flags = (word >> 208) & 1
    flags |= ((word >> 209) & 0b1111) << 1
    flags |= ((word >> 213) & 1) << 5
    row["flags"] = flags
    row["s1"] = (word >> 214) & 0x3F
    row["s2"] = (word >> 220) & 0x3F
    row["s3"] = (word >> 226) & 0x3F
    row["mid"] = -1
    return row, channel, wait, sync


def stored_bits(row) -> int:
    """232-bit stored form: payload plus retained metadata."""
    word = int(row["u0"]) & _M40
    word |= _tc40(int(row["m1"])) << 40
    word |= _tc40(int(row["m2"])) << 80
    word |= _tc40(int(row["m3"])) << 120
    word |= (int(row["dur"]) & _M40) << 160
    word |= (int(row["par"]) & 3) << 200
    word |= (int(row["ton"]) & 1) << 202
    word |= (int(row["flags"]) & 0x3F) << 203
    word |= (int(row["s1"]) & 0x3F) << 209
    word |= (int(row["s2"]) & 0x3F) << 215
    word |= (int(row["s3"]) & 0x3F) << 221
    return word


def from_stored_bits(bits: int, mid: int = -1):
    row = np.zeros((), dtype=WORD_DTYPE)
    row["u0"] = bits & _M40
    row["m1"] = _untc40((bits >> 40) & _M40)
    row["m2"] = _untc40((bits >> 80) & _M40)
    row["m3"] = _untc40((bits >> 120) & _M40)
    row["dur"] = (bits >> 160) & _M40
    row["par"] = (bits >> 200) & 3
    row["ton"] = (bits >> 202) & 1
    row["flags"] = (bits >> 203) & 0x3F
    row["s1"] = (bits >> 209) & 0x3F
    row["s2"] = (bits >> 215) & 0x3F
    row["s3"] = (bits >> 221) & 0x3F
    row["mid"] = mid
    return row


def coefficients(row, kind: int) -> splines.FdCoefficients:
    """Word fields to runnable quantized coefficients."""
    return splines.from_word_fields(
        int(row["u0"]),
        int(row["m1"]),
        int(row["m2"]),
        int(row["m3"]),
        (int(row["s1"]), int(row["s2"]), int(row["s3"])),
        int(row["dur"]),
        kind,
    )


# -- slot streams ---------------------------------------------------------

@dataclass
class SlotStream:
    """Ordered word list for one (parameter, tone) engine, with per-word
    sequence flags (pulse starts carry sync/wait; all are out-of-band
    relative to the stored words)."""

    words: np.ndarray
    pulse_start: np.ndarray
    sync: np.ndarray
    wait: np.ndarray

    @classmethod
    def empty(cls):
        return cls(
            np.empty(0, dtype=WORD_DTYPE),
            np.empty(0, dtype=bool),
            np.empty(0, dtype=bool),
            np.empty(0, dtype=bool),
        )

    def __len__(self):
        return len(self.words)

    @property
    def cycles(self) -> int:
        return int(self.words["dur"].sum())

    def concat(self, other: "SlotStream") -> "SlotStream":
        return SlotStream(
            np.concatenate([self.words, other.words]),
            np.concatenate([self.pulse_start, other.pulse_start]),
            np.concatenate([self.sync, other.sync]),
            np.concatenate([self.wait, other.wait]),
        )

    def equals(self, other: "SlotStream") -> bool:
        return len(self) == len(other) and self.prefix_of(other)

    def prefix_of(self, other: "SlotStream") -> bool:
        n = len(self)
        if n > len(other):
            return False
        return (
            bool(np.array_equal(self.words, other.words[:n]))
            and bool(np.array_equal(self.pulse_start, other.pulse_start[:n]))
            and bool(np.array_equal(self.sync, other.sync[:n]))
            and bool(np.array_equal(self.wait, other.wait[:n]))
        )

    def first_difference(self, other: "SlotStream") -> int:
        n = min(len(self), len(other))
        neq = self.words[:n] != other.words[:n]
        idx = np.nonzero(
            neq
            | (self.pulse_start[:n] != other.pulse_start[:n])
            | (self.sync[:n] != other.sync[:n])
            | (self.wait[:n] != other.wait[:n])
        )[0]
        return int(idx[0]) if len(idx) else n


def pulse_slot_stream(p: pulses.Pulse, param: int, tone: int) -> SlotStream:
    """Flatten and quantize one pulse slot into its word stream."""
    node = p.slot(param, tone)
    if isinstance(node, pulses.Scalar):
        # scalar slots dominate real gates; skip the array machinery
        rows = np.zeros(1, dtype=WORD_DTYPE)
        rows[0]["u0"] = _u0_field_scalar(float(node.value), param)
        rows[0]["dur"] = p.cycles
        _finish_rows(rows, p, param, tone)
        return SlotStream(*_pulse_flags(p, 1, rows))
    segs = pulses.flatten(node, p.cycles)
    n = len(segs)
    a = np.fromiter((s.a for s in segs), dtype=np.float64, count=n)
    b = np.fromiter((s.b for s in segs), dtype=np.float64, count=n)
    c = np.fromiter((s.c for s in segs), dtype=np.float64, count=n)
    d = np.fromiter((s.d for s in segs), dtype=np.float64, count=n)
    cyc = np.fromiter((s.cycles for s in segs), dtype=np.int64, count=n)
    u0, u1, u2, u3 = splines.forward_difference_arrays(a, b, c, d, cyc)
    f0, m1, m2, m3, s1, s2, s3 = splines.quantize_fd_arrays(u0, u1, u2, u3, param)
    rows = np.zeros(n, dtype=WORD_DTYPE)
    rows["u0"] = f0
    rows["m1"] = m1
    rows["m2"] = m2
    rows["m3"] = m3
    rows["dur"] = cyc.astype(np.uint64)
    rows["s1"] = s1
    rows["s2"] = s2
    rows["s3"] = s3
    _finish_rows(rows, p, param, tone)
    return SlotStream(*_pulse_flags(p, n, rows))


def _u0_field_scalar(value: float, kind: int) -> int:
    word = splines._quantize_u0(value, kind)
    if kind == params.AMP:
        return word & 0xFFFF
    return word


def _finish_rows(rows, p, param, tone):
    rows["flags"] = flags_byte(p.metadata)
    rows["par"] = param
    rows["ton"] = tone
    rows["mid"] = -1 if p.mutation_id is None else p.mutation_id


def _pulse_flags(p, n, rows):
    start = np.zeros(n, dtype=bool)
    start[0] = True
    sync = np.zeros(n, dtype=bool)
    sync[0] = p.metadata.sync_flag
    wait = np.zeros(n, dtype=bool)
    wait[0] = p.metadata.wait_trigger
    return rows, start, sync, wait


def channel_streams(pulse_list) -> list[SlotStream]:
    """Back-to-back pulses on one channel to 8 per-slot word streams."""
    out = []
    for param in range(params.PARAMS):
        for tone in range(params.TONES):
            parts = [pulse_slot_stream(p, param, tone) for p in pulse_list]
            stream = parts[0] if parts else SlotStream.empty()
            for more in parts[1:]:
                stream = stream.concat(more)
            out.append(stream)
    return out
