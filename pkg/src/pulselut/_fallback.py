"""Pure-Python kernels, selected when the compiled extension is absent.

Bit-for-bit identical to _speedups; the arithmetic is exact Python
integers, so these double as the reference the extension is tested
against.
"""
from __future__ import annotations

import numpy as np

from . import params

NAME = "pure"

_MASK40 = params.MASK40
_MASK_ACC = params.MASK_ACC
_FRAC = params.FRAC_BITS
_PACKET_ADDRS = params.PACKET_ADDRS


def interpolate_fd(kind, u0, u1, u2, u3, cycles, out):
    """Adder-only interpolation of one coefficient word.

    Writes one 40-bit output word per cycle into out (uint64). Returns -1
    on success or the first cycle index whose output left the kind's
    range (FRQ must stay unsigned 40-bit, AMP within signed 16-bit).
    """
    wraps = kind in (params.PHS, params.FRM)
    if wraps:
        u0 &= _MASK_ACC
    for k in range(cycles):
        val = u0 >> _FRAC
        if wraps:
            out[k] = val & _MASK40
        elif kind == params.FRQ:
            if val < 0 or val > _MASK40:
                return k
            out[k] = val
        else:  # AMP: signed 16-bit payload in the low bits of the field
            if val < -32768 or val > 32767:
                return k
            out[k] = val & 0xFFFF
        u0 += u1
        if wraps:
            u0 &= _MASK_ACC
        u1 += u2
        u2 += u3
    return -1


def pack_packets(ids, kinds, counts, out):
    """Pack 11-bit addresses into 256-bit packets.

    ids is a flat uint16 array of n_packets * PACKET_ADDRS entries (zero
    padded); kinds/counts are per-packet uint8 arrays; out receives
    n_packets * 32 bytes. Repeated packets (loop-heavy circuits) are
    encoded once and broadcast.
    """
    n = len(kinds)
    if n == 0:
        return
    rows = ids.reshape(n, _PACKET_ADDRS)
    tagged = np.concatenate(
        [rows, kinds.reshape(n, 1).astype(np.uint16), counts.reshape(n, 1).astype(np.uint16)],
        axis=1,
    )
    uniq, inverse = np.unique(tagged, axis=0, return_inverse=True)
    blobs = np.empty((len(uniq), params.WORD_BYTES), dtype=np.uint8)
    for i, row in enumerate(uniq):
        word = int(row[_PACKET_ADDRS]) | (int(row[_PACKET_ADDRS + 1]) << params.PACKET_KIND_BITS)
        shift = params.PACKET_KIND_BITS + params.PACKET_COUNT_BITS
        for a in row[:_PACKET_ADDRS]:
            word |= int(a) << shift
            shift += params.GLUT_STREAM_ADDR_BITS
        blobs[i] = np.frombuffer(word.to_bytes(params.WORD_BYTES, "little"), dtype=np.uint8)
    out.reshape(n, params.WORD_BYTES)[:] = blobs[inverse]
