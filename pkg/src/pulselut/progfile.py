"""Binary program container and the 256-bit programming-word codec.

Container: magic "OCT8", version, run configuration, a section table,
then 256-bit-aligned sections. Section kinds: programming words (LUT
writes), per-channel sequence bytecode, and out-of-band per-gate flag
rows (pulse starts, sync, wait-trigger).

Programming words carry a 2-bit destination tag and 3-bit channel in
their top bits; the payload layout depends on the destination:

    PLUT  [0:232) stored word        [232:244) PLUT address
    MLUT  [0:228) 19 x 12-bit addrs  [228:242) start  [242:247) count
    GLUT  [0:240) 6 x 40-bit entries (addr 12 | start 14 | stop 14)
                                     [240:243) count
    SEQ   [0:249) raw bytecode packet (used in patch streams)

Bytecode packets: kind (2) | count (5) | up to 22 x 11-bit addresses.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import params, words
from .errors import ProgramFormatError
from .kernels import backend

TAG_PLUT = 0
TAG_MLUT = 1
TAG_GLUT = 2
TAG_SEQ = 3

SECTION_PROG = 0
SECTION_SEQ = 1
SECTION_FLAGS = 2

MLUT_PER_WORD = 19
GLUT_PER_WORD = 6

FLAG_ROW = struct.Struct("<BBHI")  # channel, flagbits, prog_addr, word_index
FLAG_PULSE_START = 1
FLAG_SYNC = 2
FLAG_WAIT = 4

_HEADER = struct.Struct("<4sHBBBB2xI16x")  # magic, version, shift, latency, order, nsec, total_len
_SECTION = struct.Struct("<BB6xQQ8x")


def _word_bytes(value: int) -> bytes:
    return value.to_bytes(params.WORD_BYTES, "little")


def _tagged(tag: int, channel: int, payload: int) -> bytes:
    word = payload
    word |= (channel & 7) << 251
    word |= (tag & 3) << 254
    return _word_bytes(word)


# -- programming words ----------------------------------------------------

def encode_plut_word(channel: int, addr: int, row) -> bytes:
    return _tagged(TAG_PLUT, channel, words.stored_bits(row) | (addr << 232))


def encode_mlut_word(channel: int, start: int, addrs) -> bytes:
    payload = 0
    for i, a in enumerate(addrs):
        payload |= (int(a) & 0xFFF) << (12 * i)
    payload |= (start & 0x3FFF) << 228
    payload |= len(addrs) << 242
    return _tagged(TAG_MLUT, channel, payload)


def encode_glut_word(channel: int, entries) -> bytes:
    payload = 0
    for i, (prog_addr, start, stop) in enumerate(entries):
        item = (prog_addr & 0xFFF) | ((start & 0x3FFF) << 12) | ((stop & 0x3FFF) << 26)
        payload |= item << (40 * i)
    payload |= len(entries) << 240
    return _tagged(TAG_GLUT, channel, payload)


def decode_programming_word(blob: bytes):
    word = int.from_bytes(blob, "little")
    tag = (word >> 254) & 3
    channel = (word >> 251) & 7
    if tag == TAG_PLUT:
        addr = (word >> 232) & 0xFFF
        row = words.from_stored_bits(word & ((1 << 232) - 1))
        return ("plut", channel, addr, row)
    if tag == TAG_MLUT:
        count = (word >> 242) & 0x1F
        start = (word >> 228) & 0x3FFF
        addrs = [(word >> (12 * i)) & 0xFFF for i in range(count)]
        return ("mlut", channel, start, addrs)
    if tag == TAG_GLUT:
        count = (word >> 240) & 0x7
        entries = []
        for i in range(count):
            item = (word >> (40 * i)) & ((1 << 40) - 1)
            entries.append((item & 0xFFF, (item >> 12) & 0x3FFF, (item >> 26) & 0x3FFF))
        return ("glut", channel, entries)
    return ("seq", channel, word & ((1 << 249) - 1))


def encode_luts(lutset) -> bytes:
    """Deterministic full programming stream: by channel, then PLUT,
    MLUT, GLUT, each in ascending address order."""
    out = bytearray()
    for luts in lutset.channels:
        ch = luts.channel
        for addr in range(luts.manager.count):
            out += encode_plut_word(ch, addr, luts.manager.rows[addr])
        for start in range(0, len(luts.mlut), MLUT_PER_WORD):
            chunk = luts.mlut[start : start + MLUT_PER_WORD]
            out += encode_mlut_word(ch, start, chunk)
        entries = [
            (pa, rec.mlut_start, rec.mlut_stop)
            for pa, rec in sorted(luts.glut.items())
        ]
        for i in range(0, len(entries), GLUT_PER_WORD):
            out += encode_glut_word(ch, entries[i : i + GLUT_PER_WORD])
    return bytes(out)


def encode_patch_ops(channel: int, ops) -> bytes:
    """Programming words for a diff_and_patch op list (flags ride in the
    container's flag section, not in programming words)."""
    out = bytearray()
    mlut_run: list = []
    run_start = None

    def flush_run():
        nonlocal mlut_run, run_start
        while mlut_run:
            out.extend(encode_mlut_word(channel, run_start, mlut_run[:MLUT_PER_WORD]))
            run_start += len(mlut_run[:MLUT_PER_WORD])
            mlut_run = mlut_run[MLUT_PER_WORD:]
        run_start = None

    for op in ops:
        kind = op[0]
        if kind == "mlut":
            _, pos, addr = op
            if run_start is not None and pos == run_start + len(mlut_run):
                mlut_run.append(addr)
            else:
                flush_run()
                run_start, mlut_run = pos, [addr]
            continue
        flush_run()
        if kind == "plut":
            _, addr, row = op
            out += encode_plut_word(channel, addr, row)
        elif kind == "glut":
            _, prog_addr, start, stop = op
            out += encode_glut_word(channel, [(prog_addr, start, stop)])
    flush_run()
    return bytes(out)


# -- bytecode --------------------------------------------------------------

def encode_bytecode(ids, kind: int = params.PACKET_NORMAL) -> bytes:
    """Pack a gate-id run into 256-bit packets.

    A branch run gets one leading branch packet; overflow packets are
    marked as continuations. Normal runs are all normal packets.
    """
    ids = np.asarray(ids, dtype=np.uint16)
    n = len(ids)
    if n == 0:
        return b""
    per = params.PACKET_ADDRS
    n_packets = (n + per - 1) // per
    padded = np.zeros(n_packets * per, dtype=np.uint16)
    padded[:n] = ids
    counts = np.full(n_packets, per, dtype=np.uint8)
    if n % per:
        counts[-1] = n % per
    kinds = np.full(n_packets, kind, dtype=np.uint8)
    if kind == params.PACKET_BRANCH and n_packets > 1:
        kinds[1:] = params.PACKET_BRANCH_CONT
    out = np.empty(n_packets * params.WORD_BYTES, dtype=np.uint8)
    backend.pack_packets(padded, kinds, counts, out)
    return out.tobytes()


def decode_bytecode(blob: bytes):
    """Packets back to a list of (kind, id list)."""
    if len(blob) % params.WORD_BYTES:
        raise ProgramFormatError("bytecode not 256-bit aligned")
    out = []
    for off in range(0, len(blob), params.WORD_BYTES):
        word = int.from_bytes(blob[off : off + params.WORD_BYTES], "little")
        kind = word & 3
        count = (word >> 2) & 0x1F
        if count > params.PACKET_ADDRS:
            raise ProgramFormatError(f"bad packet count {count}", )
        ids = [
            (word >> (7 + 11 * i)) & 0x7FF
            for i in range(count)
        ]
        out.append((kind, ids))
    return out


# -- flag rows --------------------------------------------------------------

def encode_flag_rows(lutset) -> bytes:
    out = bytearray()
    for luts in lutset.channels:
        for prog_addr, rec in sorted(luts.glut.items()):
            for idx in range(len(rec.addrs)):
                bits = (
                    (FLAG_PULSE_START if rec.pulse_start[idx] else 0)
                    | (FLAG_SYNC if rec.sync[idx] else 0)
                    | (FLAG_WAIT if rec.wait[idx] else 0)
                )
                if bits:
                    out += FLAG_ROW.pack(luts.channel, bits, prog_addr, idx)
    return bytes(out)


def decode_flag_rows(blob: bytes):
    rows = []
    for off in range(0, len(blob) - len(blob) % FLAG_ROW.size, FLAG_ROW.size):
        ch, bits, prog_addr, idx = FLAG_ROW.unpack_from(blob, off)
        if bits:
            rows.append((ch, bits, prog_addr, idx))
    return rows


# -- container ---------------------------------------------------------------

@dataclass
class ProgramImage:
    """Decoded program: LUT images, flags, and per-channel bytecode."""

    branch_shift: int = params.DEFAULT_BRANCH_SHIFT
    branch_latency: int = params.DEFAULT_BRANCH_LATENCY
    measurement_order: int = 0
    plut: list = field(default_factory=list)       # per channel: list of rows
    mlut: list = field(default_factory=list)       # per channel: list[int]
    glut: list = field(default_factory=list)       # per channel: {addr: (lo, hi)}
    flags: list = field(default_factory=list)      # per channel: {addr: {idx: bits}}
    bytecode: list = field(default_factory=list)   # per channel: [(kind, ids)]

    @classmethod
    def blank(cls, channels: int = params.CHANNELS):
        return cls(
            plut=[[] for _ in range(channels)],
            mlut=[[] for _ in range(channels)],
            glut=[{} for _ in range(channels)],
            flags=[{} for _ in range(channels)],
            bytecode=[[] for _ in range(channels)],
        )

    def gate_words(self, channel: int, prog_addr: int):
        bounds = self.glut[channel].get(prog_addr)
        if bounds is None:
            return None
        lo, hi = bounds
        addrs = self.mlut[channel][lo : hi + 1]
        rows = [self.plut[channel][a] for a in addrs]
        fl = self.flags[channel].get(prog_addr, {})
        return rows, [fl.get(i, 0) for i in range(len(rows))]

    def stats(self) -> dict:
        plut = sum(len(p) for p in self.plut)
        mlut = sum(len(m) for m in self.mlut)
        glut = sum(len(g) for g in self.glut)
        streamed = sum(
            len(ids) for per_ch in self.bytecode for _k, ids in per_ch
        )
        return {
            "plut_entries": plut,
            "mlut_entries": mlut,
            "glut_entries": glut,
            "gates_streamed": streamed,
            "address_stage_ratio": (
                params.PLUT_ADDR_BITS * mlut / (params.WORD_BITS * plut) if plut else 0.0
            ),
            "glut_stage_ratio": (
                params.GLUT_STREAM_ADDR_BITS * streamed / (params.GLUT_BOUNDS_BITS * glut)
                if glut
                else 0.0
            ),
        }


def _pad_word(blob: bytes) -> bytes:
    rem = len(blob) % params.WORD_BYTES
    return blob if not rem else blob + b"\0" * (params.WORD_BYTES - rem)


def write_program(lutset, bytecode_blobs, branch_shift=params.DEFAULT_BRANCH_SHIFT,
                  branch_latency=params.DEFAULT_BRANCH_LATENCY, measurement_order=0) -> bytes:
    """Assemble the full container from compiled LUTs and per-channel
    bytecode byte strings."""
    sections = [(SECTION_PROG, 0xFF, _pad_word(encode_luts(lutset)))]
    flags = encode_flag_rows(lutset)
    if flags:
        sections.append((SECTION_FLAGS, 0xFF, _pad_word(flags)))
    for ch, blob in enumerate(bytecode_blobs):
        if blob:
            sections.append((SECTION_SEQ, ch, _pad_word(blob)))
    table_len = _HEADER.size + _SECTION.size * len(sections)
    table_len += (-table_len) % params.WORD_BYTES
    out = bytearray()
    offset = table_len
    body = bytearray()
    entries = []
    for kind, ch, blob in sections:
        entries.append((kind, ch, offset, len(blob)))
        body += blob
        offset += len(blob)
    out += _HEADER.pack(
        params.FILE_MAGIC,
        params.FILE_VERSION,
        branch_shift,
        branch_latency,
        measurement_order,
        len(sections),
        offset,
    )
    for kind, ch, off, ln in entries:
        out += _SECTION.pack(kind, ch, off, ln)
    out += b"\0" * (table_len - len(out))
    out += body
    return bytes(out)


def read_program(blob: bytes) -> ProgramImage:
    if len(blob) < _HEADER.size:
        raise ProgramFormatError("truncated header")
    magic, version, shift, latency, order, nsec, total = _HEADER.unpack_from(blob, 0)
    if magic != params.FILE_MAGIC:
        raise ProgramFormatError(f"bad magic {magic!r}")
    if version != params.FILE_VERSION:
        raise ProgramFormatError(f"unsupported version {version}")
    if total > len(blob):
        raise ProgramFormatError("truncated body")
    img = ProgramImage.blank()
    img.branch_shift, img.branch_latency, img.measurement_order = shift, latency, order
    for i in range(nsec):
        kind, ch, off, ln = _SECTION.unpack_from(blob, _HEADER.size + i * _SECTION.size)
        body = blob[off : off + ln]
        if len(body) != ln:
            raise ProgramFormatError(f"section {i} out of bounds")
        if kind == SECTION_PROG:
            _apply_programming(img, body)
        elif kind == SECTION_FLAGS:
            for fch, bits, prog_addr, idx in decode_flag_rows(body):
                img.flags[fch].setdefault(prog_addr, {})[idx] = bits
        elif kind == SECTION_SEQ:
            img.bytecode[ch].extend(decode_bytecode(body))
        else:
            raise ProgramFormatError(f"unknown section kind {kind}")
    return img


def _apply_programming(img: ProgramImage, body: bytes):
    if len(body) % params.WORD_BYTES:
        raise ProgramFormatError("programming stream not word aligned")
    for off in range(0, len(body), params.WORD_BYTES):
        op = decode_programming_word(body[off : off + params.WORD_BYTES])
        if op[0] == "plut":
            _, ch, addr, row = op
            plut = img.plut[ch]
            while len(plut) <= addr:
                plut.append(None)
            plut[addr] = row
        elif op[0] == "mlut":
            _, ch, start, addrs = op
            mlut = img.mlut[ch]
            while len(mlut) < start + len(addrs):
                mlut.append(0)
            mlut[start : start + len(addrs)] = addrs
        elif op[0] == "glut":
            _, ch, entries = op
            for prog_addr, lo, hi in entries:
                img.glut[ch][prog_addr] = (lo, hi)
        else:
            # sequence packets interleaved with programming data (staggered
            # reprogramming streams) route to their channel's bytecode
            _, ch, payload = op
            img.bytecode[ch].extend(
                decode_bytecode(payload.to_bytes(params.WORD_BYTES, "little"))
            )
