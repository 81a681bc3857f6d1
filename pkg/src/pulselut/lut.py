"""Per-channel lookup tables and the pulse managers that mirror them.

Three-stage decompression: the PLUT holds unique stored pulselet words
(12-bit addresses), the MLUT remaps them into contiguous per-gate runs
(14-bit addresses), and the GLUT maps a gate identifier to its MLUT
bounds. Gate identifiers streamed in bytecode are 11 bits; the full
12-bit programmable space reserves the MSB half for branch-resolved
entries.

Interning identity is the stored word bits plus the mutation id: tagging
pulses with a mutation id deliberately splits otherwise-identical words
so a class of gates can be patched in place without touching bystanders.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import params, words
from .errors import (
    GlutCapacityExceeded,
    MlutCapacityExceeded,
    PlutCapacityExceeded,
    SharedDataConflict,
)


@dataclass
class GateRecord:
    prog_addr: int             # 12-bit programmable GLUT address
    mlut_start: int
    mlut_stop: int             # inclusive
    addrs: tuple               # PLUT address per serial position
    pulse_start: np.ndarray    # out-of-band per-position sequence flags
    sync: np.ndarray
    wait: np.ndarray
    pulse_handles: tuple = ()
    owns_range: bool = True    # False when reusing another gate's MLUT run


@dataclass
class PulseRecord:
    gate_addr: int
    span: tuple                # (first, last) serial positions within the gate
    pulselets: tuple           # PLUT addresses


class PulseManager:
    """Contiguous, preallocated pulse/pulselet stores for one channel.

    Pulselet handles are PLUT addresses (the mirror is structural).
    Growth is instrumented; the compiler pre-sizes the arrays so a
    compile pass does at most one growth.
    """

    def __init__(self, channel: int, capacity: int = 64):
        self.channel = channel
        self.rows = np.zeros(capacity, dtype=words.WORD_DTYPE)
        self.count = 0
        self.addr_by_key: dict[bytes, int] = {}
        self.ref_gates: list[set] = []
        self.pulses: list[PulseRecord] = []
        self.grow_count = 0

    def reserve(self, n: int):
        if n > len(self.rows):
            self._grow(n)

    def _grow(self, need: int):
        cap = max(need, 2 * len(self.rows))
        fresh = np.zeros(cap, dtype=words.WORD_DTYPE)
        fresh[: self.count] = self.rows[: self.count]
        self.rows = fresh
        self.grow_count += 1

    def intern(self, row) -> int:
        """Idempotent append; identical words return their existing address."""
        key = row.tobytes()
        addr = self.addr_by_key.get(key)
        if addr is not None:
            return addr
        if self.count >= params.PLUT_CAPACITY:
            raise PlutCapacityExceeded("PLUT full", self.channel)
        if self.count >= len(self.rows):
            self._grow(self.count + 1)
        addr = self.count
        self.rows[addr] = row
        self.addr_by_key[key] = addr
        self.ref_gates.append(set())
        self.count += 1
        return addr

    def write_in_place(self, addr: int, row):
        old_key = self.rows[addr].tobytes()
        new_key = row.tobytes()
        if self.addr_by_key.get(old_key) == addr:
            del self.addr_by_key[old_key]
        self.rows[addr] = row
        self.addr_by_key.setdefault(new_key, addr)


class ChannelLuts:
    """PLUT + MLUT + GLUT images and gate records for one channel.

    The pulse manager is preallocated at full PLUT capacity (a few
    hundred KB per board), trading memory for zero growth reallocations
    during a compile pass.
    """

    def __init__(self, channel: int, capacity: int = params.PLUT_CAPACITY):
        self.channel = channel
        self.manager = PulseManager(channel, capacity)
        self.mlut: list[int] = []
        self._mlut_bytes = bytearray()  # 2-byte LE mirror for run reuse search
        self.glut: dict[int, GateRecord] = {}
        self.next_stream_id = 0
        self._gate_by_key: dict = {}
        self.gates_streamed = 0  # bytecode references, for the stats report

    # -- registration ---------------------------------------------------

    def register_gate(self, stream_rows, pulse_start, sync, wait) -> int:
        """Intern a serial word list and return its 11-bit gate id.

        Identical word lists (including sequence flags) reuse the same
        id; fresh gates get a contiguous MLUT run, reusing any existing
        identical run (lowest start address wins).
        """
        addrs = tuple(self.manager.intern(r) for r in stream_rows)
        key = (addrs, pulse_start.tobytes(), sync.tobytes(), wait.tobytes())
        hit = self._gate_by_key.get(key)
        if hit is not None:
            return hit
        if self.next_stream_id >= params.GLUT_STREAM_CAPACITY:
            raise GlutCapacityExceeded("streaming GLUT ids exhausted", self.channel)
        gid = self.next_stream_id
        self._place(gid, addrs, pulse_start, sync, wait)
        self.next_stream_id += 1
        self._gate_by_key[key] = gid
        return gid

    def register_branch_gate(self, prog_addr, stream_rows, pulse_start, sync, wait):
        """Place a branch-case gate at an explicit programmable address."""
        if not prog_addr & (1 << (params.GLUT_PROG_ADDR_BITS - 1)):
            raise ValueError("branch entries must set the GLUT address MSB")
        if prog_addr >= params.GLUT_PROG_CAPACITY:
            raise GlutCapacityExceeded("branch GLUT address out of range", self.channel)
        addrs = tuple(self.manager.intern(r) for r in stream_rows)
        self._place(prog_addr, addrs, pulse_start, sync, wait)

    def _place(self, prog_addr, addrs, pulse_start, sync, wait):
        start, owns = self._mlut_run(addrs)
        rec = GateRecord(
            prog_addr,
            start,
            start + len(addrs) - 1,
            addrs,
            pulse_start.copy(),
            sync.copy(),
            wait.copy(),
            owns_range=owns,
        )
        rec.pulse_handles = self._record_pulses(rec)
        self.glut[rec.prog_addr] = rec
        for a in addrs:
            self.manager.ref_gates[a].add(rec.prog_addr)
        return rec

    def _record_pulses(self, rec: GateRecord) -> tuple:
        bounds = list(np.nonzero(rec.pulse_start)[0]) + [len(rec.addrs)]
        handles = []
        for i in range(len(bounds) - 1):
            lo, hi = int(bounds[i]), int(bounds[i + 1]) - 1
            self.manager.pulses.append(
                PulseRecord(rec.prog_addr, (lo, hi), rec.addrs[lo : hi + 1])
            )
            handles.append(len(self.manager.pulses) - 1)
        return tuple(handles)

    def _mlut_run(self, addrs):
        """Find or append a contiguous MLUT run holding these addresses."""
        needle = b"".join(int(a).to_bytes(2, "little") for a in addrs)
        pos = 0
        while True:
            hit = self._mlut_bytes.find(needle, pos)
            if hit < 0:
                break
            if hit % 2 == 0:
                return hit // 2, False
            pos = hit + 1
        start = len(self.mlut)
        if start + len(addrs) > params.MLUT_CAPACITY:
            raise MlutCapacityExceeded("MLUT full", self.channel)
        self.mlut.extend(int(a) for a in addrs)
        self._mlut_bytes.extend(needle)
        return start, True

    # -- decompression ---------------------------------------------------

    def expand(self, prog_addr: int):
        """GLUT -> MLUT -> PLUT expansion of one gate."""
        rec = self.glut.get(prog_addr)
        if rec is None:
            return None
        rows = self.manager.rows[
            np.array(self.mlut[rec.mlut_start : rec.mlut_stop + 1], dtype=np.intp)
        ]
        return rows, rec

    # -- mutation ---------------------------------------------------------

    def diff_and_patch(self, prog_addr: int, new_rows, pulse_start, sync, wait,
                       scope_gates=None):
        """Minimal reprogramming ops turning one registered gate into new data.

        scope_gates is the set of programmable addresses the mutation is
        allowed to affect (the mutation-id class, or just this gate).
        Returns a list of ops: ("plut", addr, row), ("mlut", pos, addr),
        ("glut", prog_addr, start, stop), ("flags", prog_addr, ...).
        """
        rec = self.glut[prog_addr]
        if scope_gates is None:
            scope_gates = {prog_addr}
        new_rows = np.asarray(new_rows, dtype=words.WORD_DTYPE)
        if len(new_rows) != len(rec.addrs):
            return self._repoint(rec, new_rows, pulse_start, sync, wait)

        # classify every changed position before touching anything
        in_place, reintern = [], []
        for i, (old_addr, row) in enumerate(zip(rec.addrs, new_rows)):
            if self.manager.rows[old_addr].tobytes() == row.tobytes():
                continue
            exclusive = self.manager.ref_gates[old_addr] <= scope_gates
            if exclusive and row.tobytes() not in self.manager.addr_by_key:
                in_place.append((i, old_addr, row))
            elif len(scope_gates) > 1:
                raise SharedDataConflict(
                    f"pulselet {old_addr} on channel {self.channel} is shared "
                    f"outside the mutation class"
                )
            else:
                reintern.append((i, old_addr, row))
        if reintern and not rec.owns_range:
            # this gate reuses another gate's MLUT run; leave it intact
            return self._repoint(rec, new_rows, pulse_start, sync, wait)

        ops = []
        for _i, addr, row in in_place:
            self.manager.write_in_place(addr, row)
            ops.append(("plut", addr, row.copy()))
        new_addrs = list(rec.addrs)
        replaced = set()
        emitted = set()
        for i, old_addr, row in reintern:
            before = self.manager.count
            fresh = self.manager.intern(row)
            if fresh >= before and fresh not in emitted:
                ops.append(("plut", fresh, row.copy()))
                emitted.add(fresh)
            new_addrs[i] = fresh
            replaced.add(old_addr)
            self.manager.ref_gates[fresh].add(prog_addr)
            pos = rec.mlut_start + i
            self.mlut[pos] = fresh
            self._mlut_bytes[2 * pos : 2 * pos + 2] = fresh.to_bytes(2, "little")
            ops.append(("mlut", pos, fresh))
        for a in replaced:
            if a not in new_addrs:
                self.manager.ref_gates[a].discard(prog_addr)
        rec.addrs = tuple(new_addrs)
        if not (
            np.array_equal(rec.sync, sync) and np.array_equal(rec.wait, wait)
            and np.array_equal(rec.pulse_start, pulse_start)
        ):
            rec.pulse_start, rec.sync, rec.wait = pulse_start.copy(), sync.copy(), wait.copy()
            ops.append(("flags", prog_addr, pulse_start.copy(), sync.copy(), wait.copy()))
        return ops

    def _repoint(self, rec, new_rows, pulse_start, sync, wait):
        """Shape or sharing changed: fresh MLUT run, GLUT bounds rewrite."""
        ops = []
        before = self.manager.count
        addrs = tuple(self.manager.intern(r) for r in new_rows)
        for a in sorted(set(a for a in addrs if a >= before)):
            ops.append(("plut", a, self.manager.rows[a].copy()))
        start, owns = self._mlut_run(addrs)
        if owns:
            for i, a in enumerate(addrs):
                ops.append(("mlut", start + i, a))
        for a in set(rec.addrs):
            if a not in addrs:
                self.manager.ref_gates[a].discard(rec.prog_addr)
        for a in addrs:
            self.manager.ref_gates[a].add(rec.prog_addr)
        rec.addrs = addrs
        if (start, start + len(addrs) - 1) != (rec.mlut_start, rec.mlut_stop):
            rec.mlut_start, rec.mlut_stop = start, start + len(addrs) - 1
            ops.append(("glut", rec.prog_addr, rec.mlut_start, rec.mlut_stop))
        rec.owns_range = owns
        rec.pulse_start, rec.sync, rec.wait = pulse_start.copy(), sync.copy(), wait.copy()
        ops.append(("flags", rec.prog_addr, pulse_start.copy(), sync.copy(), wait.copy()))
        return ops


class LutSet:
    """All-channel LUT images plus whole-board occupancy statistics."""

    def __init__(self, channels: int = params.CHANNELS):
        self.channels = [ChannelLuts(ch) for ch in range(channels)]

    def __getitem__(self, ch: int) -> ChannelLuts:
        return self.channels[ch]

    def stats(self) -> dict:
        plut = sum(c.manager.count for c in self.channels)
        mlut = sum(len(c.mlut) for c in self.channels)
        glut = sum(len(c.glut) for c in self.channels)
        streamed = sum(c.gates_streamed for c in self.channels)
        addr_ratio = (
            params.PLUT_ADDR_BITS * mlut / (params.WORD_BITS * plut) if plut else 0.0
        )
        glut_ratio = (
            params.GLUT_STREAM_ADDR_BITS * streamed / (params.GLUT_BOUNDS_BITS * glut)
            if glut
            else 0.0
        )
        return {
            "plut_entries": plut,
            "mlut_entries": mlut,
            "glut_entries": glut,
            "gates_streamed": streamed,
            "per_channel": [
                {
                    "channel": c.channel,
                    "plut": c.manager.count,
                    "mlut": len(c.mlut),
                    "glut": len(c.glut),
                }
                for c in self.channels
            ],
            "address_stage_ratio": addr_ratio,
            "glut_stage_ratio": glut_ratio,
        }
