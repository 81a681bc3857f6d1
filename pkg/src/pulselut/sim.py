"""Cycle-level replay of a compiled program.

The walk decodes per-channel bytecode into an aligned slice schedule,
expands each gate through GLUT -> MLUT -> PLUT, models the serial
delivery lane against the 8 FIFOs per channel, and emits one value row
per populated slot per cycle:

    AMP/FRQ  raw spline-engine outputs
    PHS      effective phase: tone accumulator + nominal + frame term
    FRM      channel frame-accumulator readout

Engines start at the global release cycle (every populated FIFO on every
channel holds its first word); this structural rule models the
wait-for-trigger halt at sequence start, so gate data stays
context-free and identical slices reuse ids wherever they appear.
Wait flags on later pulses ride in the image but no external trigger
source beyond measurement outcomes is modeled. Branch packets stall the
walk until a measurement outcome arrives, then resolve gate addresses by
OR-ing the shifted outcome and the forced MSB into the packed base
addresses.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from . import dds, params, splines, words
from .errors import (
    FifoUnderflow,
    MissingContinuation,
    MissingGlutEntry,
    SimulationFault,
)
from .slices import replay_delivery_raw

MASK40 = params.MASK40


def resolve_branch(base: int, outcome: int, shift: int,
                   width: int = params.GLUT_PROG_ADDR_BITS) -> int:
    """Hybrid GLUT address: base | (outcome << shift) | forced MSB.

    Outcome bits shifted past the address width are masked off; the MSB
    separates branch entries from normal gates even for outcome zero.
    """
    value = base | (outcome << shift) | (1 << (width - 1))
    return value & ((1 << width) - 1)


# -- measurement sources ---------------------------------------------------

class ScriptedMeasurements:
    def __init__(self, outcomes):
        self._outcomes = list(outcomes)
        self._next = 0

    def next_outcome(self) -> int:
        if self._next >= len(self._outcomes):
            raise SimulationFault("measurement source exhausted")
        value = self._outcomes[self._next]
        self._next += 1
        return int(value)


class SeededMeasurements:
    def __init__(self, seed: int, width: int = 1):
        self._rng = random.Random(seed)
        self._width = width

    def next_outcome(self) -> int:
        return self._rng.getrandbits(self._width)


class StdinMeasurements:
    """Interactive debugging supplier: one outcome per prompt."""

    def __init__(self, prompt: str = "measurement outcome> "):
        self.prompt = prompt

    def next_outcome(self) -> int:
        return int(input(self.prompt), 0)


@dataclass
class SimConfig:
    fifo_depth: int = params.DEFAULT_FIFO_DEPTH
    channels: int = params.CHANNELS
    measurement_source: object = None
    branch_shift: int | None = None      # None: take it from the program
    branch_latency: int | None = None
    trace_decimation: int = 1

    def __post_init__(self):
        if self.fifo_depth < 1:
            raise ValueError("fifo_depth must be at least 1")
        if self.trace_decimation < 1:
            raise ValueError("trace_decimation must be at least 1")


# -- trace ------------------------------------------------------------------

_EVENT_ORDER = {"trigger": 0, "branch": 1, "sync": 2, "underflow": 3}


def _event_key(event):
    cycle, kind, channel, payload = event
    return (cycle, _EVENT_ORDER.get(kind, 9), channel, payload)


@dataclass
class WaveformTrace:
    """Per-slot value runs plus event rows.

    values[(channel, tone, param)] is a list of (start_cycle, uint64
    array) runs with gaps only at stalls; events are (cycle, kind,
    channel, payload) with channel -1 for global events.
    """

    values: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    release: int = 0
    final_counter: int = 0
    final_state: dds.DdsState | None = None
    decimation: int = 1

    def series(self, channel: int, tone: int, param: int):
        runs = self.values.get((channel, tone, param), [])
        if not runs:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.uint64)
        cycles = np.concatenate(
            [start + np.arange(len(v), dtype=np.int64) for start, v in runs]
        )
        vals = np.concatenate([v for _start, v in runs])
        return cycles, vals

    def value_at(self, channel: int, tone: int, param: int, cycle: int):
        for start, v in self.values.get((channel, tone, param), []):
            if start <= cycle < start + len(v):
                return int(v[cycle - start])
        return None

    def rows(self):
        """Deterministic row iterator; value rows honor decimation, event
        rows never decimate."""
        streams = []
        for (ch, tone, param), runs in sorted(self.values.items()):
            for start, v in runs:
                streams.append((ch, tone, param, start, v))
        events = sorted(self.events, key=_event_key)
        if not streams:
            yield from events
            return
        lo = min(start for *_x, start, _v in streams)
        hi = max(start + len(v) for *_x, start, v in streams)
        event_cycles = {e[0] for e in events}
        ei = 0
        step = self.decimation
        for cycle in range(lo, hi):
            if cycle % step and cycle not in event_cycles:
                continue
            while ei < len(events) and events[ei][0] <= cycle:
                yield events[ei]
                ei += 1
            if cycle % step:
                continue
            for ch, tone, param, start, v in streams:
                if start <= cycle < start + len(v):
                    yield (cycle, ch, tone, param, int(v[cycle - start]))
        while ei < len(events):
            yield events[ei]
            ei += 1

    def to_csv(self, fh):
        fh.write("cycle,channel,tone,param,value_hex\n")
        for row in self.rows():
            if len(row) == 5 and isinstance(row[3], int):
                cycle, ch, tone, param, value = row
                fh.write(f"{cycle},{ch},{tone},{params.PARAM_NAMES[param]},{value:010x}\n")
            else:
                cycle, kind, ch, payload = row
                fh.write(f"{cycle},{ch},,{kind},{payload:x}\n")

    def to_binary(self) -> bytes:
        import struct

        out = bytearray()
        for row in self.rows():
            if len(row) == 5 and isinstance(row[3], int):
                cycle, ch, tone, param, value = row
                out += struct.pack("<qbBBxQ", cycle, ch, tone, param, value)
            else:
                cycle, kind, ch, payload = row
                code = {"trigger": 16, "sync": 17, "branch": 18, "underflow": 19}[kind]
                out += struct.pack("<qbBBxQ", cycle, ch, 0, code, payload & (2**64 - 1))
        return bytes(out)


# -- program walking ----------------------------------------------------------

def _itemize(packets):
    """Bytecode packets to a list of ('gate', addr) / ('branch', [bases])."""
    items = []
    for kind, ids in packets:
        if kind == params.PACKET_NORMAL:
            items.extend(("gate", g) for g in ids)
        elif kind == params.PACKET_BRANCH:
            items.append(["branch", list(ids)])
        elif kind == params.PACKET_BRANCH_CONT:
            if not items or items[-1][0] != "branch":
                raise MissingContinuation(
                    "branch continuation without a preceding branch packet"
                )
            items[-1][1].extend(ids)
        else:
            raise SimulationFault(f"unknown packet kind {kind}")
    return [tuple(it) for it in items]


class _GateCache:
    """Per-(channel, addr) expansion of words into slot streams."""

    def __init__(self, img):
        self.img = img
        self.cache = {}

    def get(self, ch: int, addr: int):
        key = (ch, addr)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        got = self.img.gate_words(ch, addr)
        if got is None:
            raise MissingGlutEntry(f"no GLUT entry {addr:#x} on channel {ch}")
        rows, flagbits = got
        slots = [[] for _ in range(params.SLOTS)]
        serial = []
        for row, bits in zip(rows, flagbits):
            slot = params.slot_index(int(row["par"]), int(row["ton"]))
            slots[slot].append((row, bits))
            serial.append((slot, int(row["dur"])))
        durations = []
        for slot_words in slots:
            durations.append(sum(int(r["dur"]) for r, _b in slot_words))
        populated = [d for d in durations if d > 0]
        if populated and len(set(populated)) != 1:
            raise SimulationFault(
                f"gate {addr:#x} channel {ch}: slot durations disagree {durations}"
            )
        gate = _Gate(addr, slots, populated[0] if populated else 0, serial)
        self.cache[key] = gate
        return gate


@dataclass
class _Gate:
    addr: int
    slots: list     # per slot: list of (row, flagbits)
    duration: int
    serial: list    # (slot, dur) in MLUT order, for delivery replay

    _values: dict = field(default_factory=dict)

    def slot_values(self, slot: int) -> np.ndarray:
        """State-independent engine outputs (AMP/FRQ/PHS nominal)."""
        vals = self._values.get(slot)
        if vals is None:
            parts = []
            for row, _bits in self.slots[slot]:
                fd = words.coefficients(row, int(row["par"]))
                parts.append(splines.interpolate(fd))
            vals = np.concatenate(parts) if parts else np.empty(0, dtype=np.uint64)
            self._values[slot] = vals
        return vals


def run(program, config: SimConfig | None = None, state: dds.DdsState | None = None,
        counter0: int = 0) -> WaveformTrace:
    """Replay a program deterministically; see the module docstring."""
    config = config or SimConfig()
    shift = config.branch_shift if config.branch_shift is not None else program.branch_shift
    latency = (
        config.branch_latency if config.branch_latency is not None else program.branch_latency
    )
    state = state or dds.DdsState()
    cache = _GateCache(program)

    per_channel_items = [_itemize(program.bytecode[ch]) for ch in range(config.channels)]
    lengths = {len(it) for it in per_channel_items if it}
    if len(lengths) > 1:
        raise SimulationFault(f"channels disagree on sequence length: {sorted(lengths)}")
    n_items = lengths.pop() if lengths else 0
    active = [ch for ch in range(config.channels) if per_channel_items[ch]]

    # --- delivery replay over the normal stream (branch data is resolved
    # in place after the measurement and is covered by the branch latency)
    releases = {}
    for ch in active:
        serial = []
        for item in per_channel_items[ch]:
            if item[0] == "gate":
                serial.extend(cache.get(ch, item[1]).serial)
        if serial:
            releases[ch] = replay_delivery_raw(serial, config.fifo_depth).release
    release = max(releases.values(), default=1)
    trace = WaveformTrace(release=release, decimation=config.trace_decimation)
    trace.events.append((release, "trigger", -1, 0))
    underflow = None
    for ch in active:
        rep = replay_delivery_raw(
            [w for item in per_channel_items[ch] if item[0] == "gate"
             for w in cache.get(ch, item[1]).serial],
            config.fifo_depth,
            release=release,
        )
        for cyc, slot in rep.underflows:
            trace.events.append((cyc, "underflow", ch, slot))
            if underflow is None:
                underflow = FifoUnderflow(cyc, ch, slot)

    # --- schedule: absolute start cycle of every gate on every channel
    schedule = [[] for _ in range(config.channels)]  # (start, _Gate)
    t = release
    pos = 0
    while pos < n_items:
        kinds = {per_channel_items[ch][pos][0] for ch in active}
        if len(kinds) != 1:
            raise SimulationFault("channels disagree on branch structure")
        kind = kinds.pop()
        if kind == "gate":
            duration = None
            for ch in active:
                gate = cache.get(ch, per_channel_items[ch][pos][1])
                schedule[ch].append((t, gate))
                if duration is None:
                    duration = gate.duration
                elif gate.duration != duration:
                    raise SimulationFault(
                        f"slice at item {pos}: channel durations disagree"
                    )
            t += duration
            pos += 1
            continue
        # branch group
        if config.measurement_source is None:
            raise SimulationFault("branch packet but no measurement source")
        outcome = int(config.measurement_source.next_outcome())
        group_len = {len(per_channel_items[ch][pos][1]) for ch in active}
        if len(group_len) != 1:
            raise SimulationFault("branch groups disagree on length")
        t += latency
        for n in range(group_len.pop()):
            duration = None
            for ch in active:
                base = per_channel_items[ch][pos][1][n]
                addr = resolve_branch(base, outcome, shift)
                gate = cache.get(ch, addr)
                if n == 0:
                    trace.events.append((t, "branch", ch, addr))
                schedule[ch].append((t, gate))
                if duration is None:
                    duration = gate.duration
                elif gate.duration != duration:
                    raise SimulationFault("branch slice durations disagree")
            t += duration
        pos += 1

    # --- value streams
    for ch in active:
        _compose_channel(trace, state, ch, schedule[ch], counter0)

    trace.final_counter = counter0 + t
    trace.final_state = state
    trace.events.sort(key=_event_key)
    if underflow is not None:
        underflow.trace = trace
        raise underflow
    return trace


def _segment_runs(gates):
    """Group scheduled gates into contiguous runs (gaps at stalls)."""
    runs = []
    for start, gate in gates:
        if runs and runs[-1][0] + runs[-1][1] == start:
            runs[-1][2].append(gate)
            runs[-1][1] += gate.duration
        else:
            runs.append([start, gate.duration, [gate]])
    return runs


def _compose_channel(trace, state, ch, gates, counter0):
    runs = _segment_runs(gates)
    acc = [int(state.phase_acc[ch][tone]) for tone in range(params.TONES)]
    prev_end = None
    prev_ftw = [0, 0]
    for start, length, run_gates in runs:
        if prev_end is not None and start > prev_end:
            gap = start - prev_end
            for tone in range(params.TONES):
                acc[tone] = (acc[tone] + prev_ftw[tone] * gap) & MASK40

        slot_vals = {}
        for param in (params.AMP, params.FRQ, params.PHS):
            for tone in range(params.TONES):
                slot = params.slot_index(param, tone)
                vals = np.concatenate([g.slot_values(slot) for g in run_gates])
                slot_vals[(param, tone)] = vals

        # frame accumulator: one per channel, written by the tone-0 FRM
        # engine; the tone-1 FRM slot must stay flat (padding zeros) so
        # there is a single well-ordered writer
        frame_runs = []
        frame_phase_runs = []
        for g in run_gates:
            for row, _bits in g.slots[params.slot_index(params.FRM, 1)]:
                if row["m1"] or row["m2"] or row["m3"]:
                    raise SimulationFault(
                        "tone-1 FRM words must carry a flat profile"
                    )
        for g in run_gates:
            for row, _bits in g.slots[params.slot_index(params.FRM, 0)]:
                fd = words.coefficients(row, params.FRM)
                vals, applied = dds.apply_frame_word(
                    state, ch, fd, at_end=bool(int(row["flags"]) & words.FLAG_AT_END)
                )
                frame_runs.append(vals)
                frame_phase_runs.append(applied)
        frame_vals = np.concatenate(frame_runs) if frame_runs else np.empty(0, np.uint64)
        frame_phase = (
            np.concatenate(frame_phase_runs) if frame_phase_runs else frame_vals
        )

        # per-tone phase accumulators with sync reloads
        for tone in range(params.TONES):
            frq = slot_vals[(params.FRQ, tone)]
            syncs = _sync_cycles(run_gates, tone)
            phases = dds.phase_trace(frq, syncs, acc[tone], counter_base=counter0 + start)
            for cyc in syncs:
                trace.events.append((start + cyc, "sync", ch, tone))
            if len(frq):
                acc[tone] = int((int(phases[-1]) + int(frq[-1])) & MASK40)
                prev_ftw[tone] = int(frq[-1])
            # effective phase: nominal + accumulator + masked frame term
            nominal = slot_vals[(params.PHS, tone)]
            apply_m, invert_m = _frame_masks(run_gates, tone, len(nominal))
            signed = frame_phase.astype(np.int64)
            term = np.where(apply_m, np.where(invert_m, -signed, signed), 0)
            eff = (phases.astype(np.int64) + nominal.astype(np.int64) + term) % (1 << 40)
            trace.values.setdefault((ch, tone, params.PHS), []).append(
                (start, eff.astype(np.uint64))
            )
            trace.values.setdefault((ch, tone, params.AMP), []).append(
                (start, slot_vals[(params.AMP, tone)])
            )
            trace.values.setdefault((ch, tone, params.FRQ), []).append((start, frq))
            trace.values.setdefault((ch, tone, params.FRM), []).append(
                (start, frame_vals)
            )
        prev_end = start + length
    for tone in range(params.TONES):
        state.phase_acc[ch][tone] = acc[tone]


def _sync_cycles(run_gates, tone):
    """Run-relative cycles where a sync-flagged pulse begins on a tone."""
    out = []
    offset = 0
    slot = params.slot_index(params.FRQ, tone)
    for g in run_gates:
        cyc = 0
        for row, bits in g.slots[slot]:
            if bits & 2:  # FLAG_SYNC
                out.append(offset + cyc)
            cyc += int(row["dur"])
        offset += g.duration
    return out


def _frame_masks(run_gates, tone, total):
    """Per-cycle apply/invert booleans from the active PHS-slot word."""
    apply_m = np.zeros(total, dtype=bool)
    invert_m = np.zeros(total, dtype=bool)
    pos = 0
    slot = params.slot_index(params.PHS, tone)
    for g in run_gates:
        for row, _bits in g.slots[slot]:
            n = int(row["dur"])
            flags = int(row["flags"])
            if (flags >> 1) & (1 << tone):
                apply_m[pos : pos + n] = True
            if (flags >> 3) & (1 << tone):
                invert_m[pos : pos + n] = True
            pos += n
    return apply_m, invert_m


def verify_schedule(program, config: SimConfig | None = None) -> dict:
    """Dry-run the delivery model; report headroom and underflows."""
    config = config or SimConfig()
    cache = _GateCache(program)
    report = {}
    for ch in range(config.channels):
        items = _itemize(program.bytecode[ch])
        serial = []
        for item in items:
            if item[0] == "gate":
                serial.extend(cache.get(ch, item[1]).serial)
        if not serial:
            continue
        rep = replay_delivery_raw(serial, config.fifo_depth)
        report[ch] = {
            "release": rep.release,
            "min_headroom": rep.min_headroom,
            "underflows": rep.underflows,
        }
    return report
