"""Gate-slice algebra and FIFO-safe word ordering.

A gate slice groups the per-channel word streams of one sequential step
of a circuit (a single gate, or several merged parallel gates). Slices
merge channel-wise, pad with NOPs to a common duration, and concatenate
into per-channel gate-id sequences.

Delivery model (shared with the simulator): each channel has one serial
delivery lane feeding 8 FIFOs of configurable depth, one word per cycle.
Within cycle t an engine pop happens before a delivery completes, and a
word delivered at t is poppable from t+1. Engines are halted until the
release cycle (one cycle after every populated FIFO has its first word),
then pop on a fixed schedule set by word durations. A delivery into a
full FIFO stalls the lane, which is what makes bad orders underflow.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import params, pulses, words
from .errors import DurationTooShort, MergeConflict, UnschedulableAsymmetry


@dataclass
class ChannelData:
    """The 8 per-slot word streams of one channel within a slice."""

    streams: list  # SlotStream per slot index

    @property
    def cycles(self) -> int:
        return self.streams[0].cycles if self.streams else 0

    def check_aligned(self):
        lens = {s.cycles for s in self.streams}
        if len(lens) > 1:
            raise ValueError(f"slot streams disagree on duration: {sorted(lens)}")

    def word_count(self) -> int:
        return sum(len(s) for s in self.streams)

    def concat(self, other: "ChannelData") -> "ChannelData":
        return ChannelData(
            [a.concat(b) for a, b in zip(self.streams, other.streams)]
        )

    def equals(self, other: "ChannelData") -> bool:
        return all(a.equals(b) for a, b in zip(self.streams, other.streams))


def channel_data_from_pulses(pulse_list) -> ChannelData:
    cd = ChannelData(words.channel_streams(pulse_list))
    cd.check_aligned()
    return cd


@dataclass
class GateSlice:
    """Per-channel streams for one sequential step; populated channels only."""

    channels: dict = field(default_factory=dict)
    padded: bool = False

    @property
    def slice_duration(self) -> int:
        return max((cd.cycles for cd in self.channels.values()), default=0)


def slice_from_gate(gate) -> GateSlice:
    """Group a gate definition's pulses into a slice, channel by channel."""
    per_channel: dict[int, list] = {}
    for p in gate.pulses:
        per_channel.setdefault(p.channel, []).append(p)
    return GateSlice(
        {ch: channel_data_from_pulses(pl) for ch, pl in sorted(per_channel.items())}
    )


def merge(a: GateSlice, b: GateSlice) -> GateSlice:
    """Union of two unpadded slices.

    A channel populated by both merges only if the shorter channel's
    word streams (including sequence flags) are an exact prefix of the
    longer's, in which case the longer data is kept.
    """
    if a.padded or b.padded:
        raise ValueError("merge operates on unpadded slices")
    out = dict(a.channels)
    for ch, cdb in b.channels.items():
        if ch not in out:
            out[ch] = cdb
            continue
        cda = out[ch]
        short, long_ = (cda, cdb) if cda.cycles <= cdb.cycles else (cdb, cda)
        for slot in range(params.SLOTS):
            if not short.streams[slot].prefix_of(long_.streams[slot]):
                raise MergeConflict(
                    ch, short.streams[slot].first_difference(long_.streams[slot])
                )
        out[ch] = long_
    return GateSlice(dict(sorted(out.items())))


@lru_cache(maxsize=4096)
def _nop_channel(cycles: int) -> ChannelData:
    # padding NOPs recur constantly and the result is only ever read
    return channel_data_from_pulses([pulses.nop(0, cycles=cycles)])


def pad(s: GateSlice, channels: int = params.CHANNELS) -> GateSlice:
    """Fill every channel out to a common duration with boundary-aligned NOPs.

    Unpopulated channels get one full-length NOP; short channels get one
    trailing NOP. If a remainder would be shorter than the minimum pulse,
    the whole slice is extended by the smallest feasible amount.
    """
    if s.padded:
        return s
    duration = s.slice_duration
    if duration == 0:
        raise ValueError("cannot pad an empty slice")
    coverage = {ch: cd.cycles for ch, cd in s.channels.items()}
    extension = _pad_extension(duration, coverage.values())
    if extension:
        logging.getLogger(__name__).warning(
            "slice extended %d -> %d cycles: a padding remainder fell below "
            "the %d-cycle minimum", duration, duration + extension,
            params.MIN_PULSE_CYCLES,
        )
        duration += extension
    out = {}
    for ch in range(channels):
        cd = s.channels.get(ch)
        if cd is None:
            out[ch] = _nop_channel(duration)
            continue
        remainder = duration - cd.cycles
        if remainder:
            out[ch] = cd.concat(_nop_channel(remainder))
        else:
            out[ch] = cd
        out[ch].check_aligned()
    return GateSlice(out, padded=True)


def _pad_extension(duration: int, coverages) -> int:
    """Smallest slice extension leaving every NOP remainder 0 or >= 8."""
    if duration < params.MIN_PULSE_CYCLES:
        raise DurationTooShort(f"slice of {duration} cycles is below minimum")
    rems = [duration - c for c in coverages]
    bad = [r for r in rems if 0 < r < params.MIN_PULSE_CYCLES]
    if not bad:
        return 0
    delta = params.MIN_PULSE_CYCLES - min(bad)
    if any(r == 0 for r in rems):
        # channels that were exactly full need a full minimum-length NOP
        delta = max(delta, params.MIN_PULSE_CYCLES)
    return delta


# -- concatenation ---------------------------------------------------------

def concat(structure, slice_ids, channel: int) -> np.ndarray:
    """Per-channel gate-id sequence for a slice/loop structure.

    structure is a list of ("slice", index) / ("loop", count, body) ops;
    slice_ids maps a slice index to its per-channel gate id. Loops expand
    by repetition (np.tile, so a 1e7-rep loop stays cheap); redundant
    slice references naturally reuse their ids.
    """
    parts = []
    for op in structure:
        if op[0] == "slice":
            parts.append(np.array([slice_ids[op[1]][channel]], dtype=np.uint16))
        elif op[0] == "loop":
            _kind, count, body = op
            inner = concat(body, slice_ids, channel)
            parts.append(np.tile(inner, count))
        else:
            raise TypeError(f"concat cannot expand op {op[0]!r}")
    if not parts:
        return np.empty(0, dtype=np.uint16)
    return np.concatenate(parts)


# -- FIFO-safe serial ordering -------------------------------------------

def word_deadlines(cd: ChannelData):
    """Relative pop times: word j of a slot is needed at the cumulative
    duration of its predecessors (release-relative)."""
    out = []
    for slot, stream in enumerate(cd.streams):
        durs = stream.words["dur"].astype(np.int64)
        starts = np.concatenate([[0], np.cumsum(durs)[:-1]])
        out.append(starts)
    return out


_order_cache: dict = {}


def fifo_order(cd: ChannelData, depth: int = params.DEFAULT_FIFO_DEPTH):
    """Earliest-next-consumption-deadline-first serial order.

    Returns a list of (slot, word_index). Raises UnschedulableAsymmetry
    when no order can meet the deadlines (diagnosed against both the
    per-FIFO room bound and a delivery replay of the EDF order). The
    order depends only on word durations, so results are memoized on
    that signature.
    """
    signature = (
        depth,
        tuple(tuple(int(d) for d in s.words["dur"]) for s in cd.streams),
    )
    hit = _order_cache.get(signature)
    if hit is not None:
        return hit
    order = _fifo_order_uncached(cd, depth)
    if len(_order_cache) < 65536:
        _order_cache[signature] = order
    return order


def _fifo_order_uncached(cd: ChannelData, depth: int):
    deadlines = word_deadlines(cd)
    entries = []
    for slot, starts in enumerate(deadlines):
        durs = cd.streams[slot].words["dur"].astype(np.int64)
        for j, t in enumerate(starts):
            # room bound: even with instant delivery of predecessors, word j
            # cannot enter before word j-depth vacates its FIFO slot
            if j >= depth and t < deadlines[slot][j - depth] + 1:
                raise UnschedulableAsymmetry(
                    f"slot {slot} word {j} due at {int(t)} before FIFO room opens"
                )
            entries.append((int(t), slot, j))
    entries.sort()
    order = [(slot, j) for _, slot, j in entries]
    report = replay_delivery(cd, order, depth)
    if report.underflows:
        cyc, slot = report.underflows[0]
        raise UnschedulableAsymmetry(
            f"aggregate delivery bandwidth insufficient: slot {slot} "
            f"underflows at relative cycle {cyc} even under deadline order"
        )
    return order


@dataclass
class ReplayReport:
    release: int
    delivery_cycles: list
    min_headroom: dict
    underflows: list  # (cycle, slot)
    stalled: bool = False


def replay_delivery(cd: ChannelData, order, depth: int,
                    release: int | None = None) -> ReplayReport:
    """Replay a serial order of a channel's streams against concurrent
    FIFO consumption; order is a list of (slot, word_index)."""
    serial = [(slot, int(cd.streams[slot].words["dur"][j])) for slot, j in order]
    return replay_delivery_raw(serial, depth, release=release)


def replay_delivery_raw(serial, depth: int, release: int | None = None) -> ReplayReport:
    """Core delivery replay over [(slot, duration)] in delivery order.

    Follows the delivery model in the module docstring. Pops stay on the
    nominal schedule even after an underflow so every late word is
    reported against its true deadline. A fixed release cycle can be
    imposed (board-global trigger); otherwise the channel's own release
    is found by fixpoint iteration (blocking delays deliveries, which
    can push the release later, which relaxes blocking).
    """
    slot_durs: dict[int, list] = {}
    within = []  # per serial position: index within its slot
    for slot, dur in serial:
        lst = slot_durs.setdefault(slot, [])
        within.append(len(lst))
        lst.append(int(dur))
    deadlines = {
        s: np.concatenate([[0], np.cumsum(d)[:-1]]).astype(np.int64)
        for s, d in slot_durs.items()
    }
    populated = sorted(slot_durs)
    if not populated:
        return ReplayReport(release or 0, [], {}, [])
    total = sum(sum(d) for d in slot_durs.values())
    divergence_bound = total + len(serial) + depth + 16

    fixed = release is not None
    rel = release if fixed else 0
    for _ in range(64):
        t = -1
        first_delivery = {}
        delivery = []
        stalled_at = None
        for (slot, _dur), j in zip(serial, within):
            t = t + 1
            if j >= depth:
                t = max(t, int(deadlines[slot][j - depth]) + rel)
            if t > divergence_bound:
                stalled_at = (t, slot)
                break
            delivery.append(t)
            if j == 0:
                first_delivery[slot] = t
        if stalled_at is not None:
            # delivery lane deadlocked behind a full FIFO before release
            return ReplayReport(rel, delivery, {}, [stalled_at], stalled=True)
        if fixed:
            break
        new_release = 1 + max(first_delivery[s] for s in populated)
        if new_release == rel:
            break
        rel = new_release

    underflows = []
    headroom = {}
    arrivals: dict[int, list] = {s: [] for s in populated}
    for (slot, _dur), t in zip(serial, delivery):
        arrivals[slot].append(t)
    for slot in populated:
        arr = np.sort(np.array(arrivals[slot], dtype=np.int64))
        pop_times = deadlines[slot] + rel
        # words present just before each pop: delivered by pop-1, minus popped
        present = np.searchsorted(arr, pop_times - 1, side="right") - np.arange(
            len(pop_times)
        )
        headroom[slot] = int(present.min()) if len(present) else depth
        for j in np.nonzero(present <= 0)[0]:
            underflows.append((int(pop_times[j]), slot))
    underflows.sort()
    return ReplayReport(rel, delivery, headroom, underflows)
