"""End-to-end compilation: circuit structure to LUT images and bytecode.

The circuit is a nested structure of gates, parallel groups, loops, and
branches. Each sequential step becomes one gate slice: parallel members
merge channel-wise, the slice is padded across all channels, each
channel's words are put in FIFO-safe serial order and registered in the
LUTs, and the per-channel gate ids are concatenated (loops by repetition)
into bytecode.

Branch cases are compiled into the reserved upper half of the GLUT
address space using the incrementing base scheme: base addresses grow by
one per gate position and keep growing across branches; the streamed
packet carries the bases and the hardware ORs in the shifted outcome.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import params, progfile, pulses, slices
from .errors import GlutCapacityExceeded, UnknownGate
from .jaqal import analyze, lower_to_tir, parse_text
from .jaqal import tir as tir_mod
from .lut import LutSet
from .provider import GateKey, GateProvider
from .sim import resolve_branch


# -- circuit structure ---------------------------------------------------

@dataclass(frozen=True)
class Gate:
    name: str
    args: tuple = ()


@dataclass(frozen=True)
class Par:
    gates: tuple

    def __init__(self, gates):
        object.__setattr__(self, "gates", tuple(gates))


@dataclass(frozen=True)
class Loop:
    count: int
    body: tuple

    def __init__(self, count, body):
        object.__setattr__(self, "count", int(count))
        object.__setattr__(self, "body", tuple(body))


@dataclass(frozen=True)
class Branch:
    cases: tuple  # one sequence of Gate/Par per possible outcome value

    def __init__(self, cases):
        object.__setattr__(self, "cases", tuple(tuple(c) for c in cases))


@dataclass
class MutationReport:
    fetch_s: float
    fit_map_s: float
    encode_s: float
    total_s: float
    patch: bytes
    ops_by_channel: dict
    plut_words: int
    mlut_words: int
    glut_words: int

    def table(self) -> str:
        rows = [
            ("gate fetching", self.fetch_s),
            ("spline fitting and mapping", self.fit_map_s),
            ("data encoding", self.encode_s),
            ("full mutation", self.total_s),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {1e6 * t:10.1f} us" for name, t in rows)


@dataclass
class CompiledProgram:
    lutset: LutSet
    bytecode: list               # per channel: bytes
    image: bytes                 # full container
    slice_ids: list              # per slice: per-channel gate id
    slice_sources: list          # per slice: tuple of GateKey
    padded: list                 # per slice: padded GateSlice
    branch_shift: int
    branch_latency: int
    tir: object = None

    def stats(self) -> dict:
        return self.lutset.stats()


class Compiler:
    """One program per instance: LUT state, slice registrations, and the
    mutation entry points all refer to the last compile_* call."""

    def __init__(self, provider: GateProvider, fifo_depth: int = params.DEFAULT_FIFO_DEPTH,
                 branch_shift: int = params.DEFAULT_BRANCH_SHIFT,
                 branch_latency: int = params.DEFAULT_BRANCH_LATENCY,
                 measurement_order: int = 0):
        self.provider = provider
        self.fifo_depth = fifo_depth
        self.branch_shift = branch_shift
        self.branch_latency = branch_latency
        self.measurement_order = measurement_order
        self.lutset = LutSet()
        self.padded: list = []
        self.slice_ids: list = []           # per slice: {ch: gate id}
        self.slice_sources: list = []       # per slice: tuple of GateKey
        self._slice_memo: dict = {}
        self._branch_counter = 0
        self._key_slices: dict = {}         # GateKey -> set of slice indices

    # -- slice construction ------------------------------------------------

    def _fetch(self, key: GateKey) -> pulses.GateDefinition:
        return self.provider.fetch(key)

    def _slice_for(self, elements, memo_key=None):
        """Merged, padded, registered slice for one sequential step."""
        if memo_key is not None and memo_key in self._slice_memo:
            return self._slice_memo[memo_key]
        keys = tuple(GateKey.of(g.name, g.args) for g in elements)
        merged = None
        for key in keys:
            gs = slices.slice_from_gate(self._fetch(key))
            merged = gs if merged is None else slices.merge(merged, gs)
        padded = slices.pad(merged)
        index = self._register_slice(padded, keys)
        if memo_key is not None:
            self._slice_memo[memo_key] = index
        return index

    def _register_slice(self, padded, keys) -> int:
        ids = {}
        for ch, cd in padded.channels.items():
            order = slices.fifo_order(cd, self.fifo_depth)
            rows, starts, sync, wait = _serialize(cd, order)
            ids[ch] = self.lutset[ch].register_gate(rows, starts, sync, wait)
        self.padded.append(padded)
        self.slice_ids.append(ids)
        self.slice_sources.append(keys)
        index = len(self.padded) - 1
        for key in keys:
            self._key_slices.setdefault(key, set()).add(index)
        return index

    def _register_branch_slice(self, padded, base: int, case: int):
        for ch, cd in padded.channels.items():
            order = slices.fifo_order(cd, self.fifo_depth)
            rows, starts, sync, wait = _serialize(cd, order)
            prog_addr = resolve_branch(base, case, self.branch_shift)
            self.lutset[ch].register_branch_gate(prog_addr, rows, starts, sync, wait)

    # -- structure walk -----------------------------------------------------

    def _emit(self, seq) -> list:
        """Sequence to per-position ops: ('slice', idx) / ('loop', n, ops)
        / ('branch', [bases])."""
        ops = []
        for i, el in enumerate(seq):
            if isinstance(el, Gate):
                ops.append(("slice", self._slice_for([el], memo_key=("g", el.name, el.args))))
            elif isinstance(el, Par):
                ops.append(("slice", self._slice_for(el.gates)))
            elif isinstance(el, Loop):
                ops.append(("loop", el.count, self._emit(el.body)))
            elif isinstance(el, Branch):
                ops.append(self._emit_branch(el))
            else:
                raise TypeError(f"unexpected circuit element {el!r}")
        return ops

    def _emit_branch(self, branch: Branch):
        n_cases = len(branch.cases)
        if n_cases < 1:
            raise ValueError("branch needs at least one case")
        case_slices = []
        for case in branch.cases:
            steps = []
            for el in case:
                if isinstance(el, Gate):
                    elements = [el]
                elif isinstance(el, Par):
                    elements = list(el.gates)
                else:
                    raise TypeError("branch cases hold gates and parallel groups only")
                keys = tuple(GateKey.of(g.name, g.args) for g in elements)
                merged = None
                for key in keys:
                    gs = slices.slice_from_gate(self._fetch(key))
                    merged = gs if merged is None else slices.merge(merged, gs)
                steps.append(slices.pad(merged))
            case_slices.append(steps)
        # equalize case lengths so one base sequence serves every outcome
        max_len = max(len(c) for c in case_slices)
        durations = [
            max(
                (c[n].slice_duration if n < len(c) else params.MIN_PULSE_CYCLES)
                for c in case_slices
            )
            for n in range(max_len)
        ]
        bases = list(range(self._branch_counter, self._branch_counter + max_len))
        for base in bases:
            for case in range(n_cases):
                if resolve_branch(base, case, self.branch_shift) >= (
                    1 << params.GLUT_PROG_ADDR_BITS
                ) or (base | (case << self.branch_shift)) >= (
                    1 << (params.GLUT_PROG_ADDR_BITS - 1)
                ):
                    raise GlutCapacityExceeded(
                        f"branch base {base} with outcome {case} overflows the GLUT"
                    )
        for case_index, steps in enumerate(case_slices):
            for n in range(max_len):
                if n < len(steps):
                    padded = steps[n]
                else:
                    padded = slices.pad(
                        slices.GateSlice(
                            {0: slices._nop_channel(durations[n])}
                        )
                    )
                self._register_branch_slice(padded, bases[n], case_index)
        self._branch_counter += max_len
        return ("branch", bases)

    # -- bytecode -----------------------------------------------------------

    def _bytecode(self, ops) -> list:
        blobs = []
        for ch in range(params.CHANNELS):
            ids = self._channel_ids(ops, ch)
            parts = []
            streamed = 0
            for kind, payload in ids:
                if kind == "ids":
                    parts.append(progfile.encode_bytecode(payload, params.PACKET_NORMAL))
                    streamed += len(payload)
                else:
                    parts.append(progfile.encode_bytecode(payload, params.PACKET_BRANCH))
                    streamed += len(payload)
            self.lutset[ch].gates_streamed += streamed
            blobs.append(b"".join(parts))
        return blobs

    def _channel_ids(self, ops, ch) -> list:
        """Flatten ops for one channel into alternating ('ids', array) /
        ('branch', array) runs. Branch-free spans go through the
        scheduler's concat; loops containing branches must replay their
        packets per iteration (each is a separate measurement)."""

        def merge_push(runs, run):
            if run[0] == "ids" and len(run[1]) == 0:
                return
            if run[0] == "ids" and runs and runs[-1][0] == "ids":
                runs[-1] = ("ids", np.concatenate([runs[-1][1], run[1]]))
            else:
                runs.append(run)

        def collect(op_list) -> list:
            runs: list = []
            span: list = []

            def flush_span():
                nonlocal span
                if span:
                    merge_push(runs, ("ids", slices.concat(span, self.slice_ids, ch)))
                    span = []

            for op in op_list:
                if op[0] == "branch":
                    flush_span()
                    runs.append(("branch", np.array(op[1], dtype=np.uint16)))
                elif op[0] == "loop" and _contains_branch(op[2]):
                    flush_span()
                    body_runs = collect(op[2])
                    for _ in range(op[1]):
                        for r in body_runs:
                            merge_push(runs, r)
                else:
                    span.append(op)
            flush_span()
            return runs

        return collect(ops)

    # -- entry points ---------------------------------------------------------

    def compile_sequence(self, seq) -> CompiledProgram:
        ops = self._emit(list(seq))
        blobs = self._bytecode(ops)
        image = progfile.write_program(
            self.lutset,
            blobs,
            branch_shift=self.branch_shift,
            branch_latency=self.branch_latency,
            measurement_order=self.measurement_order,
        )
        return CompiledProgram(
            self.lutset,
            blobs,
            image,
            self.slice_ids,
            self.slice_sources,
            self.padded,
            self.branch_shift,
            self.branch_latency,
        )

    def compile_source(self, source: str, let_overrides=None) -> CompiledProgram:
        tree = analyze(parse_text(source))
        tir = lower_to_tir(tree, let_overrides)
        seq = sequence_from_tir(tir)
        compiled = self.compile_sequence(seq)
        compiled.tir = tir
        return compiled

    def reencode(self, compiled: CompiledProgram) -> bytes:
        """Fresh container bytes from the (possibly mutated) LUT state."""
        compiled.image = progfile.write_program(
            self.lutset,
            compiled.bytecode,
            branch_shift=self.branch_shift,
            branch_latency=self.branch_latency,
            measurement_order=self.measurement_order,
        )
        return compiled.image

    # -- mutation ----------------------------------------------------------------

    def mutate(self, selector, context=None) -> MutationReport:
        """Refetch the selected gates and patch the LUTs in place.

        selector is a GateKey or a mutation id (int). Returns the minimal
        programming stream and the stage-decomposed timing report. Flag
        changes (sync/wait/pulse boundaries) update the in-memory state
        and appear in ops_by_channel; reencode() folds them into a fresh
        container.
        """
        t_start = time.perf_counter()
        if context is not None:
            self.provider.context = context
        if isinstance(selector, GateKey):
            keys = [selector]
            slice_set = sorted(self._key_slices.get(selector, ()))
            if not slice_set:
                raise UnknownGate(f"{selector} was not compiled into this program")
            scope = None
        else:
            mid = int(selector)
            slice_set, scope = self._mutation_scope(mid)
            keys = sorted(
                {k for i in slice_set for k in self.slice_sources[i]},
                key=lambda k: (k.name, k.args),
            )
        for key in keys:
            self.provider.invalidate(key=key)
        t0 = time.perf_counter()
        defs = {key: self.provider.fetch(key) for key in keys}
        t_fetch = time.perf_counter() - t0

        t0 = time.perf_counter()
        ops_by_channel: dict = {ch: [] for ch in range(params.CHANNELS)}
        for index in slice_set:
            merged = None
            for key in self.slice_sources[index]:
                definition = defs.get(key) or self._fetch(key)
                gs = slices.slice_from_gate(definition)
                merged = gs if merged is None else slices.merge(merged, gs)
            padded = slices.pad(merged)
            self.padded[index] = padded
            for ch, cd in padded.channels.items():
                order = slices.fifo_order(cd, self.fifo_depth)
                rows, starts, sync, wait = _serialize(cd, order)
                prog_addr = self.slice_ids[index][ch]
                channel_scope = scope[ch] if scope is not None else None
                ops = self.lutset[ch].diff_and_patch(
                    prog_addr, rows, starts, sync, wait, scope_gates=channel_scope
                )
                ops_by_channel[ch].extend(ops)
        t_fit = time.perf_counter() - t0

        t0 = time.perf_counter()
        patch = b"".join(
            progfile.encode_patch_ops(ch, ops)
            for ch, ops in sorted(ops_by_channel.items())
            if ops
        )
        t_encode = time.perf_counter() - t0
        total = time.perf_counter() - t_start
        counts = _op_counts(ops_by_channel)
        return MutationReport(
            t_fetch, t_fit, t_encode, total, patch, ops_by_channel, *counts
        )

    def _mutation_scope(self, mid: int):
        """Slices and per-channel gate sets touched by a mutation id."""
        slice_set = set()
        scope = {ch: set() for ch in range(params.CHANNELS)}
        found = False
        for ch in range(params.CHANNELS):
            luts = self.lutset[ch]
            tagged = [
                a for a in range(luts.manager.count)
                if int(luts.manager.rows[a]["mid"]) == mid
            ]
            for a in tagged:
                found = True
                scope[ch] |= luts.manager.ref_gates[a]
        if not found:
            raise UnknownGate(f"no compiled pulselets tagged with mutation id {mid}")
        for index, ids in enumerate(self.slice_ids):
            for ch, prog_addr in ids.items():
                if prog_addr in scope[ch]:
                    slice_set.add(index)
        return sorted(slice_set), scope


def _contains_branch(ops) -> bool:
    for op in ops:
        if op[0] == "branch":
            return True
        if op[0] == "loop" and _contains_branch(op[2]):
            return True
    return False


def _serialize(cd, order):
    """Channel streams + serial order to row/flag arrays for the LUTs."""
    import numpy as np

    from . import words as words_mod

    rows = np.empty(len(order), dtype=words_mod.WORD_DTYPE)
    starts = np.empty(len(order), dtype=bool)
    sync = np.empty(len(order), dtype=bool)
    wait = np.empty(len(order), dtype=bool)
    for i, (slot, j) in enumerate(order):
        stream = cd.streams[slot]
        rows[i] = stream.words[j]
        starts[i] = stream.pulse_start[j]
        sync[i] = stream.sync[j]
        wait[i] = stream.wait[j]
    return rows, starts, sync, wait


def _op_counts(ops_by_channel):
    plut = mlut = glut = 0
    for ops in ops_by_channel.values():
        for op in ops:
            if op[0] == "plut":
                plut += 1
            elif op[0] == "mlut":
                mlut += 1
            elif op[0] == "glut":
                glut += 1
    return plut, mlut, glut


def sequence_from_tir(tir: tir_mod.TIR) -> list:
    """TIR tables to the compiler's nested sequence structure."""

    def gate_of(idx):
        entry = tir.gate_table[idx]
        return Gate(entry.name, entry.args)

    def walk_ref(ref):
        kind, idx = ref
        if kind == tir_mod.GATE:
            return [gate_of(idx)]
        entry = tir.block_table[idx]
        if entry.kind == "seq":
            out = []
            for child in entry.children:
                out.extend(walk_ref(child))
            return out
        if entry.kind == "par":
            gates = []
            for child in entry.children:
                ckind, cidx = child
                if ckind != tir_mod.GATE:
                    raise TypeError("parallel blocks hold gates only")
                gates.append(gate_of(cidx))
            return [Par(gates)]
        if entry.kind == "loop":
            return [Loop(entry.count, walk_ref(entry.children[0]))]
        raise TypeError(f"unknown block kind {entry.kind}")

    return walk_ref((tir_mod.BLOCK, tir.root_block))
