"""Measurement harnesses: parse scaling, fetch and mutation timing,
kernel backend comparison, and the local-vs-remote crossover study.

All harnesses report shapes (means, deviations, fitted slopes), never
absolute targets; wall-clock numbers are machine-dependent.
"""
from __future__ import annotations

import random
import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import builders, compiler, params, provider, splines
from .jaqal import analyze, lower_to_tir, parse_text
from .kernels import available_backends
from .provider import GateKey, GateProvider


def random_circuit_source(n_gates: int, seed: int, qubits: int = 4,
                          knot_range=(2, 20), parallel_fraction: float = 0.2,
                          loops: bool = True) -> str:
    """Random Jaqal program with roughly n_gates gate statements."""
    rng = random.Random(seed)
    lines = [f"register q[{qubits}]", "let delay 512"]
    emitted = 0
    while emitted < n_gates:
        roll = rng.random()
        if roll < parallel_fraction and n_gates - emitted >= 2 and qubits >= 2:
            a, b = rng.sample(range(qubits), 2)
            lines.append(f"<Sx q[{a}] | Sy q[{b}]>")
            emitted += 2
        elif loops and roll < parallel_fraction + 0.1 and n_gates - emitted >= 4:
            reps = rng.randint(2, 4)
            body = rng.randint(1, 2)
            inner = []
            for _ in range(body):
                inner.append(_random_gate_line(rng, qubits, knot_range))
            lines.append(f"loop {reps} {{")
            lines.extend("  " + ln for ln in inner)
            lines.append("}")
            emitted += reps * body
        else:
            lines.append(_random_gate_line(rng, qubits, knot_range))
            emitted += 1
    return "\n".join(lines) + "\n"


def _random_gate_line(rng, qubits, knot_range) -> str:
    q = rng.randrange(qubits)
    kind = rng.random()
    if kind < 0.35:
        return f"Sx q[{q}]"
    if kind < 0.6:
        return f"Sy q[{q}]"
    if kind < 0.75:
        theta = rng.randrange(1 << 16) / (1 << 14)
        return f"Rz q[{q}] {theta}"
    if kind < 0.9:
        knots = rng.randint(*knot_range)
        return f"shaped q[{q}] {knots}"
    return f"idle q[{q}] {rng.randrange(512, 2048)}"


def least_squares_line(xs, ys):
    """(slope, intercept, max relative deviation of points from the fit)."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    deviation = float(np.max(np.abs(y - fit) / np.abs(fit)))
    return float(slope), float(intercept), deviation


@dataclass
class ScalingRow:
    n: int
    mean: float
    stddev: float


def bench_parse(sizes=range(8, 81, 8), reps: int = 5, seed: int = 7,
                use_clock: bool = True):
    """Parse-time (or ops-count) scaling over circuit size.

    Returns (rows, slope, intercept, max_deviation). With use_clock off,
    the cost metric is the tokenizer+parser operation count, which is
    deterministic and used by the acceptance checks.
    """
    rows = []
    for n in sizes:
        source = random_circuit_source(n, seed + n, loops=False,
                                       parallel_fraction=0.0)
        samples = []
        for _ in range(reps):
            if use_clock:
                t0 = time.perf_counter()
                tir = lower_to_tir(analyze(parse_text(source)))
                samples.append(time.perf_counter() - t0)
            else:
                tokenizer_ops, parser_ops = parse_cost(source)
                samples.append(float(tokenizer_ops + parser_ops))
        rows.append(ScalingRow(n, statistics.mean(samples),
                               statistics.pstdev(samples)))
    slope, intercept, deviation = least_squares_line(
        [r.n for r in rows], [r.mean for r in rows]
    )
    return rows, slope, intercept, deviation


def parse_cost(source: str):
    """Deterministic work counters for one frontend pass."""
    from .jaqal.lexer import Tokenizer
    from .jaqal.parser import Parser

    tk = Tokenizer(source)
    tokens = tk.tokens()
    p = Parser(tokens)
    tree = p.parse_program()
    lower_to_tir(analyze(tree))
    return tk.ops, p.ops


def bench_fetch(knot_counts=(20, 60, 100, 140, 200), reps: int = 20,
                remote_address=None):
    """Gate-definition fetch times vs knot count, local or remote."""
    ctx = builders.CalibrationContext()
    prov = GateProvider(builders.standard_registry(), ctx)
    rows = []
    for n in knot_counts:
        key = GateKey.of("shaped", (0, n))
        samples = []
        for r in range(reps):
            prov.invalidate()
            t0 = time.perf_counter()
            if remote_address is None:
                prov.fetch(key)
            else:
                provider.remote_fetch(remote_address, key, timeout=2.0)
            samples.append(time.perf_counter() - t0)
        rows.append(ScalingRow(n, statistics.mean(samples), statistics.pstdev(samples)))
    slope, intercept, dev = least_squares_line(
        [r.n for r in rows], [r.mean for r in rows]
    )
    return rows, slope, intercept, dev


def mutation_workbench(knots: int = 100, seed: int = 3):
    """Compiler with one shaped-gate class compiled in, ready to mutate."""
    ctx = builders.CalibrationContext(shaped_mutation_id=1)
    prov = GateProvider(builders.standard_registry(), ctx)
    comp = compiler.Compiler(prov)
    seq = [
        compiler.Gate("prepare_all"),
        compiler.Gate("shaped", (0, knots)),
        compiler.Gate("Sx", (0,)),
        compiler.Gate("measure_all"),
    ]
    compiled = comp.compile_sequence(seq)
    return comp, compiled, ctx


def bench_mutate(knot_counts=(20, 60, 100, 150), reps: int = 10):
    """Stage-decomposed mutation timing vs knot count."""
    out = []
    for n in knot_counts:
        comp, _compiled, ctx = mutation_workbench(n)
        key = GateKey.of("shaped", (0, n))
        reports = []
        amp = ctx.rabi_amp
        for r in range(reps):
            amp = 0.5 + 0.4 * ((r + 1) % 7) / 7
            reports.append(comp.mutate(key, context=ctx.tweak(rabi_amp=amp)))
        out.append(
            (
                n,
                statistics.mean(r.fetch_s for r in reports),
                statistics.mean(r.fit_map_s for r in reports),
                statistics.mean(r.encode_s for r in reports),
                statistics.mean(r.total_s for r in reports),
            )
        )
    return out


def bench_kernels(cycles: int = 200_000, words: int = 200_000):
    """Compiled-vs-pure throughput for the two hot kernels."""
    results = {}
    seg = splines.CubicSegment(0.1, 0.4, -0.2, 0.05, cycles)
    fd = splines.quantize(splines.to_forward_difference(seg), params.PHS)
    ids = np.arange(words, dtype=np.uint64) % 2048
    for name, backend in sorted(available_backends().items()):
        out = np.empty(cycles, dtype=np.uint64)
        t0 = time.perf_counter()
        backend.interpolate_fd(
            params.PHS, int(fd.u0), int(fd.u1), int(fd.u2), int(fd.u3), cycles, out
        )
        interp = time.perf_counter() - t0
        per = params.PACKET_ADDRS
        n_packets = (words + per - 1) // per
        padded = np.zeros(n_packets * per, dtype=np.uint16)
        padded[:words] = ids
        kinds = np.zeros(n_packets, dtype=np.uint8)
        counts = np.full(n_packets, per, dtype=np.uint8)
        blob = np.empty(n_packets * params.WORD_BYTES, dtype=np.uint8)
        t0 = time.perf_counter()
        backend.pack_packets(padded, kinds, counts, blob)
        pack = time.perf_counter() - t0
        results[name] = {
            "interpolate_cycles_per_s": cycles / interp,
            "pack_ids_per_s": words / pack,
            "interpolate_s": interp,
            "pack_s": pack,
        }
    return results


def crossover_study(latencies=(0.5e-3, 2e-3, 8e-3),
                    sizes=(1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024),
                    local_slowdown: float = 4.0, knots: int = 150, reps: int = 5,
                    port: int = 0):
    """Embedded-vs-server fetch cost crossover under injected link latency.

    The local path stands in for a slow embedded CPU (its measured build
    time is scaled by local_slowdown); the remote path pays one injected
    round-trip latency per circuit plus real loopback fetches. Returns
    {latency: crossover_size} plus the raw curves.
    """
    ctx = builders.CalibrationContext()
    local = GateProvider(builders.standard_registry(), ctx)
    server_provider = GateProvider(builders.standard_registry(), ctx)
    server = provider.serve(("127.0.0.1", port), server_provider)
    addr = server.server_address
    try:
        local_per_gate = []
        remote_per_gate = []
        t0 = time.perf_counter()
        session = provider.RemoteSession(addr, timeout=2.0)
        t_connect = time.perf_counter() - t0
        with session:
            # warm both sides once, then time distinct gates
            session.fetch(GateKey.of("shaped", (0, knots, 999)))
            local.fetch(GateKey.of("shaped", (0, knots, 998)))
            for r in range(reps):
                key = GateKey.of("shaped", (0, knots, r))
                t0 = time.perf_counter()
                local.fetch(key)
                local_per_gate.append(time.perf_counter() - t0)
                t0 = time.perf_counter()
                session.fetch(key)
                remote_per_gate.append(time.perf_counter() - t0)
        t_local = statistics.median(local_per_gate) * local_slowdown
        t_remote = statistics.median(remote_per_gate)
        curves = {}
        crossovers = {}
        for lat in latencies:
            rows = []
            crossover = None
            for n in sizes:
                cost_local = t_local * n
                cost_remote = lat + t_connect + t_remote * n
                rows.append((n, cost_local, cost_remote))
                if crossover is None and cost_remote < cost_local:
                    crossover = n
            curves[lat] = rows
            crossovers[lat] = crossover
        return crossovers, curves, t_local, t_remote
    finally:
        server.shutdown()
        server.server_close()


def bytecode_density(n_invocations: int = 10_000_000):
    """Compile a looped circuit with n gate invocations; report bytecode
    size and bytes per gate per channel."""
    ctx = builders.CalibrationContext()
    prov = GateProvider(builders.standard_registry(), ctx)
    comp = compiler.Compiler(prov)
    seq = [compiler.Loop(n_invocations, [compiler.Gate("Sx", (0,))])]
    compiled = comp.compile_sequence(seq)
    total = sum(len(b) for b in compiled.bytecode)
    per_channel = len(compiled.bytecode[0])
    return {
        "total_bytes": total,
        "per_channel_bytes": per_channel,
        "bytes_per_gate_per_channel": per_channel / n_invocations,
        "image_bytes": len(compiled.image),
    }
