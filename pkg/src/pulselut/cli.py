"""Command-line surface for the compile / simulate / serve pipeline."""
from __future__ import annotations

import struct
import sys
from fractions import Fraction
from pathlib import Path

import click

from . import bench as bench_mod
from . import builders, params, progfile, sim
from .compiler import Compiler
from .errors import (
    CapacityExceeded,
    PulselutError,
    RemoteUnavailable,
    SimulationFault,
)
from .provider import GateKey, GateProvider, parse_address, serve

EXIT_INPUT = 2
EXIT_CAPACITY = 3
EXIT_REMOTE = 4
EXIT_SIMULATION = 5


def _fail(exc: PulselutError) -> int:
    if isinstance(exc, CapacityExceeded):
        return EXIT_CAPACITY
    if isinstance(exc, RemoteUnavailable):
        return EXIT_REMOTE
    if isinstance(exc, SimulationFault):
        return EXIT_SIMULATION
    return EXIT_INPUT


def _provider(remote: str | None) -> GateProvider:
    ctx = builders.CalibrationContext()
    routes = {}
    if remote:
        routes[""] = parse_address(remote)  # route everything
    return GateProvider(builders.standard_registry(), ctx, remote_routes=routes)


def _parse_lets(pairs) -> dict:
    out = {}
    for pair in pairs:
        name, _sep, value = pair.partition("=")
        if not _sep:
            raise click.UsageError(f"--let takes NAME=VALUE, got {pair!r}")
        out[name] = Fraction(value)
    return out


def _print_stats(stats: dict):
    click.echo(f"PLUT entries : {stats['plut_entries']}")
    click.echo(f"MLUT entries : {stats['mlut_entries']}")
    click.echo(f"GLUT entries : {stats['glut_entries']}")
    click.echo(f"gates streamed : {stats['gates_streamed']}")
    click.echo(f"address-stage compression ratio : {stats['address_stage_ratio']:.4f}")
    click.echo(f"GLUT-stage compression ratio    : {stats['glut_stage_ratio']:.4f}")


@click.group()
def main():
    """Pulse compiler and gate-sequencer simulator."""


@main.command("compile")
@click.argument("source", type=click.Path(exists=True, path_type=Path))
@click.option("--out", "-o", type=click.Path(path_type=Path), default=None)
@click.option("--let", "lets", multiple=True, help="NAME=VALUE let override")
@click.option("--provider", "remote", default=None, help="remote gate provider HOST:PORT")
@click.option("--dump-slices", is_flag=True, help="print the slice table")
def compile_cmd(source, out, lets, remote, dump_slices):
    """Compile a .jaqal file to a .oct8 program."""
    try:
        comp = Compiler(_provider(remote))
        compiled = comp.compile_source(source.read_text(), _parse_lets(lets))
    except PulselutError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_fail(exc))
    target = out or source.with_suffix(".oct8")
    target.write_bytes(compiled.image)
    click.echo(f"wrote {target} ({len(compiled.image)} bytes)")
    _print_stats(compiled.stats())
    if dump_slices:
        click.echo("slice  duration  channels -> gate ids")
        for i, padded in enumerate(compiled.padded):
            ids = compiled.slice_ids[i]
            names = ",".join(k.name for k in compiled.slice_sources[i])
            click.echo(
                f"{i:5d}  {padded.slice_duration:8d}  "
                f"{{{', '.join(f'{ch}:{gid}' for ch, gid in sorted(ids.items()))}}}  {names}"
            )


@main.command()
@click.argument("program", type=click.Path(exists=True, path_type=Path))
def stats(program):
    """Occupancy and compression ratios of a compiled program."""
    try:
        img = progfile.read_program(program.read_bytes())
    except PulselutError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_fail(exc))
    _print_stats(img.stats())


@main.command()
@click.argument("program", type=click.Path(exists=True, path_type=Path))
@click.option("--measurements", default="", help="comma-separated branch outcomes")
@click.option("--seed", type=int, default=None, help="seeded random outcomes")
@click.option("--trace", "trace_path", type=click.Path(path_type=Path), default=None)
@click.option("--trace-bin", "trace_bin", type=click.Path(path_type=Path), default=None)
@click.option("--decimate", type=int, default=1)
@click.option("--fifo-depth", type=int, default=params.DEFAULT_FIFO_DEPTH)
def simulate(program, measurements, seed, trace_path, trace_bin, decimate, fifo_depth):
    """Replay a program and write its waveform-parameter trace."""
    try:
        img = progfile.read_program(program.read_bytes())
        if measurements:
            source = sim.ScriptedMeasurements(
                int(x) for x in measurements.split(",") if x != ""
            )
        elif seed is not None:
            source = sim.SeededMeasurements(seed)
        else:
            source = None
        config = sim.SimConfig(
            fifo_depth=fifo_depth,
            measurement_source=source,
            trace_decimation=decimate,
        )
        trace = sim.run(img, config)
    except PulselutError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_fail(exc))
    click.echo(f"release cycle {trace.release}, {len(trace.events)} events")
    if trace_path:
        with open(trace_path, "w") as fh:
            trace.to_csv(fh)
        click.echo(f"wrote {trace_path}")
    if trace_bin:
        Path(trace_bin).write_bytes(trace.to_binary())
        click.echo(f"wrote {trace_bin}")


@main.command("trace")
@click.argument("binary", type=click.Path(exists=True, path_type=Path))
@click.option("--out", "-o", type=click.File("w"), default="-")
def trace_cmd(binary, out):
    """Convert a binary trace to CSV."""
    blob = Path(binary).read_bytes()
    rec = struct.Struct("<qbBBxQ")
    out.write("cycle,channel,tone,param,value_hex\n")
    names = {16: "trigger", 17: "sync", 18: "branch", 19: "underflow"}
    for off in range(0, len(blob) - len(blob) % rec.size, rec.size):
        cycle, ch, tone, param, value = rec.unpack_from(blob, off)
        if param < params.PARAMS:
            out.write(f"{cycle},{ch},{tone},{params.PARAM_NAMES[param]},{value:010x}\n")
        else:
            out.write(f"{cycle},{ch},,{names.get(param, param)},{value:x}\n")


@main.command()
@click.argument("source", type=click.Path(exists=True, path_type=Path))
@click.option("--target", required=True, help="gate name to mutate")
@click.option("--args", "gate_args", default="", help="comma-separated gate arguments")
@click.option("--set", "overrides", multiple=True, help="calibration KEY=VALUE")
@click.option("--let", "lets", multiple=True)
@click.option("--budget-ms", type=float, default=50.0)
def mutate(source, target, gate_args, overrides, lets, budget_ms):
    """Compile, mutate one gate, and report the stage timing table."""
    try:
        ctx = builders.CalibrationContext()
        prov = GateProvider(builders.standard_registry(), ctx)
        comp = Compiler(prov)
        compiled = comp.compile_source(source.read_text(), _parse_lets(lets))
        args = tuple(Fraction(a) for a in gate_args.split(",") if a != "")
        changes = {}
        for pair in overrides:
            key, _sep, value = pair.partition("=")
            current = getattr(ctx, key)
            changes[key] = type(current)(float(value)) if current is not None else float(value)
        report = comp.mutate(GateKey.of(target, args), context=ctx.tweak(**changes))
    except PulselutError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_fail(exc))
    click.echo(report.table())
    click.echo(
        f"patch: {len(report.patch)} bytes "
        f"({report.plut_words} PLUT / {report.mlut_words} MLUT / {report.glut_words} GLUT words)"
    )
    status = "within" if report.total_s * 1e3 <= budget_ms else "OVER"
    click.echo(f"{status} budget of {budget_ms:.1f} ms")


@main.command("serve")
@click.option("--addr", default="127.0.0.1:7780", help="HOST:PORT to listen on")
def serve_cmd(addr):
    """Serve gate definitions over the wire protocol."""
    ctx = builders.CalibrationContext()
    prov = GateProvider(builders.standard_registry(), ctx)
    server = serve(parse_address(addr), prov)
    click.echo(f"serving gate definitions on {server.server_address}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


@main.group()
def bench():
    """Scaling and timing harnesses (CSV on stdout)."""


@bench.command("parse")
@click.option("--min", "nmin", type=int, default=8)
@click.option("--max", "nmax", type=int, default=80)
@click.option("--step", type=int, default=8)
@click.option("--reps", type=int, default=5)
def bench_parse_cmd(nmin, nmax, step, reps):
    rows, slope, intercept, dev = bench_mod.bench_parse(range(nmin, nmax + 1, step), reps)
    click.echo("n,mean_s,stddev_s")
    for r in rows:
        click.echo(f"{r.n},{r.mean:.6e},{r.stddev:.6e}")
    click.echo(
        f"# fit: {slope * 1e6:.3f} us/gate + {intercept * 1e6:.3f} us, "
        f"max deviation {dev * 100:.1f}%"
    )


@bench.command("fetch")
@click.option("--knots", default="20,60,100,140,200")
@click.option("--reps", type=int, default=20)
@click.option("--remote", default=None, help="fetch from HOST:PORT instead of locally")
def bench_fetch_cmd(knots, reps, remote):
    counts = [int(k) for k in knots.split(",")]
    addr = parse_address(remote) if remote else None
    rows, slope, intercept, dev = bench_mod.bench_fetch(counts, reps, addr)
    click.echo("knots,mean_s,stddev_s")
    for r in rows:
        click.echo(f"{r.n},{r.mean:.6e},{r.stddev:.6e}")
    click.echo(f"# fit: {slope * 1e6:.4f} us/knot + {intercept * 1e6:.2f} us")


@bench.command("mutate")
@click.option("--knots", default="20,60,100,150")
@click.option("--reps", type=int, default=10)
def bench_mutate_cmd(knots, reps):
    counts = [int(k) for k in knots.split(",")]
    rows = bench_mod.bench_mutate(counts, reps)
    click.echo("knots,fetch_s,fit_map_s,encode_s,total_s")
    for n, fetch_s, fit_s, enc_s, total_s in rows:
        click.echo(f"{n},{fetch_s:.6e},{fit_s:.6e},{enc_s:.6e},{total_s:.6e}")


@bench.command("kernels")
@click.option("--cycles", type=int, default=200_000)
@click.option("--words", type=int, default=200_000)
def bench_kernels_cmd(cycles, words):
    results = bench_mod.bench_kernels(cycles, words)
    click.echo("backend,interpolate_cycles_per_s,pack_ids_per_s")
    for name, r in results.items():
        click.echo(
            f"{name},{r['interpolate_cycles_per_s']:.3e},{r['pack_ids_per_s']:.3e}"
        )
    if len(results) == 2:
        speedup = (
            results["compiled"]["interpolate_cycles_per_s"]
            / results["pure"]["interpolate_cycles_per_s"]
        )
        click.echo(f"# compiled interpolation speedup: {speedup:.1f}x")


@bench.command("crossover")
@click.option("--latencies", default="0.5,2,8", help="ms, comma separated")
@click.option("--slowdown", type=float, default=4.0)
@click.option("--knots", type=int, default=60)
def bench_crossover_cmd(latencies, slowdown, knots):
    lats = [float(x) * 1e-3 for x in latencies.split(",")]
    crossovers, curves, t_local, t_remote = bench_mod.crossover_study(
        lats, local_slowdown=slowdown, knots=knots
    )
    click.echo(
        f"# per-gate cost: local(x{slowdown:g}) {t_local * 1e6:.1f} us, "
        f"remote {t_remote * 1e6:.1f} us"
    )
    click.echo("latency_ms,crossover_gates")
    for lat in lats:
        click.echo(f"{lat * 1e3:g},{crossovers[lat]}")


if __name__ == "__main__":
    main()
