"""Gate cache, invalidation, wire protocol, remote equivalence."""
import threading
from fractions import Fraction

import pytest

from pulselut import builders, provider, pulses
from pulselut.errors import ProtocolError, RemoteUnavailable, UnknownGate
from pulselut.provider import (
    GateKey,
    GateProvider,
    decode_definition,
    decode_fetch,
    encode_definition,
    encode_fetch,
    remote_fetch,
    serve,
)


@pytest.fixture
def local(context):
    return GateProvider(builders.standard_registry(), context)


class TestCache:
    def test_builder_invoked_once(self, local):
        key = GateKey.of("Sx", (0,))
        first = local.fetch(key)
        second = local.fetch(key)
        assert first is second
        assert local.builder_calls == 1

    def test_invalidate_triggers_rebuild(self, local):
        key = GateKey.of("Sx", (0,))
        local.fetch(key)
        assert local.generation(key) == 0
        assert local.invalidate(key=key) == 1
        local.fetch(key)
        assert local.builder_calls == 2
        assert local.generation(key) == 1

    def test_invalidate_by_name(self, local):
        for q in range(3):
            local.fetch(GateKey.of("Sx", (q,)))
        local.fetch(GateKey.of("Sy", (0,)))
        assert local.invalidate(name="Sx") == 3

    def test_invalidate_all(self, local):
        for q in range(5):
            local.fetch(GateKey.of("Sx", (q,)))
            local.fetch(GateKey.of("Sy", (q,)))
        assert local.invalidate() == 10

    def test_invalidate_empty(self, local):
        assert local.invalidate() == 0

    def test_unknown_gate(self, local):
        with pytest.raises(UnknownGate):
            local.fetch(GateKey.of("NotAGate"))

    def test_context_change_invalidates(self, local, context):
        key = GateKey.of("Sx", (0,))
        local.fetch(key)
        local.context = context.tweak(rabi_amp=0.5)
        rebuilt = local.fetch(key)
        assert local.builder_calls == 2
        assert rebuilt.pulses[0].slots[(0, 0)].value == 0.5

    def test_concurrent_fetch_single_build(self, context):
        calls = []
        barrier = threading.Barrier(8)

        def slow_builder(args, ctx):
            calls.append(1)
            return builders.sx(args, ctx)

        prov = GateProvider({"Sx": slow_builder}, context)
        key = GateKey.of("Sx", (0,))
        results = []

        def work():
            barrier.wait()
            results.append(prov.fetch(key))

        threads = [threading.Thread(target=work) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(calls) == 1
        assert all(r is results[0] for r in results)


class TestWireCodec:
    def test_fetch_roundtrip(self):
        key = GateKey("shaped", (Fraction(3), Fraction(-7, 2)))
        frame = encode_fetch(key)
        kind_byte = frame[9]
        assert frame[4:8] == b"GPR1"
        from pulselut.provider import read_frame

        class FakeSock:
            def __init__(self, data):
                self.data = data

            def recv(self, n):
                out, self.data = self.data[:n], self.data[n:]
                return out

        kind, payload = read_frame(FakeSock(frame))
        assert kind == provider.FETCH
        assert decode_fetch(payload) == key

    def test_definition_roundtrip_exhaustive_nodes(self, context):
        gate = pulses.GateDefinition(
            "mixed",
            (Fraction(1, 3),),
            [
                pulses.Pulse(
                    2,
                    512,
                    {
                        (0, 0): pulses.Mixed(
                            [pulses.Scalar(0.25), pulses.Spline([0.0, 0.5, 0.1])]
                        ),
                        (1, 1): pulses.Discrete([1e6, 2e6]),
                        (3, 0): pulses.Spline([0.0, 0.125]),
                    },
                    pulses.PulseMetadata(
                        sync_flag=True,
                        feedforward_enable=True,
                        frame_apply_mask=2,
                        frame_invert_mask=1,
                        frame_apply_at_end=True,
                    ),
                    mutation_id=9,
                )
            ],
        )
        frame = encode_definition(gate)
        body = frame[4:]
        assert body[:4] == b"GPR1"
        decoded = decode_definition(body[6:])
        assert decoded == gate.canonical()

    def test_builder_definitions_roundtrip(self, local, context):
        for name, args in [("Sx", (0,)), ("MS", (0, 1)), ("shaped", (2, 17)),
                           ("Rz", (1, Fraction(1, 4)))]:
            gate = local.fetch(GateKey.of(name, args))
            frame = encode_definition(gate)
            decoded = decode_definition(frame[4 + 6 :][: len(frame)])
            assert decoded == gate.canonical()

    def test_truncated_frame(self):
        with pytest.raises(ProtocolError):
            decode_fetch(b"\x05\x00ab")


class TestRemote:
    def test_remote_equals_local(self, context):
        server_prov = GateProvider(builders.standard_registry(), context)
        server = serve(("127.0.0.1", 0), server_prov)
        try:
            local_prov = GateProvider(builders.standard_registry(), context)
            for name, args in [("Sx", (0,)), ("Sy", (3,)), ("MS", (0, 1)),
                               ("shaped", (0, 20)), ("prepare_all", ())]:
                key = GateKey.of(name, args)
                got = remote_fetch(server.server_address, key, timeout=2.0)
                want = local_prov.fetch(key)
                assert encode_definition(got) == encode_definition(want)
        finally:
            server.shutdown()
            server.server_close()

    def test_remote_unknown_gate(self, context):
        server = serve(("127.0.0.1", 0), GateProvider({}, context))
        try:
            with pytest.raises(UnknownGate):
                remote_fetch(server.server_address, GateKey.of("nope"), timeout=2.0)
        finally:
            server.shutdown()
            server.server_close()

    def test_unreachable_raises_after_retry(self):
        with pytest.raises(RemoteUnavailable):
            remote_fetch(("127.0.0.1", 9), GateKey.of("Sx", (0,)), timeout=0.05)

    def test_provider_routing(self, context):
        server_ctx = context.tweak(rabi_amp=0.123)
        server = serve(("127.0.0.1", 0), GateProvider(builders.standard_registry(), server_ctx))
        try:
            prov = GateProvider(
                builders.standard_registry(),
                context,
                remote_routes={"remote_": None, "Sx": server.server_address},
                timeout=2.0,
            )
            gate = prov.fetch(GateKey.of("Sx", (0,)))
            assert gate.pulses[0].slots[(0, 0)].value == 0.123
            assert prov.remote_calls == 1
        finally:
            server.shutdown()
            server.server_close()

    def test_env_var_routes_unknown_names(self, context, monkeypatch):
        server = serve(("127.0.0.1", 0), GateProvider(builders.standard_registry(), context))
        try:
            host, port = server.server_address
            monkeypatch.setenv("GATE_PROVIDER_ADDR", f"{host}:{port}")
            prov = GateProvider({}, context, timeout=2.0)  # no local builders
            gate = prov.fetch(GateKey.of("Sx", (0,)))
            assert gate.name == "Sx"
        finally:
            server.shutdown()
            server.server_close()

    def test_frame_size_scales_linearly_with_knots(self, local):
        sizes = {}
        for n in (50, 100, 200):
            gate = local.fetch(GateKey.of("shaped", (0, n)))
            sizes[n] = len(encode_definition(gate))
        # serialization arithmetic: 8 bytes per knot
        assert sizes[100] - sizes[50] == 50 * 8
        assert sizes[200] - sizes[100] == 100 * 8


class TestCacheTransparency:
    def test_cold_vs_warm_compile_identical(self, context):
        from pulselut.compiler import Compiler

        src = "register q[2]\nSx q[0]\nSy q[1]\nSx q[0]"
        prov = GateProvider(builders.standard_registry(), context)
        warmup = Compiler(prov)
        cold_image = warmup.compile_source(src).image
        again = Compiler(prov)  # same provider, warm cache
        warm_image = again.compile_source(src).image
        assert cold_image == warm_image
