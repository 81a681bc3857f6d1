"""Gate resolution: in-process builder registry, memoization, and the
remote fetch protocol.

A gate call is identified by its name and canonicalized rational
arguments. Fetches hit a cache whose entries track a generation counter
and the calibration-context token, so both explicit invalidation and
context changes force a rebuild. Remote definitions travel over a
length-prefixed binary protocol (magic GPR1, little-endian throughout).
"""
from __future__ import annotations

import os
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from fractions import Fraction

from . import params, pulses
from .errors import ProtocolError, RemoteUnavailable, UnknownGate

FETCH = 1
DEF = 2
ERR = 3

_LEN = struct.Struct("<I")
_RATIONAL = struct.Struct("<qQ")


def parse_address(text: str) -> tuple:
    host, _sep, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


def canonical_args(args) -> tuple:
    """Gate arguments to a rational tuple; qubit references flatten to
    their index (single logical register)."""
    out = []
    for a in args:
        if isinstance(a, tuple) and len(a) == 3 and a[0] == "q":
            out.append(Fraction(a[2]))
        else:
            out.append(Fraction(a))
    return tuple(out)


@dataclass(frozen=True)
class GateKey:
    name: str
    args: tuple

    @classmethod
    def of(cls, name, args=()):
        return cls(name, canonical_args(args))


@dataclass
class CacheEntry:
    definition: pulses.GateDefinition
    generation: int = 0
    valid: bool = True
    context_token: int = 0


class GateProvider:
    """Routes fetches to local builders or a remote endpoint, memoized.

    Builders are callables (args, context) -> GateDefinition registered
    by name. Name-prefix routes send matching gates to a remote address
    instead; everything else builds locally.
    """

    def __init__(self, registry=None, context=None, remote_routes=None,
                 timeout=0.1, retries=1):
        self.registry = dict(registry or {})
        self.context = context
        self.remote_routes = dict(remote_routes or {})
        self.timeout = timeout
        self.retries = retries
        self._cache: dict[GateKey, CacheEntry] = {}
        self._lock = threading.Lock()
        self._key_locks: dict[GateKey, threading.Lock] = {}
        self.builder_calls = 0
        self.remote_calls = 0

    # -- cache ------------------------------------------------------------

    def fetch(self, key: GateKey) -> pulses.GateDefinition:
        token = getattr(self.context, "token", 0)
        with self._lock:
            entry = self._cache.get(key)
            if entry is not None and entry.valid and entry.context_token == token:
                return entry.definition
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            with self._lock:
                entry = self._cache.get(key)
                if entry is not None and entry.valid and entry.context_token == token:
                    return entry.definition
            definition = self._build(key)
            definition.validate()
            with self._lock:
                old = self._cache.get(key)
                generation = old.generation + 1 if old else 0
                self._cache[key] = CacheEntry(definition, generation, True, token)
            return definition

    def _build(self, key: GateKey) -> pulses.GateDefinition:
        route = self._route(key.name)
        if route is not None:
            self.remote_calls += 1
            return remote_fetch(route, key, timeout=self.timeout, retries=self.retries)
        builder = self.registry.get(key.name)
        if builder is None:
            raise UnknownGate(f"no builder or route for gate {key.name!r}")
        self.builder_calls += 1
        return builder(key.args, self.context)

    def _route(self, name: str):
        for prefix, addr in self.remote_routes.items():
            if name.startswith(prefix):
                return addr
        if name not in self.registry:
            env = os.environ.get("GATE_PROVIDER_ADDR")
            if env:
                return parse_address(env)
        return None

    def generation(self, key: GateKey) -> int | None:
        entry = self._cache.get(key)
        return entry.generation if entry else None

    def invalidate(self, key: GateKey | None = None, name: str | None = None) -> int:
        """Mark one key, every arity/argument variant of a name, or the
        whole cache for recomputation. Entries are kept (stable handles)."""
        with self._lock:
            if key is not None:
                targets = [key] if key in self._cache else []
            elif name is not None:
                targets = [k for k in self._cache if k.name == name]
            else:
                targets = list(self._cache)
            count = 0
            for k in targets:
                if self._cache[k].valid:
                    self._cache[k].valid = False
                    count += 1
            return count


# -- wire protocol -----------------------------------------------------------

def _frame(kind: int, payload: bytes) -> bytes:
    body = params.WIRE_MAGIC + bytes([params.WIRE_VERSION, kind]) + payload
    return _LEN.pack(len(body)) + body


def _read_exact(sock, n: int, offset_base: int = 0) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ProtocolError("connection closed mid-frame", offset_base + len(buf))
        buf += chunk
    return buf


def read_frame(sock):
    head = _read_exact(sock, _LEN.size)
    (length,) = _LEN.unpack(head)
    body = _read_exact(sock, length, _LEN.size)
    if len(body) < 6 or body[:4] != params.WIRE_MAGIC:
        raise ProtocolError(f"bad frame magic {body[:4]!r}", 0)
    if body[4] != params.WIRE_VERSION:
        raise ProtocolError(f"unsupported protocol version {body[4]}", 4)
    return body[5], body[6:]


def encode_fetch(key: GateKey) -> bytes:
    name = key.name.encode()
    payload = struct.pack("<H", len(name)) + name + struct.pack("<H", len(key.args))
    for a in key.args:
        payload += _RATIONAL.pack(a.numerator, a.denominator)
    return _frame(FETCH, payload)


def decode_fetch(payload: bytes) -> GateKey:
    try:
        (nlen,) = struct.unpack_from("<H", payload, 0)
        name = payload[2 : 2 + nlen].decode()
        (argc,) = struct.unpack_from("<H", payload, 2 + nlen)
        args = []
        off = 4 + nlen
        for _ in range(argc):
            num, den = _RATIONAL.unpack_from(payload, off)
            off += _RATIONAL.size
            args.append(Fraction(num, den))
    except (struct.error, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed fetch frame: {exc}", 0) from None
    return GateKey(name, tuple(args))


_NODE_TAGS = {pulses.Scalar: 0, pulses.Discrete: 1, pulses.Spline: 2, pulses.Mixed: 3}


def _encode_node(node) -> bytes:
    tag = _NODE_TAGS[type(node)]
    if isinstance(node, pulses.Scalar):
        return struct.pack("<Bd", tag, node.value)
    if isinstance(node, pulses.Mixed):
        out = struct.pack("<BI", tag, len(node.children))
        for child in node.children:
            out += _encode_node(child)
        return out
    values = node.values if isinstance(node, pulses.Discrete) else node.knots
    return struct.pack("<BI", tag, len(values)) + struct.pack(
        f"<{len(values)}d", *[float(v) for v in values]
    )


def _decode_node(payload: bytes, off: int):
    tag = payload[off]
    if tag == 0:
        (value,) = struct.unpack_from("<d", payload, off + 1)
        return pulses.Scalar(value), off + 9
    (count,) = struct.unpack_from("<I", payload, off + 1)
    off += 5
    if tag == 3:
        children = []
        for _ in range(count):
            child, off = _decode_node(payload, off)
            children.append(child)
        return pulses.Mixed(children), off
    values = struct.unpack_from(f"<{count}d", payload, off)
    off += 8 * count
    return (pulses.Discrete(values) if tag == 1 else pulses.Spline(values)), off


def _metadata_byte(md: pulses.PulseMetadata) -> int:
    return (
        (1 if md.sync_flag else 0)
        | (2 if md.wait_trigger else 0)
        | (4 if md.feedforward_enable else 0)
        | (md.frame_apply_mask << 3)
        | (md.frame_invert_mask << 5)
        | (128 if md.frame_apply_at_end else 0)
    )


def _metadata_from_byte(b: int) -> pulses.PulseMetadata:
    return pulses.PulseMetadata(
        sync_flag=bool(b & 1),
        wait_trigger=bool(b & 2),
        feedforward_enable=bool(b & 4),
        frame_apply_mask=(b >> 3) & 3,
        frame_invert_mask=(b >> 5) & 3,
        frame_apply_at_end=bool(b & 128),
    )


def encode_definition(definition: pulses.GateDefinition) -> bytes:
    d = definition.canonical()
    name = d.name.encode()
    payload = struct.pack("<H", len(name)) + name
    payload += struct.pack("<H", len(d.args))
    for a in d.args:
        payload += _RATIONAL.pack(a.numerator, a.denominator)
    payload += struct.pack("<I", len(d.pulses))
    for p in d.pulses:
        slots = sorted(p.slots.items())
        payload += struct.pack(
            "<BQBqB",
            p.channel,
            p.cycles,
            _metadata_byte(p.metadata),
            -1 if p.mutation_id is None else p.mutation_id,
            len(slots),
        )
        for (param, tone), node in slots:
            payload += struct.pack("<BB", param, tone) + _encode_node(node)
    return _frame(DEF, payload)


def decode_definition(payload: bytes) -> pulses.GateDefinition:
    try:
        (nlen,) = struct.unpack_from("<H", payload, 0)
        name = payload[2 : 2 + nlen].decode()
        off = 2 + nlen
        (argc,) = struct.unpack_from("<H", payload, off)
        off += 2
        args = []
        for _ in range(argc):
            num, den = _RATIONAL.unpack_from(payload, off)
            off += _RATIONAL.size
            args.append(Fraction(num, den))
        (pulse_count,) = struct.unpack_from("<I", payload, off)
        off += 4
        pulse_list = []
        for _ in range(pulse_count):
            channel, cycles, mdb, mid, nslots = struct.unpack_from("<BQBqB", payload, off)
            off += struct.calcsize("<BQBqB")
            slots = {}
            for _ in range(nslots):
                param, tone = struct.unpack_from("<BB", payload, off)
                node, off = _decode_node(payload, off + 2)
                slots[(param, tone)] = node
            pulse_list.append(
                pulses.Pulse(
                    channel,
                    cycles,
                    slots,
                    _metadata_from_byte(mdb),
                    None if mid < 0 else mid,
                )
            )
    except (struct.error, IndexError, UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"malformed definition frame: {exc}", 0) from None
    return pulses.GateDefinition(name, args, pulse_list)


def encode_error(code: int, text: str) -> bytes:
    raw = text.encode()
    return _frame(ERR, struct.pack("<HH", code, len(raw)) + raw)


# -- server / client -----------------------------------------------------------

class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        provider = self.server.provider
        while True:
            try:
                kind, payload = read_frame(self.request)
            except ProtocolError:
                return
            except (ConnectionError, OSError):
                return
            if kind != FETCH:
                self.request.sendall(encode_error(1, f"unexpected frame kind {kind}"))
                continue
            try:
                key = decode_fetch(payload)
                definition = provider.fetch(key)
            except UnknownGate as exc:
                self.request.sendall(encode_error(2, str(exc)))
                continue
            except Exception as exc:  # surfaced to the client as ERR
                self.request.sendall(encode_error(3, str(exc)))
                continue
            self.request.sendall(encode_definition(definition))


class GateServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, provider: GateProvider):
        super().__init__(address, _Handler)
        self.provider = provider


def serve(address, provider: GateProvider) -> GateServer:
    """Start answering FETCH frames in background threads; returns the
    server (caller shuts it down)."""
    server = GateServer(address, provider)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server


def _response_to_definition(kind, payload) -> pulses.GateDefinition:
    if kind == ERR:
        code, ln = struct.unpack_from("<HH", payload, 0)
        text = payload[4 : 4 + ln].decode(errors="replace")
        if code == 2:
            raise UnknownGate(text)
        raise RemoteUnavailable(f"remote error {code}: {text}")
    if kind != DEF:
        raise ProtocolError(f"unexpected response kind {kind}", 0)
    return decode_definition(payload)


def remote_fetch(address, key: GateKey, timeout: float = 0.1,
                 retries: int = 1) -> pulses.GateDefinition:
    last = None
    for _attempt in range(retries + 1):
        try:
            with socket.create_connection(address, timeout=timeout) as sock:
                sock.sendall(encode_fetch(key))
                kind, payload = read_frame(sock)
            return _response_to_definition(kind, payload)
        except (socket.timeout, ConnectionError, OSError) as exc:
            last = exc
    raise RemoteUnavailable(f"gate provider at {address} unreachable: {last}")


class RemoteSession:
    """One connection, many fetches; how a compile pass talks to the
    server (per-fetch reconnects would dominate small-gate costs)."""

    def __init__(self, address, timeout: float = 0.1):
        try:
            self.sock = socket.create_connection(address, timeout=timeout)
        except OSError as exc:
            raise RemoteUnavailable(f"gate provider at {address} unreachable: {exc}")
        self.address = address

    def fetch(self, key: GateKey) -> pulses.GateDefinition:
        try:
            self.sock.sendall(encode_fetch(key))
            kind, payload = read_frame(self.sock)
        except (socket.timeout, ConnectionError, OSError) as exc:
            raise RemoteUnavailable(f"session to {self.address} failed: {exc}")
        return _response_to_definition(kind, payload)

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
