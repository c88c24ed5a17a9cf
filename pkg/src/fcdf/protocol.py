"""The aggregation protocol: framing, state machines, transports, drivers.

Wire format: every frame is ``b"FCDF" | version 0x01 | type | payload length
(u32 big-endian) | payload``.  Header and payload scalars are big-endian
(network order); embedded cryptographic blobs (ciphertexts) keep their own
little-endian storage format.  Frames above 64 MiB are rejected before
allocation.

The server and client are pure state machines: (session, message) -> outgoing
messages, with session mutation only on accepted transitions, so every
transition is unit-testable without a network.  All I/O lives in the drivers
at the bottom, which run the same step functions over either an in-process
loopback transport or TCP sockets.

The server never holds key material — structurally: no session field exists
for it, and this module never imports key types.  Whatever the server
aggregates, only key-holding clients can read.

One session is synchronous and lockstep: the server waits for all k clients
at each phase; there is no dropout handling.  Any client owning the shared
key can decrypt any ciphertext it intercepts; confidentiality is only
against the server, matching the trust model this protocol is drawn from.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from . import fhe, ring
from .ecdf import (
    FEATURE,
    LABEL,
    Dataset,
    DistributionPolicy,
    DomainSummary,
    Ecdf,
    ecdf_eval,
    ecdf_from_flat,
    flatten_cdf,
    local_domain,
    merge_domains,
)
from .errors import (
    ContractError,
    FcdfError,
    FramingError,
    PolicyError,
    ProtocolError,
    ValidationError,
)

MAGIC = b"FCDF"
VERSION = 0x01
HEADER_SIZE = 10
MAX_PAYLOAD = 64 * 1024 * 1024

MSG_HELLO = 0x01
MSG_POLICY = 0x02
MSG_CDF_SUBMIT = 0x03
MSG_AGG_RESULT = 0x04
MSG_ERROR = 0x05

KIND_CODE = {LABEL: 1, FEATURE: 2}
KIND_NAME = {1: LABEL, 2: FEATURE}

ERR_OUT_OF_PHASE = 1
ERR_DUPLICATE_CLIENT = 2
ERR_PARAM_MISMATCH = 3
ERR_UNKNOWN_CLIENT = 4
ERR_BAD_MESSAGE = 5

DEFAULT_PORT = 7001


@dataclass
class Hello:
    client_id: int
    summary: DomainSummary


@dataclass
class Policy:
    scheme: fhe.SchemeParams
    k: int
    policy: DistributionPolicy


@dataclass
class CdfSubmit:
    client_id: int
    chunks: list  # [(chunk_index, ciphertext_bytes)]


@dataclass
class AggResult:
    k: int
    chunks: list  # [(chunk_index, ciphertext_bytes)]


@dataclass
class ErrorMsg:
    code: int
    text: str


# --- serialization -----------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.offset = offset

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.data):
            raise FramingError("truncated payload", self.offset)
        out = self.data[self.offset : self.offset + count]
        self.offset += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def u8(self) -> int:
        return self.unpack(">B")[0]

    def u32(self) -> int:
        return self.unpack(">I")[0]

    def u64(self) -> int:
        return self.unpack(">Q")[0]


def _pack_summary(s: DomainSummary) -> bytes:
    out = [struct.pack(">B", KIND_CODE[s.kind])]
    if s.kind == LABEL:
        out.append(struct.pack(">I", len(s.labels)))
        out.append(np.asarray(s.labels, dtype=">i8").tobytes())
    else:
        out.append(struct.pack(">I", len(s.ranges)))
        for lo, hi in s.ranges:
            out.append(struct.pack(">dd", float(lo), float(hi)))
    return b"".join(out)


def _unpack_summary(r: _Reader) -> DomainSummary:
    kind = KIND_NAME.get(r.u8())
    if kind is None:
        raise FramingError("unknown domain kind", r.offset - 1)
    if kind == LABEL:
        count = r.u32()
        labels = np.frombuffer(r.take(8 * count), dtype=">i8").astype(np.int64)
        return DomainSummary(LABEL, labels=labels)
    dims = r.u32()
    ranges = np.array([r.unpack(">dd") for _ in range(dims)], dtype=np.float64)
    return DomainSummary(FEATURE, ranges=ranges.reshape(dims, 2))


def _pack_policy(p: DistributionPolicy) -> bytes:
    out = [struct.pack(">BI", KIND_CODE[p.kind], p.n_dims)]
    for grid in p.grids:
        out.append(struct.pack(">I", len(grid)))
        if p.kind == LABEL:
            out.append(np.asarray(grid, dtype=">i8").tobytes())
        else:
            out.append(np.asarray(grid, dtype=">f8").tobytes())
    return b"".join(out)


def _unpack_policy(r: _Reader) -> DistributionPolicy:
    kind = KIND_NAME.get(r.u8())
    if kind is None:
        raise FramingError("unknown policy kind", r.offset - 1)
    dims = r.u32()
    grids = []
    for _ in range(dims):
        g = r.u32()
        if kind == LABEL:
            grids.append(np.frombuffer(r.take(8 * g), dtype=">i8").astype(np.int64))
        else:
            grids.append(np.frombuffer(r.take(8 * g), dtype=">f8").astype(np.float64))
    return DistributionPolicy(kind, tuple(grids))


def _pack_chunks(chunks: list) -> bytes:
    out = [struct.pack(">I", len(chunks))]
    for index, blob in chunks:
        out.append(struct.pack(">II", index, len(blob)))
        out.append(blob)
    return b"".join(out)


def _unpack_chunks(r: _Reader) -> list:
    count = r.u32()
    chunks = []
    for _ in range(count):
        index, size = r.unpack(">II")
        chunks.append((index, r.take(size)))
    return chunks


def serialize(message) -> bytes:
    """Message to a complete wire frame."""
    if isinstance(message, Hello):
        mtype = MSG_HELLO
        payload = struct.pack(">I", message.client_id) + _pack_summary(message.summary)
    elif isinstance(message, Policy):
        mtype = MSG_POLICY
        scheme = message.scheme
        payload = (
            struct.pack(
                ">IQBBI",
                scheme.ring.n,
                scheme.ring.q,
                scheme.scale_bits,
                scheme.plain_modulus_bits,
                message.k,
            )
            + _pack_policy(message.policy)
        )
    elif isinstance(message, CdfSubmit):
        mtype = MSG_CDF_SUBMIT
        payload = struct.pack(">I", message.client_id) + _pack_chunks(message.chunks)
    elif isinstance(message, AggResult):
        mtype = MSG_AGG_RESULT
        payload = struct.pack(">I", message.k) + _pack_chunks(message.chunks)
    elif isinstance(message, ErrorMsg):
        mtype = MSG_ERROR
        payload = struct.pack(">I", message.code) + message.text.encode("utf-8")
    else:
        raise ContractError(f"cannot serialize {type(message).__name__}")
    if len(payload) > MAX_PAYLOAD:
        raise FramingError("payload exceeds the 64 MiB cap", HEADER_SIZE)
    return MAGIC + struct.pack(">BBI", VERSION, mtype, len(payload)) + payload


def deserialize(frame: bytes):
    """Complete wire frame back to a message; inverse of serialize."""
    if len(frame) < HEADER_SIZE:
        raise FramingError("frame shorter than the header", len(frame))
    if frame[:4] != MAGIC:
        raise FramingError("bad magic", 0)
    version, mtype, length = struct.unpack_from(">BBI", frame, 4)
    if version != VERSION:
        raise FramingError(f"unsupported version {version}", 4)
    if length > MAX_PAYLOAD:
        raise FramingError("payload exceeds the 64 MiB cap", 6)
    if len(frame) != HEADER_SIZE + length:
        raise FramingError("frame length does not match the header", HEADER_SIZE)
    r = _Reader(frame, HEADER_SIZE)
    if mtype == MSG_HELLO:
        client_id = r.u32()
        msg = Hello(client_id, _unpack_summary(r))
    elif mtype == MSG_POLICY:
        n, q = r.u32(), r.u64()
        scale_bits, pmb = r.u8(), r.u8()
        k = r.u32()
        try:
            scheme = fhe.SchemeParams(ring.RingParams(n, q), scale_bits, pmb)
        except FcdfError as exc:
            raise FramingError(f"invalid scheme parameters: {exc}", HEADER_SIZE)
        msg = Policy(scheme, k, _unpack_policy(r))
    elif mtype == MSG_CDF_SUBMIT:
        client_id = r.u32()
        msg = CdfSubmit(client_id, _unpack_chunks(r))
    elif mtype == MSG_AGG_RESULT:
        k = r.u32()
        msg = AggResult(k, _unpack_chunks(r))
    elif mtype == MSG_ERROR:
        code = r.u32()
        msg = ErrorMsg(code, frame[r.offset :].decode("utf-8"))
        r.offset = len(frame)
    else:
        raise FramingError(f"unknown message type {mtype:#x}", 5)
    if r.offset != len(frame):
        raise FramingError("trailing bytes after payload", r.offset)
    return msg


def chunk_layout(total_points: int, n: int) -> list:
    """Slot counts of the ciphertext chunks a CDF of total_points splits into."""
    counts = []
    remaining = total_points
    while remaining > 0:
        take = min(n, remaining)
        counts.append(take)
        remaining -= take
    return counts


# --- server state machine ------------------------------------------------------

COLLECT_DOMAINS = "CollectDomains"
POLICY_SENT = "PolicySent"
COLLECT_CIPHERTEXTS = "CollectCiphertexts"
DONE = "Done"

BROADCAST = "*"


@dataclass
class ServerSession:
    """Phase, collected summaries and ciphertexts; never any key material."""

    k: int
    scheme: fhe.SchemeParams
    grid_size: int = 100
    phase: str = COLLECT_DOMAINS
    domains: dict = field(default_factory=dict)  # client_id -> DomainSummary
    sources: dict = field(default_factory=dict)  # client_id -> connection id
    submissions: dict = field(default_factory=dict)  # client_id -> [Ciphertext]
    policy: DistributionPolicy | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("server needs k >= 1")


def _err(source, code, text):
    return [(source, ErrorMsg(code, text))]


def server_step(session: ServerSession, message, source) -> list:
    """One transition; returns [(destination, message)].

    destination is a connection id or BROADCAST.  The session mutates only
    when the message is accepted; every rejection leaves it untouched.
    """
    if isinstance(message, Hello):
        return _server_hello(session, message, source)
    if isinstance(message, CdfSubmit):
        return _server_submit(session, message, source)
    if isinstance(message, ErrorMsg):
        raise ProtocolError(
            f"client error in phase {session.phase}: {message.code} {message.text}"
        )
    return _err(source, ERR_BAD_MESSAGE,
                f"server cannot accept {type(message).__name__}")


def _server_hello(session: ServerSession, message: Hello, source) -> list:
    if session.phase != COLLECT_DOMAINS:
        return _err(source, ERR_OUT_OF_PHASE,
                    f"HELLO not accepted in phase {session.phase}")
    if message.client_id in session.domains:
        return _err(source, ERR_DUPLICATE_CLIENT,
                    f"client {message.client_id} already joined")
    if session.domains:
        reference = next(iter(session.domains.values()))
        if message.summary.kind != reference.kind:
            return _err(source, ERR_PARAM_MISMATCH, "dataset kind mismatch")
        if message.summary.n_dims != reference.n_dims:
            return _err(source, ERR_PARAM_MISMATCH, "dimensionality mismatch")
    session.domains[message.client_id] = message.summary
    session.sources[message.client_id] = source
    if len(session.domains) < session.k:
        return []
    try:
        session.policy = merge_domains(
            [session.domains[c] for c in sorted(session.domains)], session.grid_size
        )
    except PolicyError as exc:  # unreachable after per-arrival checks, but honest
        raise ProtocolError(f"cannot merge domains: {exc}")
    session.phase = POLICY_SENT
    policy_msg = Policy(session.scheme, session.k, session.policy)
    return [(BROADCAST, policy_msg)]


def _server_submit(session: ServerSession, message: CdfSubmit, source) -> list:
    if session.phase not in (POLICY_SENT, COLLECT_CIPHERTEXTS):
        return _err(source, ERR_OUT_OF_PHASE,
                    f"CDF_SUBMIT not accepted in phase {session.phase}")
    if message.client_id not in session.domains:
        return _err(source, ERR_UNKNOWN_CLIENT,
                    f"client {message.client_id} never joined")
    if message.client_id in session.submissions:
        return _err(source, ERR_DUPLICATE_CLIENT,
                    f"client {message.client_id} already submitted")
    layout = chunk_layout(session.policy.total_points, session.scheme.ring.n)
    indices = sorted(index for index, _ in message.chunks)
    if indices != list(range(len(layout))):
        return _err(source, ERR_BAD_MESSAGE,
                    f"expected chunks 0..{len(layout) - 1}, got {indices}")
    cts = [None] * len(layout)
    for index, blob in message.chunks:
        try:
            ct = fhe.ciphertext_from_bytes(blob, session.scheme)
        except ContractError as exc:
            return _err(source, ERR_PARAM_MISMATCH, str(exc))
        except (ValidationError, FramingError) as exc:
            return _err(source, ERR_BAD_MESSAGE, f"chunk {index}: {exc}")
        if ct.slot_count != layout[index]:
            return _err(source, ERR_BAD_MESSAGE,
                        f"chunk {index} carries {ct.slot_count} slots, "
                        f"expected {layout[index]}")
        cts[index] = ct
    session.submissions[message.client_id] = cts
    session.phase = COLLECT_CIPHERTEXTS
    if len(session.submissions) < session.k:
        return []
    aggregates = []
    for index in range(len(layout)):
        total = fhe.ct_sum(
            [session.submissions[c][index] for c in sorted(session.submissions)]
        )
        aggregates.append((index, fhe.ciphertext_to_bytes(total)))
    session.phase = DONE
    return [(BROADCAST, AggResult(session.k, aggregates))]


# --- client state machine ------------------------------------------------------

SENT_HELLO = "SentHello"
GOT_POLICY = "GotPolicy"
SUBMITTED = "Submitted"
GOT_AGGREGATE = "GotAggregate"
REPORTED = "Reported"


@dataclass
class ClientSession:
    client_id: int
    dataset: Dataset
    sk: fhe.SecretKey
    rng: np.random.Generator
    phase: str = "New"
    scheme: fhe.SchemeParams | None = None
    policy: DistributionPolicy | None = None
    local: Ecdf | None = None
    central: Ecdf | None = None
    k: int | None = None


def client_start(session: ClientSession) -> list:
    """Kick off: announce the local domain."""
    summary = local_domain(session.dataset)
    session.phase = SENT_HELLO
    return [Hello(session.client_id, summary)]


def client_step(session: ClientSession, message) -> list:
    if isinstance(message, ErrorMsg):
        raise ProtocolError(f"server refused: {message.code} {message.text}")
    if isinstance(message, Policy):
        return _client_policy(session, message)
    if isinstance(message, AggResult):
        return _client_aggregate(session, message)
    raise ProtocolError(f"unexpected {type(message).__name__} in phase {session.phase}")


def _client_policy(session: ClientSession, message: Policy) -> list:
    if session.phase != SENT_HELLO:
        raise ProtocolError(f"POLICY arrived in phase {session.phase}")
    if message.policy.kind != session.dataset.kind:
        session.phase = "Failed"
        return [ErrorMsg(ERR_PARAM_MISMATCH,
                         f"policy kind {message.policy.kind} does not match local "
                         f"dataset kind {session.dataset.kind}")]
    session.phase = GOT_POLICY
    session.policy = message.policy
    session.k = message.k
    # encode under the policy's layout, encrypt under our own key's ring;
    # a ring mismatch is the server's to reject
    session.scheme = fhe.SchemeParams(
        session.sk.s.params, message.scheme.scale_bits,
        message.scheme.plain_modulus_bits,
    )
    flat = flatten_cdf(ecdf_eval(session.dataset, session.policy))
    n = session.scheme.ring.n
    vectors = [
        fhe.PlainVector(flat[start : start + count])
        for start, count in _chunk_offsets(len(flat), n)
    ]
    cts = fhe.encrypt_many(session.sk, vectors, session.scheme, session.rng)
    chunks = [(i, fhe.ciphertext_to_bytes(ct)) for i, ct in enumerate(cts)]
    # the local CDF kept for reporting is the one actually transported:
    # quantized to the scheme's fixed-point lattice, like the central CDF
    quantized = np.rint(flat * session.scheme.scale) / session.scheme.scale
    session.local = ecdf_from_flat(session.policy, quantized)
    session.phase = SUBMITTED
    return [CdfSubmit(session.client_id, chunks)]


def _chunk_offsets(total: int, n: int) -> list:
    offsets = []
    start = 0
    for count in chunk_layout(total, n):
        offsets.append((start, count))
        start += count
    return offsets


def _client_aggregate(session: ClientSession, message: AggResult) -> list:
    if session.phase != SUBMITTED:
        raise ProtocolError(f"AGG_RESULT arrived in phase {session.phase}")
    session.phase = GOT_AGGREGATE
    layout = chunk_layout(session.policy.total_points, session.scheme.ring.n)
    by_index = dict(message.chunks)
    if sorted(by_index) != list(range(len(layout))):
        raise ProtocolError("aggregate is missing chunks")
    parts = []
    for index in range(len(layout)):
        try:
            ct = fhe.ciphertext_from_bytes(by_index[index], session.scheme)
        except FcdfError as exc:
            raise ProtocolError(f"undecodable aggregate chunk {index}: {exc}")
        if ct.sum_depth > session.scheme.max_sum_depth:
            raise ProtocolError(
                f"aggregate depth {ct.sum_depth} exceeds the noise budget"
            )
        if ct.sum_depth != message.k:
            raise ProtocolError(
                f"aggregate depth {ct.sum_depth} disagrees with k={message.k}"
            )
        parts.append(fhe.decrypt(session.sk, ct, session.scheme).values)
    central_flat = np.concatenate(parts) / message.k
    session.central = ecdf_from_flat(session.policy, central_flat)
    session.k = message.k
    session.phase = REPORTED
    return []


# --- transports ----------------------------------------------------------------

class LoopbackConnection:
    """One endpoint of an in-process frame pipe."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    def send_frame(self, frame: bytes):
        self._outbox.put(frame)

    def recv_frame(self, timeout: float | None = None) -> bytes | None:
        try:
            return self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no frame within the timeout")

    def close(self):
        if not self._closed:
            self._closed = True
            self._outbox.put(None)


def loopback_pair() -> tuple:
    a_to_b: queue.Queue = queue.Queue()
    b_to_a: queue.Queue = queue.Queue()
    return (
        LoopbackConnection(b_to_a, a_to_b),
        LoopbackConnection(a_to_b, b_to_a),
    )


class LoopbackNetwork:
    """connect() yields the client end; the server end lands in the listener."""

    def __init__(self):
        self._pending: queue.Queue = queue.Queue()

    def connect(self) -> LoopbackConnection:
        client_end, server_end = loopback_pair()
        self._pending.put(server_end)
        return client_end

    def accept(self, timeout: float | None = None):
        try:
            return self._pending.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self):
        pass


def _recv_exact(sock: socket.socket, count: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < count:
        chunk = sock.recv(count - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


class TcpConnection:
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._lock = threading.Lock()

    @classmethod
    def connect(cls, host: str, port: int, timeout: float | None = None,
                retry_for: float = 0.0) -> "TcpConnection":
        import time

        deadline = time.monotonic() + retry_for
        while True:
            try:
                sock = socket.create_connection((host, port), timeout=timeout)
                sock.settimeout(None)
                return cls(sock)
            except OSError:
                if time.monotonic() >= deadline:
                    raise
                time.sleep(0.05)

    def send_frame(self, frame: bytes):
        with self._lock:
            self._sock.sendall(frame)

    def recv_frame(self, timeout: float | None = None) -> bytes | None:
        self._sock.settimeout(timeout)
        try:
            header = _recv_exact(self._sock, HEADER_SIZE)
        except socket.timeout:
            raise TimeoutError("no frame within the timeout")
        except OSError:
            return None
        if header is None:
            return None
        if header[:4] != MAGIC:
            raise FramingError("bad magic", 0)
        length = struct.unpack_from(">I", header, 6)[0]
        if length > MAX_PAYLOAD:
            raise FramingError("payload exceeds the 64 MiB cap", 6)
        payload = _recv_exact(self._sock, length) if length else b""
        if payload is None:
            return None
        return header + payload

    def close(self):
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class TcpListener:
    def __init__(self, host: str, port: int):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(64)
        self.address = self._sock.getsockname()

    def accept(self, timeout: float | None = None):
        self._sock.settimeout(timeout)
        try:
            conn, _ = self._sock.accept()
            return TcpConnection(conn)
        except socket.timeout:
            return None
        except OSError:
            return None

    def close(self):
        self._sock.close()


# --- drivers ---------------------------------------------------------------------

@dataclass
class ServerResult:
    k: int
    policy: DistributionPolicy


@dataclass
class ClientResult:
    client_id: int
    local: Ecdf
    central: Ecdf
    k: int
    policy: DistributionPolicy


def run_server(listener, k: int, scheme: fhe.SchemeParams, grid_size: int = 100,
               timeout: float | None = None) -> ServerResult:
    """Accept connections, feed frames to the state machine, tear down on Done.

    All session mutation happens on this thread; reader threads only move
    frames.  A registered client disconnecting mid-session aborts the run.
    """
    session = ServerSession(k=k, scheme=scheme, grid_size=grid_size)
    inbox: queue.Queue = queue.Queue()
    connections: dict[int, object] = {}
    stop = threading.Event()

    def acceptor():
        conn_id = 0
        while not stop.is_set():
            conn = listener.accept(timeout=0.05)
            if conn is None:
                continue
            cid = conn_id
            conn_id += 1
            connections[cid] = conn
            threading.Thread(target=reader, args=(cid, conn), daemon=True).start()

    def reader(cid: int, conn):
        while True:
            try:
                frame = conn.recv_frame(timeout=None)
            except (FramingError, OSError) as exc:
                inbox.put((cid, exc))
                return
            inbox.put((cid, frame))
            if frame is None:
                return

    accept_thread = threading.Thread(target=acceptor, daemon=True)
    accept_thread.start()
    try:
        while session.phase != DONE:
            try:
                cid, item = inbox.get(timeout=timeout)
            except queue.Empty:
                raise ProtocolError(
                    f"timed out waiting for clients in phase {session.phase}"
                )
            if item is None:
                if cid in session.sources.values() and session.phase != DONE:
                    raise ProtocolError(
                        f"client connection lost in phase {session.phase}"
                    )
                continue
            if isinstance(item, FramingError):
                _try_send(connections.get(cid),
                          ErrorMsg(ERR_BAD_MESSAGE, str(item)))
                continue
            if isinstance(item, Exception):
                continue  # broken connection; treated like a close
            try:
                message = deserialize(item)
            except FramingError as exc:
                _try_send(connections.get(cid), ErrorMsg(ERR_BAD_MESSAGE, str(exc)))
                continue
            outgoing = server_step(session, message, cid)
            for dest, reply in outgoing:
                if dest == BROADCAST:
                    for client_id in sorted(session.sources):
                        _try_send(connections.get(session.sources[client_id]), reply)
                else:
                    _try_send(connections.get(dest), reply)
        return ServerResult(k=session.k, policy=session.policy)
    finally:
        stop.set()
        accept_thread.join()
        for conn in connections.values():
            conn.close()
        listener.close()


def _try_send(conn, message):
    if conn is None:
        return
    try:
        conn.send_frame(serialize(message))
    except OSError:
        pass


def run_client(conn, dataset: Dataset, sk: fhe.SecretKey, client_id: int,
               rng: np.random.Generator, timeout: float | None = None) -> ClientResult:
    """Drive one client session over an established connection."""
    session = ClientSession(client_id=client_id, dataset=dataset, sk=sk, rng=rng)
    try:
        for message in client_start(session):
            conn.send_frame(serialize(message))
        while session.phase != REPORTED:
            frame = conn.recv_frame(timeout=timeout)
            if frame is None:
                raise ProtocolError(
                    f"server connection lost in phase {session.phase}"
                )
            outgoing = client_step(session, deserialize(frame))
            for message in outgoing:
                conn.send_frame(serialize(message))
            if session.phase == "Failed":
                raise ProtocolError("aborted: local dataset incompatible with policy")
    finally:
        conn.close()
    return ClientResult(
        client_id=client_id,
        local=session.local,
        central=session.central,
        k=session.k,
        policy=session.policy,
    )


def run_loopback_federation(datasets: list, sk: fhe.SecretKey,
                            scheme: fhe.SchemeParams, grid_size: int,
                            client_rngs: list,
                            timeout: float | None = 30.0) -> tuple:
    """Server plus k clients as threads over the loopback transport."""
    net = LoopbackNetwork()
    results: dict = {}
    errors: list = []

    def server_task():
        try:
            results["server"] = run_server(net, len(datasets), scheme,
                                           grid_size, timeout=timeout)
        except Exception as exc:  # propagated after join
            errors.append(exc)

    def client_task(ds, rng):
        try:
            conn = net.connect()
            results[ds.client_id] = run_client(conn, ds, sk, ds.client_id, rng,
                                               timeout=timeout)
        except Exception as exc:
            errors.append(exc)

    threads = [threading.Thread(target=server_task, daemon=True)]
    threads += [
        threading.Thread(target=client_task, args=(ds, rng), daemon=True)
        for ds, rng in zip(datasets, client_rngs)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    server_result = results.pop("server")
    client_results = [results[ds.client_id] for ds in datasets]
    return server_result, client_results
