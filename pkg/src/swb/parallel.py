"""Master/worker runtime.

The master owns ``s``, the visit counts and the min-tracker; worker ``j``
owns ``v^j`` and its sampler. Per iteration a worker sends one atom index
(``i_W``) and receives one (``i_M``), each as a 4-byte frame. Transports are
in-process queues between threads or TCP sockets; wire details are in
docs/protocol.md.
"""
from __future__ import annotations

import logging
import queue
import selectors
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._backend import kernels as _default_kernels
from .errors import ChannelClosed, EmptyState, HandshakeError, InvalidArgument, ProtocolError
from .solver import SlidingWindow
from .support import SupportGrid

log = logging.getLogger(__name__)

SHUTDOWN = 0xFFFFFFFF
FRAME = struct.Struct("<I")
FRAME_BYTES = FRAME.size
MAGIC = b"SWB1"
PROTOCOL_VERSION = 1
HANDSHAKE = struct.Struct("<4sIIIId")


def encode_frame(payload: int) -> bytes:
    if not 0 <= payload <= SHUTDOWN:
        raise ProtocolError(f"payload {payload} does not fit in 32 bits")
    return FRAME.pack(payload)


def decode_frame(buf: bytes) -> int:
    if len(buf) != FRAME_BYTES:
        raise ProtocolError(f"short frame: {len(buf)} bytes")
    return FRAME.unpack(buf)[0]


def encode_handshake(n: int, J: int, worker_id: int, gamma: float,
                     version: int = PROTOCOL_VERSION) -> bytes:
    return HANDSHAKE.pack(MAGIC, version, n, J, worker_id, gamma)


def decode_handshake(buf: bytes) -> tuple[int, int, int, int, float]:
    """``(version, n, J, worker_id, gamma)``; raises on bad magic or length."""
    if len(buf) != HANDSHAKE.size:
        raise HandshakeError(f"handshake must be {HANDSHAKE.size} bytes, got {len(buf)}")
    magic, version, n, J, wid, gamma = HANDSHAKE.unpack(buf)
    if magic != MAGIC:
        raise HandshakeError(f"bad magic {magic!r}")
    return version, n, J, wid, gamma


# -- channels ------------------------------------------------------------------


class Endpoint:
    """One side of a bidirectional frame channel with byte accounting."""

    bytes_sent: int
    bytes_received: int

    def send(self, payload: int) -> None:
        raise NotImplementedError

    def recv(self) -> int:
        raise NotImplementedError

    def close(self) -> None:
        pass


class QueueEndpoint(Endpoint):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, doorbell=None, ident: int = 0):
        self.inbox, self.outbox = inbox, outbox
        self.doorbell, self.ident = doorbell, ident
        self.bytes_sent = self.bytes_received = 0

    def send(self, payload: int) -> None:
        buf = encode_frame(payload)
        self.bytes_sent += len(buf)
        self.outbox.put(buf)
        if self.doorbell is not None:
            self.doorbell.put(self.ident)

    def recv(self) -> int:
        buf = self.inbox.get()
        if buf is None:
            raise ChannelClosed("peer closed the channel")
        self.bytes_received += len(buf)
        return decode_frame(buf)

    def close(self) -> None:
        self.outbox.put(None)
        if self.doorbell is not None:
            self.doorbell.put(self.ident)


def inproc_pair(doorbell=None, ident: int = 0) -> tuple[QueueEndpoint, QueueEndpoint]:
    """``(master_side, worker_side)``; the worker side rings ``doorbell`` on send."""
    to_master: queue.Queue = queue.Queue()
    to_worker: queue.Queue = queue.Queue()
    master = QueueEndpoint(to_master, to_worker)
    worker = QueueEndpoint(to_worker, to_master, doorbell, ident)
    return master, worker


def _recv_exact(sock: socket.socket, k: int) -> bytes:
    chunks = []
    while k:
        try:
            b = sock.recv(k)
        except (ConnectionResetError, OSError) as exc:
            raise ChannelClosed(str(exc)) from exc
        if not b:
            if chunks:
                raise ProtocolError("connection closed mid-frame")
            raise ChannelClosed("peer closed the connection")
        chunks.append(b)
        k -= len(b)
    return b"".join(chunks)


class SocketEndpoint(Endpoint):
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.bytes_sent = self.bytes_received = 0

    def send(self, payload: int) -> None:
        buf = encode_frame(payload)
        try:
            self.sock.sendall(buf)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from exc
        self.bytes_sent += len(buf)

    def recv(self) -> int:
        buf = _recv_exact(self.sock, FRAME_BYTES)
        self.bytes_received += len(buf)
        return decode_frame(buf)

    def send_raw(self, buf: bytes) -> None:
        self.sock.sendall(buf)

    def recv_raw(self, k: int) -> bytes:
        return _recv_exact(self.sock, k)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


# -- master ----------------------------------------------------------------------


class Master:
    """Master-side state: ``s``, counts, tracker and the current ``i_M``."""

    def __init__(self, n: int, J: int, gamma: float, window: Optional[int] = None, kernels=None):
        k = kernels or _default_kernels
        self.n, self.J, self.gamma = int(n), int(J), float(gamma)
        self.s = np.zeros(self.n)
        self.counts = np.zeros(self.n, dtype=np.int64)
        self.tracker = k.MinTracker(self.s)
        self.current_i_M = self.tracker.argmin()
        self.window = SlidingWindow(window, self.n) if window else None
        self.t = 0
        self._up = self.gamma / (2.0 * self.J)
        self._down = -self.gamma / 2.0

    def handle(self, j: int, i_W: int) -> int:
        """Reply with the current ``i_M``, then apply the update for ``(i_M, i_W)``."""
        if not 0 <= i_W < self.n:
            raise ProtocolError(f"worker {j} sent atom index {i_W} >= n={self.n}")
        i_M = self.current_i_M
        self.counts[i_M] += 1
        if self.window is not None:
            self.window.push(i_M)
        self.tracker.update(i_M, self._up)
        self.tracker.update(i_W, self._down)
        self.current_i_M = self.tracker.argmin()
        self.t += 1
        return i_M

    def weights(self, windowed: bool = False) -> np.ndarray:
        h = self.window.hist if windowed and self.window is not None else self.counts
        total = h.sum()
        if total == 0:
            raise EmptyState("master has processed no requests")
        return h / total


# -- worker ----------------------------------------------------------------------


class Worker:
    """Worker ``j``: owns ``v^j`` and its sampler, talks to the master through an endpoint."""

    def __init__(self, j: int, grid: SupportGrid, oracle, gamma: float, J: int,
                 kernels=None, prefetch: int = 1024):
        self.j, self.grid, self.oracle = int(j), grid, oracle
        self.gamma, self.J = float(gamma), int(J)
        self.kernels = kernels or _default_kernels
        self.v = np.zeros(grid.n)
        self.iterations = 0
        self.prefetch = max(1, int(prefetch))
        self._buf = np.empty((0, grid.dim))
        self._pos = 0
        self._up = self.gamma / (2.0 * self.J)
        self._down = -self.gamma / 2.0
        self.error: Optional[BaseException] = None

    def _next_x(self) -> np.ndarray:
        # draw(k) equals k single draws, so prefetching does not change the stream
        if self._pos == len(self._buf):
            self._buf = np.ascontiguousarray(self.oracle.draw(self.prefetch))
            self._pos = 0
        x = self._buf[self._pos]
        self._pos += 1
        return x

    def iterate(self, ep: Endpoint) -> bool:
        """One request/reply round; ``False`` once the master signals shutdown."""
        x = self._next_x()
        i_W, _ = self.kernels.c_transform_argmin(x, self.grid.atoms, self.v, self.grid.space.is_sphere)
        ep.send(i_W)
        i_M = ep.recv()
        if i_M == SHUTDOWN:
            return False
        if i_M >= self.grid.n:
            raise ProtocolError(f"master sent atom index {i_M} >= n={self.grid.n}")
        self.v[i_M] += self._up
        self.v[i_W] += self._down
        self.iterations += 1
        return True

    def run(self, ep: Endpoint) -> None:
        try:
            while self.iterate(ep):
                pass
        except ChannelClosed:
            pass
        except BaseException as exc:  # surfaced to the master as a disconnect
            self.error = exc
            log.warning("worker %d failed: %r", self.j, exc)
        finally:
            ep.close()


# -- driver ----------------------------------------------------------------------


@dataclass
class ParallelResult:
    weights: np.ndarray
    counts: np.ndarray
    s: np.ndarray
    worker_v: list
    iterations: int
    per_worker: np.ndarray
    bytes_master: np.ndarray
    bytes_worker: np.ndarray
    tracker_ops: int
    elapsed: float
    dead_workers: list = field(default_factory=list)
    window_weights: Optional[np.ndarray] = None


class _Sources:
    """Picks the next worker to serve: round-robin gate or arrival order."""

    def __init__(self, eps: Sequence[Endpoint], schedule: str, doorbell=None):
        self.eps = list(eps)
        self.schedule = schedule
        self.alive = [True] * len(eps)
        self.doorbell = doorbell
        self._rr = 0
        self._sel = None
        if schedule == "arrival" and doorbell is None:
            self._sel = selectors.DefaultSelector()
            for j, ep in enumerate(self.eps):
                self._sel.register(ep.sock, selectors.EVENT_READ, j)
        self._ready: list = []

    def kill(self, j: int) -> None:
        if self.alive[j]:
            self.alive[j] = False
            if self._sel is not None:
                self._sel.unregister(self.eps[j].sock)

    def any_alive(self) -> bool:
        return any(self.alive)

    def next(self) -> int:
        if self.schedule == "round_robin":
            J = len(self.eps)
            for _ in range(J):
                j = self._rr
                self._rr = (self._rr + 1) % J
                if self.alive[j]:
                    return j
            raise ChannelClosed("no live workers")
        if self.doorbell is not None:
            while True:
                j = self.doorbell.get()
                if self.alive[j]:
                    return j
        while not self._ready:
            if not self.any_alive():
                raise ChannelClosed("no live workers")
            self._ready = [key.data for key, _ in self._sel.select()]
        return self._ready.pop(0)


def _serve(master: Master, eps: Sequence[Endpoint], sources: _Sources, iterations: Optional[int],
           duration: Optional[float], snapshot: Optional[Callable], snapshot_every: int,
           stats_sink, stats_every: int):
    if iterations is None and duration is None:
        raise InvalidArgument("give an iteration or a duration budget")
    t0 = time.perf_counter()
    deadline = None if duration is None else t0 + duration
    dead = []
    while sources.any_alive():
        if iterations is not None and master.t >= iterations:
            break
        if deadline is not None and time.perf_counter() >= deadline:
            break
        j = sources.next()
        try:
            i_W = eps[j].recv()
            eps[j].send(master.handle(j, i_W))
        except (ChannelClosed, ProtocolError) as exc:
            log.warning("worker %d dropped (%s); continuing with the rest", j, exc)
            sources.kill(j)
            dead.append(j)
            eps[j].close()
            continue
        if snapshot is not None and snapshot_every and master.t % snapshot_every == 0:
            snapshot(master)
        if stats_sink is not None and stats_every and master.t % stats_every == 0:
            el = time.perf_counter() - t0
            stats_sink.write(
                f"iter={master.t} min_s={master.tracker.min_key():.6g} "
                f"msgs_per_sec={2 * master.t / max(el, 1e-9):.1f}\n"
            )
    # every live worker has (or will have) one request pending: answer it with shutdown
    for j in range(len(eps)):
        if not sources.alive[j]:
            continue
        try:
            eps[j].recv()
            eps[j].send(SHUTDOWN)
        except (ChannelClosed, ProtocolError):
            dead.append(j)
    return time.perf_counter() - t0, dead


def _result(master, workers, eps, wsides, elapsed, dead) -> ParallelResult:
    per = np.array([w.iterations for w in workers], dtype=np.int64)
    return ParallelResult(
        weights=master.weights(),
        counts=master.counts.copy(),
        s=master.s.copy(),
        worker_v=[w.v.copy() for w in workers],
        iterations=master.t,
        per_worker=per,
        bytes_master=np.array([e.bytes_sent + e.bytes_received for e in eps], dtype=np.int64),
        bytes_worker=np.array([e.bytes_sent + e.bytes_received for e in wsides], dtype=np.int64),
        tracker_ops=int(master.tracker.ops),
        elapsed=elapsed,
        dead_workers=sorted(set(dead)),
        window_weights=master.weights(windowed=True) if master.window is not None else None,
    )


def _handshake_master(ep: SocketEndpoint, n: int, J: int, gamma: float, taken: set) -> int:
    version, wn, wJ, wid, wg = decode_handshake(ep.recv_raw(HANDSHAKE.size))
    if version != PROTOCOL_VERSION or wn != n or wJ != J or wg != gamma:
        raise HandshakeError(
            f"worker parameters (v{version}, n={wn}, J={wJ}, gamma={wg!r}) do not match "
            f"master (v{PROTOCOL_VERSION}, n={n}, J={J}, gamma={gamma!r})"
        )
    if wid >= J or wid in taken:
        raise HandshakeError(f"worker id {wid} is out of range or already connected")
    ep.send_raw(encode_handshake(n, J, wid, gamma))
    return wid


def _handshake_worker(ep: SocketEndpoint, n: int, J: int, wid: int, gamma: float) -> None:
    mine = encode_handshake(n, J, wid, gamma)
    ep.send_raw(mine)
    try:
        reply = ep.recv_raw(HANDSHAKE.size)
    except ChannelClosed as exc:
        raise HandshakeError("master rejected the handshake") from exc
    if reply != mine:
        raise HandshakeError("master handshake does not match")


def accept_workers(listener: socket.socket, n: int, J: int, gamma: float,
                   timeout: Optional[float] = 30.0) -> list:
    """Accept and handshake ``J`` workers; returns endpoints indexed by worker id."""
    listener.settimeout(timeout)
    eps: list = [None] * J
    while any(e is None for e in eps):
        conn, _ = listener.accept()
        conn.settimeout(None)
        ep = SocketEndpoint(conn)
        try:
            wid = _handshake_master(ep, n, J, gamma, {j for j, e in enumerate(eps) if e is not None})
        except (HandshakeError, ChannelClosed) as exc:
            log.warning("rejecting connection: %s", exc)
            ep.close()
            continue
        eps[wid] = ep
    return eps


def connect_worker(address, worker_id: int, n: int, J: int, gamma: float,
                   retries: int = 50, delay: float = 0.1) -> SocketEndpoint:
    for attempt in range(retries):
        try:
            sock = socket.create_connection(address)
            break
        except OSError:
            if attempt == retries - 1:
                raise
            time.sleep(delay)
    ep = SocketEndpoint(sock)
    _handshake_worker(ep, n, J, worker_id, gamma)
    return ep


def run_parallel(oracles: Sequence, grid: SupportGrid, gamma: float, iterations: Optional[int] = None,
                 duration: Optional[float] = None, transport: str = "inproc",
                 schedule: str = "arrival", window: Optional[int] = None,
                 snapshot: Optional[Callable] = None, snapshot_every: int = 0,
                 stats_sink=None, stats_every: int = 0, kernels=None, address=("127.0.0.1", 0),
                 prefetch: int = 1024) -> ParallelResult:
    """Run one master and ``len(oracles)`` worker threads to an iteration or time budget.

    ``schedule="round_robin"`` serves workers in the fixed order 0..J-1, which
    makes the run deterministic given the oracle seeds. With ``"arrival"``
    requests are served as they come in.
    """
    J = len(oracles)
    if J < 1:
        raise InvalidArgument("need at least one worker")
    if iterations is not None and iterations < 1:
        raise EmptyState("zero iterations requested")
    if transport not in ("inproc", "tcp"):
        raise InvalidArgument(f"unknown transport {transport!r}")
    if schedule not in ("arrival", "round_robin"):
        raise InvalidArgument(f"unknown schedule {schedule!r}")
    k = kernels or _default_kernels
    master = Master(grid.n, J, gamma, window, k)
    workers = [Worker(j, grid, o, gamma, J, k, prefetch) for j, o in enumerate(oracles)]

    if transport == "inproc":
        doorbell = queue.SimpleQueue() if schedule == "arrival" else None
        pairs = [inproc_pair(doorbell, j) for j in range(J)]
        eps = [p[0] for p in pairs]
        wsides = [p[1] for p in pairs]
        threads = [threading.Thread(target=w.run, args=(ep,), daemon=True)
                   for w, ep in zip(workers, wsides)]
        for th in threads:
            th.start()
        sources = _Sources(eps, schedule, doorbell)
    else:
        listener = socket.create_server(address)
        addr = listener.getsockname()[:2]
        wsides = [None] * J

        def tcp_worker(w):
            ep = connect_worker(addr, w.j, grid.n, J, gamma)
            wsides[w.j] = ep
            w.run(ep)

        threads = [threading.Thread(target=tcp_worker, args=(w,), daemon=True) for w in workers]
        for th in threads:
            th.start()
        try:
            eps = accept_workers(listener, grid.n, J, gamma)
        finally:
            listener.close()
        sources = _Sources(eps, schedule)

    elapsed, dead = _serve(master, eps, sources, iterations, duration, snapshot, snapshot_every,
                           stats_sink, stats_every)
    for th in threads:
        th.join()
    for ep in eps:
        ep.close()
    return _result(master, workers, eps, wsides, elapsed, dead)


def serve_master(address, grid: SupportGrid, J: int, gamma: float, iterations: Optional[int] = None,
                 duration: Optional[float] = None, schedule: str = "arrival",
                 window: Optional[int] = None, stats_sink=None, stats_every: int = 0,
                 accept_timeout: Optional[float] = None, kernels=None, ready: Optional[Callable] = None):
    """Standalone TCP master for workers in other processes; returns the :class:`Master`."""
    master = Master(grid.n, J, gamma, window, kernels)
    with socket.create_server(address) as listener:
        if ready is not None:
            ready(listener.getsockname()[:2])
        eps = accept_workers(listener, grid.n, J, gamma, accept_timeout)
    sources = _Sources(eps, schedule)
    _serve(master, eps, sources, iterations, duration, None, 0, stats_sink, stats_every)
    for ep in eps:
        ep.close()
    return master


def run_tcp_worker(address, worker_id: int, grid: SupportGrid, oracle, gamma: float, J: int,
                   kernels=None, prefetch: int = 1024) -> Worker:
    """Connect to a master, run until shutdown, and return the worker (with its final ``v``)."""
    w = Worker(worker_id, grid, oracle, gamma, J, kernels, prefetch)
    ep = connect_worker(address, worker_id, grid.n, J, gamma)
    w.run(ep)
    if w.error is not None:
        raise w.error
    return w
