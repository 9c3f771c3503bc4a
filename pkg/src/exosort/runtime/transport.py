"""Block and task transport between driver and workers.

Two implementations share one interface: direct in-process calls, and a
length-prefixed TCP protocol. A TCP frame is::

    4-byte big-endian payload length | 1-byte message kind | payload

``SLICE_PUSH`` payloads are ``>IIH`` (map task, destination worker, block id
length), the UTF-8 block id, then the slice bytes. ``ACK`` carries the
block id. ``TASK_ASSIGN``/``TASK_DONE`` carry JSON. ``HEARTBEAT`` carries an
8-byte sequence number that the receiver echoes.
"""
from __future__ import annotations

import enum
import itertools
import json
import logging
import socket
import struct
import threading
from concurrent.futures import Future
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .blocks import BlockRef
from .tasks import TaskFailed, TaskSpec

log = logging.getLogger(__name__)

HEADER = struct.Struct(">IB")
SLICE_HEADER = struct.Struct(">IIH")
MAX_FRAME = 1 << 31


class MessageKind(enum.IntEnum):
    SLICE_PUSH = 1
    ACK = 2
    TASK_ASSIGN = 3
    TASK_DONE = 4
    HEARTBEAT = 5


class FrameError(IOError):
    pass


def encode_frame(kind: MessageKind, payload: bytes) -> bytes:
    if len(payload) >= MAX_FRAME:
        raise FrameError(f"payload of {len(payload)} bytes exceeds frame limit")
    return HEADER.pack(len(payload), int(kind)) + payload


def decode_frames(buf: bytes) -> Tuple[List[Tuple[MessageKind, bytes]], bytes]:
    """Split a byte buffer into whole frames plus the unconsumed remainder."""
    frames = []
    pos = 0
    while len(buf) - pos >= HEADER.size:
        length, kind = HEADER.unpack_from(buf, pos)
        end = pos + HEADER.size + length
        if end > len(buf):
            break
        frames.append((MessageKind(kind), bytes(buf[pos + HEADER.size:end])))
        pos = end
    return frames, bytes(buf[pos:])


def encode_slice(map_task: int, worker: int, block_id: str, data: bytes) -> bytes:
    bid = block_id.encode()
    return SLICE_HEADER.pack(map_task, worker, len(bid)) + bid + data


def decode_slice(payload: bytes) -> Tuple[int, int, str, bytes]:
    map_task, worker, n = SLICE_HEADER.unpack_from(payload)
    start = SLICE_HEADER.size
    return map_task, worker, payload[start:start + n].decode(), payload[start + n:]


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            return None
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


class FramedConnection:
    """A socket with a locked writer and a reader thread dispatching frames."""

    def __init__(self, sock: socket.socket, on_frame: Callable[["FramedConnection", MessageKind, bytes], None],
                 name: str = "conn"):
        self.sock = sock
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.on_frame = on_frame
        self._wlock = threading.Lock()
        self.closed = False
        self._reader = threading.Thread(target=self._read_loop, name=name, daemon=True)
        self._reader.start()

    def send(self, kind: MessageKind, payload: bytes = b"") -> None:
        frame = encode_frame(kind, payload)
        with self._wlock:
            if self.closed:
                raise FrameError("connection closed")
            self.sock.sendall(frame)

    def _read_loop(self) -> None:
        try:
            while True:
                head = _recv_exact(self.sock, HEADER.size)
                if head is None:
                    break
                length, kind = HEADER.unpack(head)
                payload = _recv_exact(self.sock, length) if length else b""
                if payload is None:
                    break
                self.on_frame(self, MessageKind(kind), payload)
        except OSError:
            pass
        finally:
            self.closed = True

    def close(self) -> None:
        with self._wlock:
            self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def _resolve(fut: Future, value=True) -> None:
    if not fut.done():
        try:
            fut.set_result(value)
        except Exception:  # already resolved by a racing ack
            pass


class Transport:
    """Moves map slices to merge controllers and tasks to workers."""

    def bind(self, workers: Sequence) -> None:
        self.workers = list(workers)

    def push_slice(self, src: int, dst: int, map_task: int, block_id: str, data: bytes) -> Future:
        """Deliver a slice; the future resolves when the receiver acknowledges it."""
        raise NotImplementedError

    def assign(self, spec: TaskSpec) -> Future:
        """Run ``spec`` on ``spec.target_worker``; resolves to the task's result dict."""
        raise NotImplementedError

    def heartbeat(self, worker: int, timeout: float = 5.0) -> bool:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessTransport(Transport):
    def push_slice(self, src, dst, map_task, block_id, data):
        fut: Future = Future()
        block = BlockRef.in_memory(block_id, data, f"map-{map_task}", worker=dst)
        self.workers[dst].deliver(f"map-{map_task}", block, lambda: _resolve(fut))
        return fut

    def assign(self, spec):
        return self.workers[spec.target_worker].execute(spec)

    def heartbeat(self, worker, timeout=5.0):
        return self.workers[worker].alive()


class _WorkerServer:
    def __init__(self, worker):
        self.worker = worker
        self.sock = socket.create_server(("127.0.0.1", 0))
        self.address = self.sock.getsockname()
        self.conns: List[FramedConnection] = []
        self._stop = False
        self._thread = threading.Thread(target=self._accept_loop, daemon=True,
                                        name=f"worker-{worker.id}-server")
        self._thread.start()

    def _accept_loop(self) -> None:
        while not self._stop:
            try:
                s, _ = self.sock.accept()
            except OSError:
                return
            self.conns.append(FramedConnection(s, self._on_frame, f"worker-{self.worker.id}-conn"))

    def _on_frame(self, conn: FramedConnection, kind: MessageKind, payload: bytes) -> None:
        if kind is MessageKind.SLICE_PUSH:
            map_task, _, block_id, data = decode_slice(payload)
            block = BlockRef.in_memory(block_id, data, f"map-{map_task}", worker=self.worker.id)
            self.worker.deliver(f"map-{map_task}", block, lambda: self._send(conn, MessageKind.ACK, block_id.encode()))
        elif kind is MessageKind.TASK_ASSIGN:
            msg = json.loads(payload)
            spec = TaskSpec.from_dict(msg["spec"])
            fut = self.worker.execute(spec)
            fut.add_done_callback(lambda f, req=msg["req"]: self._task_done(conn, req, spec.name, f))
        elif kind is MessageKind.HEARTBEAT:
            self._send(conn, MessageKind.HEARTBEAT, payload)
        else:
            log.warning("worker %s: unexpected frame %s", self.worker.id, kind.name)

    def _task_done(self, conn, req: int, task: str, fut: Future) -> None:
        exc = fut.exception()
        if exc is None:
            msg = {"req": req, "task": task, "ok": True, "result": fut.result()}
        else:
            msg = {"req": req, "task": task, "ok": False, "error": f"{type(exc).__name__}: {exc}"}
        self._send(conn, MessageKind.TASK_DONE, json.dumps(msg).encode())

    @staticmethod
    def _send(conn, kind, payload) -> None:
        try:
            conn.send(kind, payload)
        except OSError:
            pass

    def close(self) -> None:
        self._stop = True
        self.sock.close()
        for c in self.conns:
            c.close()


class TcpTransport(Transport):
    """Loopback TCP between every pair of endpoints.

    Each worker listens on its own port. Map slices travel over one
    connection per (source, destination) pair; the driver keeps one control
    connection per worker for task assignment and heartbeats.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._servers: List[_WorkerServer] = []
        self._data_conns: Dict[Tuple[int, int], FramedConnection] = {}
        self._ctrl_conns: Dict[int, FramedConnection] = {}
        self._acks: Dict[Tuple[int, int], Dict[str, List[Future]]] = {}
        self._tasks: Dict[int, Future] = {}
        self._beats: Dict[int, threading.Event] = {}
        self._req = itertools.count()

    def bind(self, workers):
        super().bind(workers)
        self._servers = [_WorkerServer(w) for w in self.workers]

    def _connect(self, dst: int, on_frame, name: str) -> FramedConnection:
        sock = socket.create_connection(self._servers[dst].address)
        return FramedConnection(sock, on_frame, name)

    def _data_conn(self, src: int, dst: int) -> FramedConnection:
        with self._lock:
            conn = self._data_conns.get((src, dst))
            if conn is None or conn.closed:
                self._acks.setdefault((src, dst), {})
                conn = self._connect(dst, lambda c, k, p, pair=(src, dst): self._on_data_frame(pair, k, p),
                                     f"slice-{src}-{dst}")
                self._data_conns[(src, dst)] = conn
            return conn

    def _on_data_frame(self, pair, kind, payload) -> None:
        if kind is MessageKind.ACK:
            with self._lock:
                futs = self._acks[pair].pop(payload.decode(), [])
            for f in futs:
                _resolve(f)

    def push_slice(self, src, dst, map_task, block_id, data):
        fut: Future = Future()
        conn = self._data_conn(src, dst)
        with self._lock:
            self._acks[(src, dst)].setdefault(block_id, []).append(fut)
        conn.send(MessageKind.SLICE_PUSH, encode_slice(map_task, dst, block_id, data))
        return fut

    def _ctrl_conn(self, worker: int) -> FramedConnection:
        with self._lock:
            conn = self._ctrl_conns.get(worker)
            if conn is None or conn.closed:
                conn = self._connect(worker, self._on_ctrl_frame, f"ctrl-{worker}")
                self._ctrl_conns[worker] = conn
            return conn

    def _on_ctrl_frame(self, conn, kind, payload) -> None:
        if kind is MessageKind.TASK_DONE:
            msg = json.loads(payload)
            with self._lock:
                fut = self._tasks.pop(msg["req"], None)
            if fut is None:
                return
            if msg["ok"]:
                fut.set_result(msg["result"])
            else:
                fut.set_exception(TaskFailed(msg.get("task", "remote task"), msg["error"]))
        elif kind is MessageKind.HEARTBEAT:
            (seq,) = struct.unpack(">Q", payload)
            ev = self._beats.pop(seq, None)
            if ev:
                ev.set()

    def assign(self, spec):
        fut: Future = Future()
        req = next(self._req)
        with self._lock:
            self._tasks[req] = fut
        payload = json.dumps({"req": req, "spec": spec.to_dict()}).encode()
        self._ctrl_conn(spec.target_worker).send(MessageKind.TASK_ASSIGN, payload)
        return fut

    def heartbeat(self, worker, timeout=5.0):
        seq = next(self._req)
        ev = threading.Event()
        self._beats[seq] = ev
        try:
            self._ctrl_conn(worker).send(MessageKind.HEARTBEAT, struct.pack(">Q", seq))
        except OSError:
            return False
        return ev.wait(timeout)

    def close(self):
        with self._lock:
            conns = list(self._data_conns.values()) + list(self._ctrl_conns.values())
            self._data_conns.clear()
            self._ctrl_conns.clear()
        for c in conns:
            c.close()
        for s in self._servers:
            s.close()


def make_transport(kind: str) -> Transport:
    if kind in ("in-process", "inprocess", "local"):
        return InProcessTransport()
    if kind == "tcp":
        return TcpTransport()
    raise ValueError(f"unknown transport {kind!r}; expected 'in-process' or 'tcp'")
