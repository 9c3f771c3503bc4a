"""Per-worker merge controller.

Buffers incoming map slices and launches a merge once the buffer reaches
its block or byte threshold. When the buffer is full and every merge slot
is busy, acknowledgements are withheld; the sending map task cannot finish
and so keeps its scheduler slot, which throttles the map stage.

The class is a plain state machine. It is not thread safe: the owning
worker feeds it from a single control loop.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Set, Tuple

from .blocks import BlockRef
from .events import EventLog
from .tasks import TaskSpec

DEFAULT_THRESHOLD_BLOCKS = 40
DEFAULT_THRESHOLD_BYTES = 2 * 1000 ** 3

Reply = Callable[[], None]


class AckDecision(enum.Enum):
    ACK = "ack"
    DEFERRED = "deferred"
    DUPLICATE = "duplicate"


@dataclass
class MergeControllerState:
    buffered_blocks: List[BlockRef] = field(default_factory=list)
    threshold_blocks: int = DEFAULT_THRESHOLD_BLOCKS
    threshold_bytes: int = DEFAULT_THRESHOLD_BYTES
    running_merges: int = 0
    pending_acks: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def buffered_bytes(self) -> int:
        return sum(b.size_bytes for b in self.buffered_blocks)


class MergeController:
    def __init__(self, worker_id: int, merge_parallelism: int, launch: Callable[[TaskSpec], None],
                 threshold_blocks: int = DEFAULT_THRESHOLD_BLOCKS,
                 threshold_bytes: int = DEFAULT_THRESHOLD_BYTES,
                 log: Optional[EventLog] = None):
        if threshold_blocks < 1 or merge_parallelism < 1:
            raise ValueError("threshold and merge parallelism must be positive")
        self.worker_id = worker_id
        self.merge_parallelism = merge_parallelism
        self.launch = launch
        self.log = log or EventLog()
        self.state = MergeControllerState(threshold_blocks=threshold_blocks, threshold_bytes=threshold_bytes)
        self._bytes = 0
        self._seen: Set[str] = set()
        self._waiters: Dict[str, List[Reply]] = {}
        self._deferred: List[str] = []
        self._overflow: Deque[Tuple[str, BlockRef]] = deque()
        self._running: Dict[int, TaskSpec] = {}
        self.next_seq = 0
        self.flushing = False
        self.merges_launched = 0

    # -- queries ------------------------------------------------------------

    def buffer_full(self) -> bool:
        s = self.state
        return len(s.buffered_blocks) >= s.threshold_blocks or self._bytes >= s.threshold_bytes

    def slot_free(self) -> bool:
        return self.state.running_merges < self.merge_parallelism

    @property
    def idle(self) -> bool:
        return (not self.state.buffered_blocks and not self._overflow
                and self.state.running_merges == 0)

    # -- events -------------------------------------------------------------

    def on_block_received(self, block: BlockRef, map_task: str, reply: Reply) -> AckDecision:
        bid = block.block_id
        if bid in self._seen:
            if bid in self._waiters:
                self._waiters[bid].append(reply)
                self._emit("ack_deferred", map_task, bid, block.size_bytes)
                return AckDecision.DEFERRED
            self._emit("ack_duplicate", map_task, bid, block.size_bytes)
            reply()
            return AckDecision.DUPLICATE
        self._seen.add(bid)
        if self.buffer_full():
            self._overflow.append((map_task, block))
            self._waiters[bid] = [reply]
            self.state.pending_acks.append((map_task, bid))
            self._emit("block_pending", map_task, bid, block.size_bytes)
            self._emit("ack_deferred", map_task, bid, block.size_bytes)
            return AckDecision.DEFERRED
        return self._admit(map_task, block, [reply])

    def on_merge_done(self, seq: int) -> None:
        spec = self._running.pop(seq)
        self.state.running_merges -= 1
        self._emit("merge_end", spec.name)
        self._drain()

    def on_merge_failed(self, seq: int, retry: Callable[[TaskSpec], TaskSpec], error: BaseException) -> None:
        """Re-launch a failed merge in the same slot. ``retry`` raises when attempts run out."""
        spec = self._running[seq]
        self._emit("merge_fail", spec.name)
        spec = retry(spec, error)
        self._running[seq] = spec
        self._emit("merge_start", spec.name, nbytes=sum(b.size_bytes for b in spec.inputs))
        self.launch(spec)

    def request_flush(self) -> None:
        self.flushing = True
        self._drain()

    # -- internals ----------------------------------------------------------

    def _emit(self, event: str, task: Optional[str] = None, block: Optional[str] = None,
              nbytes: Optional[int] = None) -> None:
        self.log.emit(event, task=task, worker=self.worker_id, block=block, nbytes=nbytes)

    def _ack(self, map_task: str, bid: str, replies: List[Reply]) -> None:
        self._emit("ack", map_task, bid)
        for r in replies:
            r()

    def _admit(self, map_task: str, block: BlockRef, replies: List[Reply]) -> AckDecision:
        self.state.buffered_blocks.append(block)
        self._bytes += block.size_bytes
        self._emit("block_buffered", map_task, block.block_id, block.size_bytes)
        if self.buffer_full() and not self.slot_free():
            self._waiters[block.block_id] = replies
            self._deferred.append(block.block_id)
            self.state.pending_acks.append((map_task, block.block_id))
            self._emit("ack_deferred", map_task, block.block_id, block.size_bytes)
            return AckDecision.DEFERRED
        self._ack(map_task, block.block_id, replies)
        if self.buffer_full():
            self._launch()
        return AckDecision.ACK

    def _launch(self) -> None:
        blocks = self.state.buffered_blocks
        self.state.buffered_blocks = []
        self._bytes = 0
        seq = self.next_seq
        self.next_seq += 1
        spec = TaskSpec("merge", seq, self.worker_id, tuple(blocks))
        self._running[seq] = spec
        self.state.running_merges += 1
        self.merges_launched += 1
        for b in blocks:
            self._emit("block_consumed", spec.name, b.block_id, b.size_bytes)
        self._emit("merge_start", spec.name, nbytes=sum(b.size_bytes for b in blocks))
        # buffered-but-unacked blocks are now inside a merge
        deferred, self._deferred = self._deferred, []
        for bid in deferred:
            self._release(bid)
        self.launch(spec)

    def _release(self, bid: str) -> None:
        replies = self._waiters.pop(bid, [])
        for i, (mt, b) in enumerate(self.state.pending_acks):
            if b == bid:
                del self.state.pending_acks[i]
                break
        else:
            mt = None
        self._ack(mt, bid, replies)

    def _drain(self) -> None:
        if self.buffer_full() and self.slot_free():
            self._launch()
        while self._overflow and not self.buffer_full():
            map_task, block = self._overflow.popleft()
            replies = self._waiters.pop(block.block_id)
            self.state.pending_acks.remove((map_task, block.block_id))
            self._admit(map_task, block, replies)
        if self.flushing and self.state.buffered_blocks and self.slot_free():
            self._launch()
