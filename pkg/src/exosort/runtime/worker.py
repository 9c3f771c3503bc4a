"""Worker node: task executors plus the merge controller's control loop."""
from __future__ import annotations

import logging
import queue
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional

from ..partition import PartitionPlan
from ..sortlib import iter_file_records, merge_runs, merge_runs_streaming, sort_and_slice
from ..storage import DEFAULT_GET_CHUNK, DEFAULT_PUT_PART, ObjectKey, ObjectStore, assign_bucket
from .blocks import BlockError, BlockRef, BlockState, restore_block, spill_block, spill_path
from .controller import DEFAULT_THRESHOLD_BLOCKS, DEFAULT_THRESHOLD_BYTES, MergeController
from .events import EventLog
from .tasks import DEFAULT_MAX_RETRIES, FaultInjector, JobFailed, TaskSpec, retry_task

logger = logging.getLogger(__name__)

ACK_POLL_SECONDS = 0.05


class Aborted(RuntimeError):
    """The job was aborted while this task was waiting."""


@dataclass
class WorkerConfig:
    worker_id: int
    cores: int = 4
    map_parallelism: Optional[int] = None
    merge_parallelism: Optional[int] = None
    reduce_parallelism: Optional[int] = None
    spill_dir: str = ""

    def __post_init__(self):
        if self.cores < 1:
            raise ValueError("cores must be positive")
        if self.map_parallelism is None:
            self.map_parallelism = max(1, self.cores * 3 // 4)
        if self.merge_parallelism is None:
            self.merge_parallelism = self.map_parallelism
        if self.reduce_parallelism is None:
            self.reduce_parallelism = self.map_parallelism
        for name in ("map_parallelism", "merge_parallelism", "reduce_parallelism"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class JobSettings:
    threshold_blocks: int = DEFAULT_THRESHOLD_BLOCKS
    threshold_bytes: int = DEFAULT_THRESHOLD_BYTES
    max_retries: int = DEFAULT_MAX_RETRIES
    get_chunk_bytes: int = DEFAULT_GET_CHUNK
    put_part_bytes: int = DEFAULT_PUT_PART
    buckets: List[str] = field(default_factory=lambda: ["bucket-000"])
    seed: int = 0
    output_prefix: str = "output"
    merge_delay_seconds: float = 0.0


class JobContext:
    """State shared by the driver and all workers of one job."""

    def __init__(self, plan: PartitionPlan, store: ObjectStore, settings: JobSettings,
                 log: Optional[EventLog] = None, injector: Optional[FaultInjector] = None):
        self.plan = plan
        self.store = store
        self.settings = settings
        self.log = log or EventLog()
        self.injector = injector or FaultInjector()
        self.abort = threading.Event()
        self.error: Optional[BaseException] = None
        self._lock = threading.Lock()
        self.transport = None

    def fail(self, exc: BaseException) -> None:
        with self._lock:
            if self.error is None:
                self.error = exc
        self.abort.set()

    def output_key(self, index: int) -> ObjectKey:
        bucket = assign_bucket(index, self.settings.buckets, self.settings.seed + 1)
        return ObjectKey(bucket, f"{self.settings.output_prefix}/part-{index:05d}")


def wait_all(futures: List[Future], abort: threading.Event) -> None:
    pending = set(futures)
    while pending:
        done, pending = wait(pending, timeout=ACK_POLL_SECONDS)
        for f in done:
            f.result()
        if pending and abort.is_set():
            raise Aborted("job aborted")


class Worker:
    def __init__(self, config: WorkerConfig, ctx: JobContext):
        self.config = config
        self.id = config.worker_id
        self.ctx = ctx
        self.spill_dir = Path(config.spill_dir or ".")
        self.spill_dir.mkdir(parents=True, exist_ok=True)
        self.local_bounds = ctx.plan.local_reducer_bounds(self.id)
        self.map_pool = ThreadPoolExecutor(config.map_parallelism, f"w{self.id}-map")
        self.merge_pool = ThreadPoolExecutor(config.merge_parallelism, f"w{self.id}-merge")
        self.reduce_pool = ThreadPoolExecutor(config.reduce_parallelism, f"w{self.id}-reduce")
        self.spill_pool = ThreadPoolExecutor(1, f"w{self.id}-spill")
        self.controller = MergeController(
            self.id, config.merge_parallelism, self._launch_merge,
            threshold_blocks=ctx.settings.threshold_blocks,
            threshold_bytes=ctx.settings.threshold_bytes,
            log=ctx.log,
        )
        self.spills: Dict[int, List[Future]] = {}
        self._flush_waiters: List[Future] = []
        self._events: "queue.Queue" = queue.Queue()
        self._loop = threading.Thread(target=self._control_loop, name=f"w{self.id}-control", daemon=True)
        self._loop.start()

    # -- control loop -------------------------------------------------------

    def deliver(self, map_task: str, block: BlockRef, reply) -> None:
        self._events.put(("block", map_task, block, reply))

    def flush(self) -> Future:
        fut: Future = Future()
        self._events.put(("flush", fut))
        return fut

    def alive(self) -> bool:
        return self._loop.is_alive()

    def _control_loop(self) -> None:
        while True:
            ev = self._events.get()
            kind = ev[0]
            if kind == "stop":
                return
            try:
                if kind == "block":
                    _, map_task, block, reply = ev
                    self.controller.on_block_received(block, map_task, reply)
                elif kind == "merge_done":
                    _, seq, spills = ev
                    self.spills[seq] = spills
                    self.controller.on_merge_done(seq)
                elif kind == "merge_failed":
                    _, seq, exc = ev
                    self.controller.on_merge_failed(
                        seq, lambda s, e: retry_task(s, e, self.ctx.settings.max_retries), exc)
                elif kind == "flush":
                    self._flush_waiters.append(ev[1])
                    self.controller.request_flush()
                if self.controller.flushing and self.controller.idle and self._flush_waiters:
                    waiters, self._flush_waiters = self._flush_waiters, []
                    for f in waiters:
                        f.set_result(dict(self.spills))
            except JobFailed as exc:
                self.ctx.fail(exc)
                self._fail_waiters(exc)
            except Exception as exc:  # a bug in the state machine must not hang the job
                logger.exception("worker %s control loop", self.id)
                self.ctx.fail(exc)
                self._fail_waiters(exc)

    def _fail_waiters(self, exc: BaseException) -> None:
        waiters, self._flush_waiters = self._flush_waiters, []
        for f in waiters:
            if not f.done():
                f.set_exception(exc)

    # -- merge --------------------------------------------------------------

    def _launch_merge(self, spec: TaskSpec) -> None:
        fut = self.merge_pool.submit(self._run_merge, spec)
        seq = spec.task_index

        def done(f: Future) -> None:
            if f.cancelled():
                return
            exc = f.exception()
            if exc is None:
                self._events.put(("merge_done", seq, f.result()))
            else:
                self._events.put(("merge_failed", seq, exc))

        fut.add_done_callback(done)

    def _run_merge(self, spec: TaskSpec) -> List[Future]:
        self.ctx.injector.check(spec.name, spec.attempt)
        if self.ctx.settings.merge_delay_seconds:
            time.sleep(self.ctx.settings.merge_delay_seconds)
        runs = [restore_block(b) for b in spec.inputs]
        outputs = merge_runs(runs, self.local_bounds)
        spills = []
        for j, run in enumerate(outputs):
            block = BlockRef.in_memory(f"merge_{self.id}_{spec.task_index}_{j}", run.data, spec.name, self.id)
            path = spill_path(self.spill_dir, self.id, spec.task_index, j)
            spills.append(self.spill_pool.submit(self._spill, block, path))
        return spills

    def _spill(self, block: BlockRef, path: Path) -> BlockRef:
        for attempt in range(self.ctx.settings.max_retries + 1):
            try:
                ref = spill_block(block, path)
                break
            except OSError:
                if attempt == self.ctx.settings.max_retries:
                    raise
                self.ctx.log.emit("spill_fail", task=block.producer_task, worker=self.id, block=block.block_id)
        self.ctx.log.emit("spill", task=block.producer_task, worker=self.id, block=block.block_id,
                          nbytes=block.size_bytes)
        return ref

    # -- map / reduce -------------------------------------------------------

    def execute(self, spec: TaskSpec) -> Future:
        if spec.kind == "map":
            return self.map_pool.submit(self._run_map, spec)
        if spec.kind == "reduce":
            return self.reduce_pool.submit(self._run_reduce, spec)
        raise ValueError(f"worker cannot execute {spec.kind} tasks directly")

    def _run_map(self, spec: TaskSpec) -> dict:
        ctx = self.ctx
        name = spec.name
        t0 = time.perf_counter()
        ctx.log.emit("map_start", task=name, worker=self.id)
        try:
            entry = spec.inputs[0]
            key = ObjectKey(entry["bucket"], entry["key"])
            data = ctx.store.get_object(key, ctx.settings.get_chunk_bytes)
            runs = sort_and_slice(data, ctx.plan)
            acks = []
            for w, run in enumerate(runs):
                if w == len(runs) // 2:
                    ctx.injector.check(name, spec.attempt)
                block_id = f"map{spec.task_index}-w{w}"
                ctx.log.emit("slice_push", task=name, worker=w, block=block_id, nbytes=len(run.data))
                acks.append(ctx.transport.push_slice(self.id, w, spec.task_index, block_id, run.data))
            wait_all(acks, ctx.abort)
        except BaseException:
            ctx.log.emit("map_fail", task=name, worker=self.id)
            raise
        ctx.log.emit("map_end", task=name, worker=self.id, nbytes=len(data))
        return {"task": name, "worker": self.id, "bytes": len(data), "slices": len(runs),
                "seconds": time.perf_counter() - t0}

    def _run_reduce(self, spec: TaskSpec) -> dict:
        ctx = self.ctx
        name = spec.name
        t0 = time.perf_counter()
        ctx.log.emit("reduce_start", task=name, worker=self.id)
        try:
            blocks = [BlockRef.from_dict(d) for d in spec.inputs]
            for b in blocks:
                if b.state is not BlockState.SPILLED or not Path(b.path).exists():
                    raise BlockError(f"reduce ({self.id}, {spec.task_index}) is missing block {b.block_id}")
            index = ctx.plan.output_index(self.id, spec.task_index)
            key = ctx.output_key(index)
            stream = merge_runs_streaming([iter_file_records(b.path) for b in blocks])
            size = ctx.store.put_object_multipart(key, self._faulty(stream, name, spec.attempt),
                                                  ctx.settings.put_part_bytes)
        except BaseException:
            ctx.log.emit("reduce_fail", task=name, worker=self.id)
            raise
        ctx.log.emit("reduce_end", task=name, worker=self.id, nbytes=size)
        return {"task": name, "worker": self.id, "index": index, "bucket": key.bucket, "key": key.key,
                "size": size, "inputs": len(blocks), "seconds": time.perf_counter() - t0}

    def _faulty(self, stream: Iterator[bytes], name: str, attempt: int) -> Iterator[bytes]:
        """Pass ``stream`` through, failing after the first chunk if a fault is injected."""
        first = True
        for chunk in stream:
            yield chunk
            if first:
                first = False
                self.ctx.injector.check(name, attempt)
        if first:
            self.ctx.injector.check(name, attempt)

    def shutdown(self) -> None:
        self._events.put(("stop",))
        for pool in (self.map_pool, self.merge_pool, self.reduce_pool, self.spill_pool):
            pool.shutdown(wait=True, cancel_futures=True)
        self._loop.join(timeout=5)
