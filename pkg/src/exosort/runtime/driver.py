"""Driver-side scheduling of the map/shuffle and reduce stages."""
from __future__ import annotations

import logging
import time
from collections import defaultdict, deque
from concurrent.futures import FIRST_COMPLETED, Future, wait
from dataclasses import dataclass, field, replace
from typing import Deque, Dict, List, Optional, Sequence

from ..partition import PartitionPlan
from .blocks import BlockRef
from .tasks import JobFailed, TaskSpec, retry_task
from .transport import InProcessTransport, Transport
from .worker import ACK_POLL_SECONDS, JobContext, Worker, WorkerConfig

logger = logging.getLogger(__name__)


@dataclass
class StageReport:
    stage: str
    seconds: float = 0.0
    tasks: int = 0
    task_seconds: List[float] = field(default_factory=list)
    retries: int = 0
    slice_deliveries: int = 0
    merges_per_worker: Dict[int, int] = field(default_factory=dict)
    bytes: int = 0
    results: List[dict] = field(default_factory=list)


class Cluster:
    """A set of workers plus the transport joining them to the driver."""

    def __init__(self, configs: Sequence[WorkerConfig], ctx: JobContext,
                 transport: Optional[Transport] = None):
        if len(configs) != ctx.plan.num_workers:
            raise ValueError(f"cluster has {len(configs)} workers, plan needs {ctx.plan.num_workers}")
        self.ctx = ctx
        self.configs = list(configs)
        self.workers = [Worker(c, ctx) for c in configs]
        self.transport = transport or InProcessTransport()
        self.transport.bind(self.workers)
        ctx.transport = self.transport
        # (worker, local reducer) -> spilled merge outputs in merge order
        self.spilled: Dict[tuple, List[BlockRef]] = {}

    def healthy(self) -> bool:
        return all(self.transport.heartbeat(w.id) for w in self.workers)

    def close(self) -> None:
        self.ctx.abort.set()
        for w in self.workers:
            w.shutdown()
        self.transport.close()

    def __enter__(self) -> "Cluster":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _raise_if_aborted(ctx: JobContext) -> None:
    if ctx.abort.is_set():
        err = ctx.error
        if isinstance(err, JobFailed):
            raise err
        raise JobFailed("job", [str(err)], err)


def _schedule(cluster: Cluster, tasks: List[TaskSpec], slots: Dict[int, int], pinned: bool,
              report: StageReport) -> List[dict]:
    """Run ``tasks`` with at most ``slots[w]`` in flight on worker ``w``.

    Unpinned tasks sit in one driver-side queue and go to the worker with
    the most free slots (round robin on ties) whenever a slot opens.
    Failed attempts are retried at the head of the queue.
    """
    ctx = cluster.ctx
    worker_ids = [w.id for w in cluster.workers]
    queues: Dict[Optional[int], Deque[TaskSpec]] = defaultdict(deque)
    for t in tasks:
        queues[t.target_worker if pinned else None].append(t)
    free = dict(slots)
    inflight: Dict[Future, TaskSpec] = {}
    results: List[dict] = []
    rr = 0

    def submit(spec: TaskSpec) -> None:
        free[spec.target_worker] -= 1
        inflight[cluster.transport.assign(spec)] = spec

    while True:
        if pinned:
            for w in worker_ids:
                while free[w] > 0 and queues[w]:
                    submit(queues[w].popleft())
        else:
            q = queues[None]
            while q:
                order = worker_ids[rr:] + worker_ids[:rr]
                w = max(order, key=lambda x: free[x])
                if free[w] <= 0:
                    break
                rr = (worker_ids.index(w) + 1) % len(worker_ids)
                submit(replace(q.popleft(), target_worker=w))
        if not inflight:
            return results
        done, _ = wait(list(inflight), timeout=ACK_POLL_SECONDS, return_when=FIRST_COMPLETED)
        _raise_if_aborted(ctx)
        for f in done:
            spec = inflight.pop(f)
            free[spec.target_worker] += 1
            try:
                results.append(f.result())
            except Exception as exc:
                report.retries += 1
                logger.warning("%s attempt %d failed: %s", spec.name, spec.attempt, exc)
                nxt = retry_task(spec, exc, ctx.settings.max_retries)
                queues[nxt.target_worker if pinned else None].appendleft(nxt)


def run_map_stage(plan: PartitionPlan, manifest, cluster: Cluster) -> StageReport:
    """Map every input partition, shuffle slices to merge controllers, and
    flush the controllers so every merge output is spilled.

    ``manifest.entries`` holds ``(index, ObjectKey, size)`` triples.
    """
    ctx = cluster.ctx
    report = StageReport("map")
    t0 = time.perf_counter()
    entries = list(manifest.entries)
    if len(entries) != plan.num_mappers:
        raise ValueError(f"manifest has {len(entries)} entries, plan expects {plan.num_mappers}")
    if not cluster.healthy():
        raise JobFailed("cluster", ["a worker failed its heartbeat"])
    tasks = [
        TaskSpec("map", idx, None, ({"bucket": key.bucket, "key": key.key, "size": size},))
        for idx, key, size in entries
    ]
    slots = {w.id: w.config.map_parallelism for w in cluster.workers}
    try:
        report.results = _schedule(cluster, tasks, slots, pinned=False, report=report)
        flushes = [w.flush() for w in cluster.workers]
        spills = _await(flushes, ctx)
        for w, per_seq in zip(cluster.workers, spills):
            report.merges_per_worker[w.id] = len(per_seq)
            for seq in sorted(per_seq):
                for j, ref in enumerate(_await(per_seq[seq], ctx)):
                    cluster.spilled.setdefault((w.id, j), []).append(ref)
    except JobFailed as exc:
        ctx.fail(exc)
        exc.event_log = str(ctx.log.path) if ctx.log.path else None
        raise
    report.seconds = time.perf_counter() - t0
    report.tasks = len(report.results)
    report.task_seconds = [r["seconds"] for r in report.results]
    report.slice_deliveries = sum(r["slices"] for r in report.results)
    report.bytes = sum(r["bytes"] for r in report.results)
    return report


def _await(futures: List[Future], ctx: JobContext) -> list:
    pending = set(futures)
    while pending:
        _, pending = wait(pending, timeout=ACK_POLL_SECONDS)
        _raise_if_aborted(ctx)
    return [f.result() for f in futures]


def reduce_inputs(cluster: Cluster, worker: int, local_reducer: int) -> List[BlockRef]:
    return cluster.spilled.get((worker, local_reducer), [])


def run_reduce_stage(plan: PartitionPlan, cluster: Cluster) -> StageReport:
    """One reduce task per (worker, local reducer); each merges every merge
    output spilled for it on that worker and uploads one output partition."""
    ctx = cluster.ctx
    report = StageReport("reduce")
    t0 = time.perf_counter()
    tasks = []
    for w in cluster.workers:
        for j in range(plan.reducers_per_worker):
            blocks = reduce_inputs(cluster, w.id, j)
            if len(blocks) != w.controller.merges_launched:
                raise JobFailed(f"reduce-{w.id}-{j}",
                                [f"expected {w.controller.merges_launched} spilled blocks, found {len(blocks)}"])
            tasks.append(TaskSpec("reduce", j, w.id, tuple(b.to_dict() for b in blocks)))
    slots = {w.id: w.config.reduce_parallelism for w in cluster.workers}
    try:
        report.results = _schedule(cluster, tasks, slots, pinned=True, report=report)
    except JobFailed as exc:
        ctx.fail(exc)
        exc.event_log = str(ctx.log.path) if ctx.log.path else None
        raise
    report.results.sort(key=lambda r: r["index"])
    report.seconds = time.perf_counter() - t0
    report.tasks = len(report.results)
    report.task_seconds = [r["seconds"] for r in report.results]
    report.bytes = sum(r["size"] for r in report.results)
    return report
