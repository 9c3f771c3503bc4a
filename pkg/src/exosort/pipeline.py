"""End-to-end CloudSort job: generate input, sort, validate."""
from __future__ import annotations

import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .config import JobConfig
from .partition import PartitionPlan
from .record import (
    MASK128, RECORD_SIZE, TotalOrderReport, ValidationSummary, generate_partition,
    validate_partition, validate_total, write_summaries,
)
from .runtime import Cluster, EventLog, FaultInjector, JobContext, make_transport
from .runtime import run_map_stage, run_reduce_stage
from .storage import LocalBackend, ObjectKey, ObjectStore, assign_bucket

logger = logging.getLogger(__name__)

INPUT_PREFIX = "input"


class GenerationError(RuntimeError):
    def __init__(self, message: str, manifest: "Manifest"):
        super().__init__(message)
        self.partial_manifest = manifest


@dataclass
class ManifestEntry:
    index: int
    key: ObjectKey
    size_bytes: int

    def __iter__(self):
        return iter((self.index, self.key, self.size_bytes))


@dataclass
class Manifest:
    """Index of partitions in the object store.

    File format: one ``index bucket key size_bytes`` line per partition, then
    a ``checksum <32 hex>`` trailer. A file without the trailer is partial.
    """

    entries: List[ManifestEntry]
    total_checksum: Optional[int] = None
    plan: Optional[PartitionPlan] = None

    def __post_init__(self):
        for i, e in enumerate(self.entries):
            if e.index != i:
                raise ValueError(f"manifest indices must be contiguous from 0; entry {i} has index {e.index}")

    @property
    def complete(self) -> bool:
        return self.total_checksum is not None

    @property
    def total_bytes(self) -> int:
        return sum(e.size_bytes for e in self.entries)

    @property
    def total_records(self) -> int:
        return self.total_bytes // RECORD_SIZE

    def to_text(self) -> str:
        lines = [f"{e.index} {e.key.bucket} {e.key.key} {e.size_bytes}" for e in self.entries]
        if self.total_checksum is not None:
            lines.append(f"checksum {self.total_checksum:032x}")
        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def parse(cls, text: str, plan: Optional[PartitionPlan] = None) -> "Manifest":
        entries = []
        total = None
        for line in text.splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "checksum":
                total = int(parts[1], 16)
                continue
            index, bucket, key, size = parts
            entries.append(ManifestEntry(int(index), ObjectKey(bucket, key), int(size)))
        return cls(entries, total, plan)

    @classmethod
    def load(cls, path: Union[str, Path], plan: Optional[PartitionPlan] = None) -> "Manifest":
        return cls.parse(Path(path).read_text(), plan)


@dataclass
class RunReport:
    map_shuffle_seconds: float
    reduce_seconds: float
    total_seconds: float
    get_requests: int
    put_requests: int
    records: int = 0
    bytes: int = 0
    num_mappers: int = 0
    num_workers: int = 0
    num_reducers: int = 0
    map_tasks: int = 0
    merge_tasks: int = 0
    reduce_tasks: int = 0
    slice_deliveries: int = 0
    retries: int = 0
    map_task_seconds: List[float] = field(default_factory=list)
    reduce_task_seconds: List[float] = field(default_factory=list)
    merges_per_worker: List[int] = field(default_factory=list)

    _LISTS = ("map_task_seconds", "reduce_task_seconds", "merges_per_worker")

    def to_text(self) -> str:
        out = []
        for name, value in self.__dict__.items():
            if name in self._LISTS:
                value = ",".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                value = f"{value:.6f}"
            out.append(f"{name} {value}")
        return "\n".join(out) + "\n"

    @classmethod
    def parse(cls, text: str) -> "RunReport":
        raw = dict(line.split(" ", 1) if " " in line else (line, "") for line in text.splitlines() if line)
        kwargs = {}
        for name, f in cls.__dataclass_fields__.items():
            if name not in raw:
                continue
            v = raw[name].strip()
            if name in cls._LISTS:
                conv = int if name == "merges_per_worker" else float
                kwargs[name] = [conv(x) for x in v.split(",") if x]
            elif f.type in ("float",):
                kwargs[name] = float(v)
            else:
                kwargs[name] = int(v)
        return cls(**kwargs)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunReport":
        return cls.parse(Path(path).read_text())


def make_store(root: Union[str, Path]) -> ObjectStore:
    return ObjectStore(LocalBackend(root))


def input_key(index: int, buckets: Sequence[str], seed: int) -> ObjectKey:
    return ObjectKey(assign_bucket(index, list(buckets), seed), f"{INPUT_PREFIX}/part-{index:05d}")


def _generate_one(store: ObjectStore, plan: PartitionPlan, index: int, buckets, seed, part_bytes,
                  upload: bool = True) -> Tuple[ManifestEntry, int]:
    records = plan.input_partition_bytes // RECORD_SIZE
    buf = io.BytesIO()
    csum = generate_partition(index * records, records, buf)
    key = input_key(index, buckets, seed)
    if upload:
        store.put_object_multipart(key, buf.getvalue(), part_bytes)
    return ManifestEntry(index, key, records * RECORD_SIZE), csum


def generate_input(plan: PartitionPlan, buckets: Sequence[str], seed: int, store: ObjectStore,
                   parallelism: int = 4, part_bytes: int = 100 * 1000 * 1000,
                   manifest_path: Optional[Union[str, Path]] = None, resume: bool = False) -> Manifest:
    """Generate the M input partitions with record offsets ``i * P`` and upload them.

    With ``resume``, partitions already listed in a partial manifest at
    ``manifest_path`` and present in the store are not uploaded again.
    """
    done: Dict[int, ManifestEntry] = {}
    if resume and manifest_path and Path(manifest_path).exists():
        for e in Manifest.load(manifest_path).entries:
            if store.exists(e.key) and store.size(e.key) == e.size_bytes:
                done[e.index] = e
    results: Dict[int, Tuple[ManifestEntry, int]] = {}
    try:
        with ThreadPoolExecutor(max(1, parallelism)) as pool:
            futs = {i: pool.submit(_generate_one, store, plan, i, buckets, seed, part_bytes, i not in done)
                    for i in range(plan.num_mappers)}
            for i, f in futs.items():
                results[i] = f.result()
    except Exception as exc:
        partial = []
        for i in range(plan.num_mappers):
            if i not in results:
                break
            partial.append(results[i][0])
        manifest = Manifest(partial, None, plan)
        if manifest_path:
            manifest.save(manifest_path)
        raise GenerationError(f"input generation failed after {len(partial)} partitions: {exc}", manifest) from exc
    total = 0
    for _, csum in results.values():
        total = (total + csum) & MASK128
    manifest = Manifest([results[i][0] for i in range(plan.num_mappers)], total, plan)
    if manifest_path:
        manifest.save(manifest_path)
    return manifest


def run_sort(manifest: Manifest, config: JobConfig, work_dir: Union[str, Path],
             store: Optional[ObjectStore] = None, injector: Optional[FaultInjector] = None,
             event_log: Optional[Union[str, Path]] = None,
             merge_delay_seconds: float = 0.0,
             output_prefix: str = "output") -> Tuple[Manifest, RunReport, EventLog]:
    """Run both stages and return the output manifest, the run report and the event log.

    ``merge_delay_seconds`` slows every merge task down, for exercising back
    pressure. Outputs are written under ``output_prefix`` in the store.
    """
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    store = store or make_store(config.storage_root)
    plan = config.plan
    config = config.with_spill_root(work_dir / "spill")
    log = EventLog(event_log)
    settings = config.settings(merge_delay_seconds=merge_delay_seconds, output_prefix=output_prefix)
    ctx = JobContext(plan, store, settings, log, injector)
    before = store.meter.snapshot()
    t0 = time.perf_counter()
    try:
        with Cluster(config.cluster, ctx, make_transport(config.transport)) as cluster:
            map_report = run_map_stage(plan, manifest, cluster)
            t1 = time.perf_counter()
            reduce_report = run_reduce_stage(plan, cluster)
            t2 = time.perf_counter()
    finally:
        log.close()
    after = store.meter.snapshot()
    out = Manifest(
        [ManifestEntry(r["index"], ObjectKey(r["bucket"], r["key"]), r["size"]) for r in reduce_report.results],
        None, plan,
    )
    report = RunReport(
        map_shuffle_seconds=t1 - t0,
        reduce_seconds=t2 - t1,
        total_seconds=t2 - t0,
        get_requests=after.get_count - before.get_count,
        put_requests=after.put_count - before.put_count,
        records=out.total_records,
        bytes=out.total_bytes,
        num_mappers=plan.num_mappers,
        num_workers=plan.num_workers,
        num_reducers=plan.num_reducers,
        map_tasks=map_report.tasks,
        merge_tasks=sum(map_report.merges_per_worker.values()),
        reduce_tasks=reduce_report.tasks,
        slice_deliveries=map_report.slice_deliveries,
        retries=map_report.retries + reduce_report.retries + len(log.of("merge_fail")),
        map_task_seconds=map_report.task_seconds,
        reduce_task_seconds=reduce_report.task_seconds,
        merges_per_worker=[map_report.merges_per_worker.get(w, 0) for w in range(plan.num_workers)],
    )
    return out, report, log


@dataclass
class ValidationReport:
    passed: bool
    total: TotalOrderReport
    summaries: List[ValidationSummary]
    input_checksum: int

    def describe(self) -> str:
        return self.total.describe()


def _summarize(store: ObjectStore, key: ObjectKey, chunk: int) -> ValidationSummary:
    return validate_partition(store.get_object_chunked(key, chunk))


def validate_output(manifest: Manifest, input_checksum: int, store: ObjectStore, parallelism: int = 4,
                    chunk_bytes: int = 16 * 1024 * 1024,
                    summary_path: Optional[Union[str, Path]] = None) -> ValidationReport:
    """Validate each output partition, then the total order and checksum."""
    with ThreadPoolExecutor(max(1, parallelism)) as pool:
        summaries = list(pool.map(lambda e: _summarize(store, e.key, chunk_bytes), manifest.entries))
    if summary_path:
        write_summaries(summary_path, summaries)
    total = validate_total(summaries, input_checksum)
    return ValidationReport(total.passed, total, summaries, input_checksum)
