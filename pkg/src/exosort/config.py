"""Job configuration: one JSON document, every field overridable from the CLI."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .costmodel import PricingConfig
from .partition import InvalidPlanError, PartitionPlan
from .record import RECORD_SIZE
from .runtime.worker import JobSettings, WorkerConfig
from .storage import MiB, MB, bucket_names

CONFIG_ENV_VAR = "EXOSORT_CONFIG"
TRANSPORTS = ("in-process", "tcp")


class ConfigError(ValueError):
    pass


@dataclass
class JobConfig:
    plan: PartitionPlan
    cluster: List[WorkerConfig]
    transport: str = "in-process"
    storage_root: str = "store"
    buckets: List[str] = field(default_factory=lambda: bucket_names("exosort", 4))
    seed: int = 0
    threshold_blocks: int = 8
    threshold_bytes: int = 2 * 1000 ** 3
    max_retries: int = 3
    get_chunk_bytes: int = 16 * MiB
    put_part_bytes: int = 100 * MB
    pricing: PricingConfig = field(default_factory=PricingConfig)

    def __post_init__(self):
        if len(self.cluster) != self.plan.num_workers:
            raise ConfigError(f"cluster has {len(self.cluster)} workers but plan.W = {self.plan.num_workers}")
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"transport must be one of {TRANSPORTS}, got {self.transport!r}")
        if self.plan.input_partition_bytes % RECORD_SIZE:
            raise ConfigError("input partition size must be a whole number of 100-byte records")
        if not self.buckets:
            raise ConfigError("at least one bucket is required")
        if self.threshold_blocks < 1 or self.max_retries < 0:
            raise ConfigError("threshold_blocks must be >= 1 and max_retries >= 0")

    @property
    def records_per_partition(self) -> int:
        return self.plan.input_partition_bytes // RECORD_SIZE

    def settings(self, **overrides) -> JobSettings:
        s = JobSettings(
            threshold_blocks=self.threshold_blocks,
            threshold_bytes=self.threshold_bytes,
            max_retries=self.max_retries,
            get_chunk_bytes=self.get_chunk_bytes,
            put_part_bytes=self.put_part_bytes,
            buckets=list(self.buckets),
            seed=self.seed,
        )
        return replace(s, **overrides)

    def with_spill_root(self, root: Union[str, Path]) -> "JobConfig":
        cluster = [replace(c, spill_dir=c.spill_dir or str(Path(root) / f"worker-{c.worker_id}"))
                   for c in self.cluster]
        return replace(self, cluster=cluster)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "plan": self.plan.to_dict(),
            "cluster": [asdict(c) for c in self.cluster],
            "transport": self.transport,
            "storage_root": self.storage_root,
            "buckets": list(self.buckets),
            "seed": self.seed,
            "threshold_blocks": self.threshold_blocks,
            "threshold_bytes": self.threshold_bytes,
            "max_retries": self.max_retries,
            "get_chunk_bytes": self.get_chunk_bytes,
            "put_part_bytes": self.put_part_bytes,
            "pricing": asdict(self.pricing),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "JobConfig":
        d = dict(d)
        try:
            plan = PartitionPlan(**d.pop("plan"))
            cluster = build_cluster(d.pop("cluster", {}), plan.num_workers)
            pricing = PricingConfig(**d.pop("pricing", {}))
            buckets = d.pop("buckets", 4)
            if isinstance(buckets, int):
                buckets = bucket_names("exosort", buckets)
            return cls(plan=plan, cluster=cluster, pricing=pricing, buckets=list(buckets), **d)
        except (TypeError, KeyError, InvalidPlanError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "JobConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)


def build_cluster(spec: Union[dict, list], num_workers: int) -> List[WorkerConfig]:
    """A list of per-worker dicts, or one dict applied to every worker."""
    if isinstance(spec, list):
        return [WorkerConfig(**{**c, "worker_id": c.get("worker_id", i)}) for i, c in enumerate(spec)]
    return [WorkerConfig(worker_id=i, **spec) for i in range(num_workers)]


def desk_config(**overrides) -> JobConfig:
    """1 GB: 50 x 20 MB inputs, 4 workers of 4 cores, 20 outputs, merge every 8 blocks."""
    plan = PartitionPlan(num_mappers=50, input_partition_bytes=20 * MB, num_workers=4, num_reducers=20)
    cfg = JobConfig(plan=plan, cluster=build_cluster({"cores": 4}, 4))
    return replace_config(cfg, **overrides) if overrides else cfg


def replace_config(cfg: JobConfig, *, workers: Optional[int] = None, partitions: Optional[int] = None,
                   reducers: Optional[int] = None, partition_bytes: Optional[int] = None,
                   cores: Optional[int] = None, **fields) -> JobConfig:
    """Apply CLI-style overrides and re-validate."""
    plan = cfg.plan
    try:
        if any(v is not None for v in (workers, partitions, reducers, partition_bytes)):
            plan = PartitionPlan(
                num_mappers=partitions if partitions is not None else plan.num_mappers,
                input_partition_bytes=partition_bytes if partition_bytes is not None else plan.input_partition_bytes,
                num_workers=workers if workers is not None else plan.num_workers,
                num_reducers=reducers if reducers is not None else plan.num_reducers,
            )
        cluster = fields.pop("cluster", cfg.cluster)
        if len(cluster) != plan.num_workers or cores is not None:
            template = asdict(cluster[0]) if cluster else {}
            template.pop("worker_id", None)
            template.pop("spill_dir", None)
            if cores is not None:
                template = {"cores": cores}
            cluster = build_cluster(template, plan.num_workers)
        return replace(cfg, plan=plan, cluster=cluster, **fields)
    except InvalidPlanError as exc:
        raise ConfigError(str(exc)) from exc


def default_config_path() -> Optional[str]:
    return os.environ.get(CONFIG_ENV_VAR)
