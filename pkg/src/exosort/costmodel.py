"""Total-cost-of-ownership arithmetic for a cloud sort run.

Intermediate figures are rounded to 4 decimals at the same points as the
published CloudSort cost breakdown so its numbers reproduce exactly.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Literal, Tuple

from .storage import DEFAULT_GET_CHUNK, DEFAULT_PUT_PART, GB

DECIMALS = 4
HOURS_PER_MONTH = 365 * 24 / 12  # 730

Formula = Literal["paper", "exact"]


def _r(x: float) -> float:
    return round(x, DECIMALS)


@dataclass(frozen=True)
class PricingConfig:
    master_hourly: float = 0.504          # r6i.2xlarge on demand
    worker_hourly: float = 1.373          # i4i.4xlarge on demand
    worker_count: int = 40
    ebs_monthly_per_gib: float = 0.08     # gp3
    ebs_gib_per_node: float = 40
    hours_per_month: float = HOURS_PER_MONTH
    s3_gb_month: float = 0.0225           # mean of the 0.023 and 0.022 tiers
    get_price_per_1000: float = 0.0004
    put_price_per_1000: float = 0.005

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.hours_per_month <= 0:
            raise ValueError("hours_per_month must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "PricingConfig":
        return cls(**d)


@dataclass(frozen=True)
class Geometry:
    """Object-storage request geometry of a job."""

    data_tb: float = 100.0
    num_mappers: int = 50_000
    input_part_bytes: int = 2 * GB
    get_chunk_bytes: int = DEFAULT_GET_CHUNK
    num_reducers: int = 25_000
    output_part_bytes: int = 4 * GB
    put_chunk_bytes: int = DEFAULT_PUT_PART


@dataclass(frozen=True)
class LineItem:
    service: str
    unit_price: str
    amount: str
    total: float


@dataclass(frozen=True)
class CostReport:
    compute: float
    storage_input: float
    storage_output: float
    access_get: float
    access_put: float
    hourly_compute: float = 0.0
    storage_hourly: float = 0.0
    jct_hours: float = 0.0
    reduce_hours: float = 0.0
    get_requests: int = 0
    put_requests: int = 0
    pricing: PricingConfig = field(default_factory=PricingConfig)

    @property
    def storage(self) -> float:
        return self.storage_input + self.storage_output

    @property
    def access(self) -> float:
        return self.access_get + self.access_put

    @property
    def total(self) -> float:
        return self.compute + self.storage_input + self.storage_output + self.access_get + self.access_put

    def line_items(self) -> list:
        p = self.pricing
        return [
            LineItem("Compute VM Cluster", f"${self.hourly_compute:.4f} / hr",
                     f"{self.jct_hours:.4f} hours", self.compute),
            LineItem("Data Storage (Input)", f"${self.storage_hourly:.4f} / hr",
                     f"{self.jct_hours:.4f} hours", self.storage_input),
            LineItem("Data Storage (Output)", f"${self.storage_hourly:.4f} / hr",
                     f"{self.reduce_hours:.4f} hours", self.storage_output),
            LineItem("Data Access (Input)", f"${p.get_price_per_1000:g} / 1000 requests",
                     f"{self.get_requests:,} requests", self.access_get),
            LineItem("Data Access (Output)", f"${p.put_price_per_1000:g} / 1000 requests",
                     f"{self.put_requests:,} requests", self.access_put),
        ]

    def format_table(self) -> str:
        rows = [("Service", "Unit Price", "Amount", "Total Price")]
        rows += [(li.service, li.unit_price, li.amount, f"${li.total:.4f}") for li in self.line_items()]
        rows.append(("Total", "--", "--", f"${self.total:.4f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = []
        for n, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            if n == 0 or n == len(rows) - 2:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)

    def to_tsv(self) -> str:
        out = ["service\tunit_price\tamount\ttotal"]
        out += [f"{li.service}\t{li.unit_price}\t{li.amount}\t{li.total:.4f}" for li in self.line_items()]
        out.append(f"Total\t--\t--\t{self.total:.4f}")
        return "\n".join(out) + "\n"


def ebs_hourly_cost(cfg: PricingConfig) -> float:
    return _r(cfg.ebs_monthly_per_gib / cfg.hours_per_month * cfg.ebs_gib_per_node)


def hourly_compute_cost(cfg: PricingConfig) -> float:
    """Master + workers + one EBS volume per node (workers and master)."""
    return _r(cfg.master_hourly + cfg.worker_hourly * cfg.worker_count
              + ebs_hourly_cost(cfg) * (cfg.worker_count + 1))


def storage_hourly_cost(data_tb: float, cfg: PricingConfig) -> float:
    return _r(cfg.s3_gb_month * 1000 / cfg.hours_per_month * data_tb)


def storage_cost(data_tb: float, jct_hours: float, reduce_hours: float,
                 cfg: PricingConfig) -> Tuple[float, float]:
    """Input is stored for the whole job, output for the reduce stage."""
    if jct_hours < 0 or reduce_hours < 0:
        raise ValueError("durations must be non-negative")
    rate = storage_hourly_cost(data_tb, cfg)
    return _r(rate * jct_hours), _r(rate * reduce_hours)


def requests_per_task(part_bytes: int, chunk_bytes: int, formula: Formula = "paper") -> int:
    """``trunc(part/chunk + 1)`` under ``paper``; ``ceil(part/chunk)`` under ``exact``."""
    if chunk_bytes <= 0:
        raise ValueError("chunk size must be positive")
    if formula == "paper":
        return int(part_bytes / chunk_bytes + 1)
    if formula == "exact":
        return max(1, math.ceil(part_bytes / chunk_bytes))
    raise ValueError(f"unknown request formula {formula!r}")


def request_totals(geom: Geometry, formula: Formula = "paper") -> Tuple[int, int]:
    gets = requests_per_task(geom.input_part_bytes, geom.get_chunk_bytes, formula) * geom.num_mappers
    puts = requests_per_task(geom.output_part_bytes, geom.put_chunk_bytes, formula) * geom.num_reducers
    return gets, puts


def request_cost(count: int, price_per_1000: float) -> float:
    return _r(count * price_per_1000 / 1000)


def access_cost(num_mappers: int, input_part_bytes: int, get_chunk: int, num_reducers: int,
                output_part_bytes: int, put_chunk: int, cfg: PricingConfig,
                formula: Formula = "paper") -> Tuple[float, float]:
    geom = Geometry(0, num_mappers, input_part_bytes, get_chunk, num_reducers, output_part_bytes, put_chunk)
    gets, puts = request_totals(geom, formula)
    return request_cost(gets, cfg.get_price_per_1000), request_cost(puts, cfg.put_price_per_1000)


def total_cost(cfg: PricingConfig, jct_hours: float, reduce_hours: float,
               geometry: Geometry = Geometry(), formula: Formula = "paper") -> CostReport:
    gets, puts = request_totals(geometry, formula)
    return cost_from_counts(cfg, jct_hours, reduce_hours, geometry.data_tb, gets, puts)


def cost_from_counts(cfg: PricingConfig, jct_hours: float, reduce_hours: float, data_tb: float,
                     get_requests: int, put_requests: int) -> CostReport:
    """Cost report from measured request counts (e.g. a metered run)."""
    hourly = hourly_compute_cost(cfg)
    s_in, s_out = storage_cost(data_tb, jct_hours, reduce_hours, cfg)
    return CostReport(
        compute=_r(hourly * jct_hours),
        storage_input=s_in,
        storage_output=s_out,
        access_get=request_cost(get_requests, cfg.get_price_per_1000),
        access_put=request_cost(put_requests, cfg.put_price_per_1000),
        hourly_compute=hourly,
        storage_hourly=storage_hourly_cost(data_tb, cfg),
        jct_hours=jct_hours,
        reduce_hours=reduce_hours,
        get_requests=get_requests,
        put_requests=put_requests,
        pricing=cfg,
    )


# Averages over three 100 TB runs.
PAPER_JCT_SECONDS = 5378
PAPER_REDUCE_SECONDS = 1870


def paper_cost_report() -> CostReport:
    return total_cost(
        PricingConfig(),
        jct_hours=_r(PAPER_JCT_SECONDS / 3600),
        reduce_hours=_r(PAPER_REDUCE_SECONDS / 3600),
        geometry=Geometry(),
        formula="paper",
    )


def gbit_to_gbyte(gbps: float) -> float:
    return gbps / 8


def lower_bound_jct(total_gb: float, workers: int, disk_read_gb_per_s: float,
                    disk_write_gb_per_s: float, net_gb_per_s: float) -> float:
    """Seconds to move every byte through one disk read, one disk write, and
    a network send plus receive, spread evenly over ``workers``. Rates in GB/s."""
    rates = (disk_read_gb_per_s, disk_write_gb_per_s, net_gb_per_s)
    if workers <= 0 or any(r <= 0 for r in rates):
        raise ValueError("worker count and rates must be positive")
    return (total_gb / workers) * (1 / disk_read_gb_per_s + 1 / disk_write_gb_per_s + 2 / net_gb_per_s)


__all__ = [
    "PricingConfig", "Geometry", "CostReport", "hourly_compute_cost", "storage_cost",
    "access_cost", "total_cost", "cost_from_counts", "paper_cost_report", "lower_bound_jct",
    "requests_per_task", "request_totals",
]

