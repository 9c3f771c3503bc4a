"""Key-range geometry: reducer and worker boundaries over the u64 key space."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

KEY_SPACE = 1 << 64


class InvalidPlanError(ValueError):
    pass


@dataclass(frozen=True)
class KeyRange:
    lo: int
    hi_exclusive: int

    def __post_init__(self):
        if not 0 <= self.lo < self.hi_exclusive <= KEY_SPACE:
            raise ValueError(f"bad key range [{self.lo}, {self.hi_exclusive})")

    def __contains__(self, key: int) -> bool:
        return self.lo <= key < self.hi_exclusive


def reducer_bound(i: int, num_reducers: int) -> int:
    """Lower bound of reducer ``i``; ``reducer_bound(R, R) == 2**64``."""
    if num_reducers <= 0:
        raise InvalidPlanError("reducer count must be positive")
    if not 0 <= i <= num_reducers:
        raise IndexError(f"boundary index {i} outside 0..{num_reducers}")
    return -((-i * KEY_SPACE) // num_reducers)


def reducer_of(key: int, num_reducers: int) -> int:
    return (key * num_reducers) >> 64


def reducer_bounds(num_reducers: int) -> List[int]:
    return [reducer_bound(i, num_reducers) for i in range(num_reducers + 1)]


def interior_bounds(bounds: List[int]) -> np.ndarray:
    """Boundaries strictly inside the key space, as u64, for ``np.searchsorted``."""
    return np.array(bounds[1:-1], dtype=np.uint64)


def bucketize(keys: np.ndarray, bounds: List[int]) -> np.ndarray:
    """Range index of each u64 key given ``len(bounds)-1`` contiguous ranges."""
    return np.searchsorted(interior_bounds(bounds), keys, side="right")


@dataclass(frozen=True)
class PartitionPlan:
    """The (M, W, R, R1) geometry of one sort job."""

    num_mappers: int
    input_partition_bytes: int
    num_workers: int
    num_reducers: int

    def __post_init__(self):
        if self.num_mappers < 0:
            raise InvalidPlanError("mapper count must be non-negative")
        if self.input_partition_bytes < 0:
            raise InvalidPlanError("partition size must be non-negative")
        if self.num_workers <= 0:
            raise InvalidPlanError("worker count must be positive")
        if self.num_reducers <= 0:
            raise InvalidPlanError("reducer count must be positive")
        if self.num_reducers % self.num_workers:
            raise InvalidPlanError(
                f"reducers ({self.num_reducers}) must be divisible by workers ({self.num_workers})"
            )

    @classmethod
    def from_sizes(cls, total_bytes: int, input_partition_bytes: int, num_workers: int,
                   num_reducers: int) -> "PartitionPlan":
        if input_partition_bytes <= 0 or total_bytes % input_partition_bytes:
            raise InvalidPlanError(
                f"total size {total_bytes} is not a whole number of {input_partition_bytes}-byte partitions"
            )
        return cls(total_bytes // input_partition_bytes, input_partition_bytes, num_workers, num_reducers)

    @property
    def total_bytes(self) -> int:
        return self.num_mappers * self.input_partition_bytes

    @property
    def reducers_per_worker(self) -> int:
        return self.num_reducers // self.num_workers

    M = property(lambda self: self.num_mappers)
    W = property(lambda self: self.num_workers)
    R = property(lambda self: self.num_reducers)
    R1 = property(lambda self: self.reducers_per_worker)

    def reducer_range(self, i: int) -> KeyRange:
        return KeyRange(reducer_bound(i, self.num_reducers), reducer_bound(i + 1, self.num_reducers))

    def worker_range(self, w: int) -> KeyRange:
        r1 = self.reducers_per_worker
        return KeyRange(reducer_bound(w * r1, self.num_reducers),
                        reducer_bound((w + 1) * r1, self.num_reducers))

    def worker_bounds(self) -> List[int]:
        r1 = self.reducers_per_worker
        return [reducer_bound(w * r1, self.num_reducers) for w in range(self.num_workers + 1)]

    def local_reducer_bounds(self, w: int) -> List[int]:
        """The ``R1 + 1`` reducer boundaries inside worker ``w``'s range."""
        r1 = self.reducers_per_worker
        return [reducer_bound(w * r1 + j, self.num_reducers) for j in range(r1 + 1)]

    def output_index(self, worker: int, local_reducer: int) -> int:
        return worker * self.reducers_per_worker + local_reducer

    def to_dict(self) -> dict:
        return {
            "num_mappers": self.num_mappers,
            "input_partition_bytes": self.input_partition_bytes,
            "num_workers": self.num_workers,
            "num_reducers": self.num_reducers,
        }


def worker_of(key: int, plan: PartitionPlan) -> int:
    return reducer_of(key, plan.num_reducers) // plan.reducers_per_worker
