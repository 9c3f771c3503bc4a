"""Sort and merge kernels over raw record buffers.

Kernels are single threaded and reentrant. Buffers are ``bytes`` (or
anything ``np.frombuffer`` accepts); sorting permutes record indices and
materialises the output once, so 90-byte payloads are moved a single time.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np

from .partition import KeyRange, PartitionPlan, bucketize
from .record import KEY_SIZE, RECORD_SIZE, as_records, key_prefixes, key_tails


class UnsortedRunError(ValueError):
    def __init__(self, run: int, position: int):
        super().__init__(f"input run {run} is not sorted at record {position}")
        self.run = run
        self.position = position


class SourceReadError(IOError):
    def __init__(self, source: int, cause: BaseException):
        super().__init__(f"merge source {source} failed: {cause}")
        self.source = source
        self.__cause__ = cause


@dataclass
class SortedRun:
    data: bytes
    key_range: Optional[KeyRange] = None

    @property
    def count(self) -> int:
        return len(self.data) // RECORD_SIZE

    def __len__(self) -> int:
        return len(self.data)


def sort_records(records: np.ndarray) -> np.ndarray:
    """Return ``records`` sorted by the 10-byte key."""
    if len(records) < 2:
        return records.copy()
    order = np.lexsort((key_tails(records), key_prefixes(records)))
    return records[order]


def slice_sorted(records: np.ndarray, bounds: List[int]) -> List[np.ndarray]:
    """Cut a sorted record array at the given u64 boundaries."""
    if len(records) == 0:
        return [records[0:0]] * (len(bounds) - 1)
    cuts = np.searchsorted(key_prefixes(records), np.array(bounds[1:-1], dtype=np.uint64), side="left")
    edges = [0, *cuts.tolist(), len(records)]
    return [records[edges[i]:edges[i + 1]] for i in range(len(bounds) - 1)]


def sort_and_slice(buffer, plan: PartitionPlan) -> List[SortedRun]:
    """Sort one input partition and cut it into one run per worker range."""
    records = sort_records(as_records(buffer))
    bounds = plan.worker_bounds()
    return [
        SortedRun(part.tobytes(), plan.worker_range(w))
        for w, part in enumerate(slice_sorted(records, bounds))
    ]


def _keys(buf: bytes) -> List[bytes]:
    return [buf[o:o + KEY_SIZE] for o in range(0, len(buf), RECORD_SIZE)]


def merge_order(runs: Sequence[bytes]) -> List[int]:
    """Heap k-way merge; returns, for each output slot, the index of the
    record in the concatenation of ``runs``.

    Equal keys come out in run order. Raises :class:`UnsortedRunError` if a
    run is found to decrease.
    """
    keys = [_keys(r) for r in runs]
    offsets = []
    acc = 0
    for k in keys:
        offsets.append(acc)
        acc += len(k)
    heap = [(k[0], s, 0) for s, k in enumerate(keys) if k]
    heapq.heapify(heap)
    out: List[int] = []
    append = out.append
    replace = heapq.heapreplace
    while heap:
        key, s, i = heap[0]
        append(offsets[s] + i)
        i += 1
        run = keys[s]
        if i < len(run):
            nxt = run[i]
            if nxt < key:
                raise UnsortedRunError(s, i)
            replace(heap, (nxt, s, i))
        else:
            heapq.heappop(heap)
    return out


def merge_runs(runs: Sequence, local_bounds: List[int]) -> List[SortedRun]:
    """Merge sorted runs and split the result at ``local_bounds``.

    ``local_bounds`` holds ``R1 + 1`` boundaries; the result has ``R1`` runs,
    run ``j`` covering ``[local_bounds[j], local_bounds[j+1])``.
    """
    datas = [r.data if isinstance(r, SortedRun) else bytes(r) for r in runs]
    total = sum(len(d) for d in datas)
    if total == 0:
        merged = np.empty((0, RECORD_SIZE), dtype=np.uint8)
    else:
        order = merge_order(datas)
        merged = as_records(b"".join(datas))[np.asarray(order, dtype=np.int64)]
        lo, hi = local_bounds[0], local_bounds[-1]
        pk = key_prefixes(merged[[0, -1]])
        if int(pk[0]) < lo or int(pk[1]) >= hi:
            raise ValueError("merge input falls outside the worker's key range")
    parts = slice_sorted(merged, local_bounds)
    return [
        SortedRun(p.tobytes(), KeyRange(local_bounds[j], local_bounds[j + 1]))
        for j, p in enumerate(parts)
    ]


@dataclass
class MergeStats:
    """Buffer accounting for :func:`merge_runs_streaming`."""

    buffered: int = 0
    peak_buffered: int = 0
    records_out: int = 0

    def _bump(self, n: int) -> None:
        self.buffered += n
        if self.buffered > self.peak_buffered:
            self.peak_buffered = self.buffered


def iter_records(chunks: Iterable[bytes]) -> Iterator[bytes]:
    """Re-block a byte-chunk stream into single 100-byte records."""
    carry = b""
    for chunk in chunks:
        data = carry + chunk if carry else chunk
        n = len(data) - len(data) % RECORD_SIZE
        for o in range(0, n, RECORD_SIZE):
            yield data[o:o + RECORD_SIZE]
        carry = data[n:]
    if carry:
        raise ValueError(f"stream ends with a partial record of {len(carry)} bytes")


def iter_file_records(path, read_size: int = 1 << 20) -> Iterator[bytes]:
    with open(path, "rb") as f:
        yield from iter_records(iter(lambda: f.read(read_size), b""))


def merge_runs_streaming(sources: Sequence[Iterable[bytes]], output_records: int = 4096,
                         stats: Optional[MergeStats] = None) -> Iterator[bytes]:
    """Incrementally merge sorted record sources.

    Each source yields single 100-byte records. Output is yielded in chunks
    of up to ``output_records`` records. At most one record per source plus
    one output chunk is held at any time.
    """
    stats = stats if stats is not None else MergeStats()
    iters = [iter(s) for s in sources]

    def pull(s: int) -> Optional[bytes]:
        try:
            return next(iters[s])
        except StopIteration:
            return None
        except Exception as exc:
            raise SourceReadError(s, exc) from exc

    heap = []
    for s in range(len(iters)):
        rec = pull(s)
        if rec is not None:
            heap.append((rec[:KEY_SIZE], s, rec))
            stats._bump(1)
    heapq.heapify(heap)
    out: List[bytes] = []
    while heap:
        key, s, rec = heap[0]
        out.append(rec)
        # the record moves from the heap slot to the output buffer
        nxt = pull(s)
        if nxt is None:
            heapq.heappop(heap)
            stats.buffered -= 1
        else:
            if nxt[:KEY_SIZE] < key:
                raise UnsortedRunError(s, -1)
            heapq.heapreplace(heap, (nxt[:KEY_SIZE], s, nxt))
        stats._bump(1)
        if len(out) >= output_records:
            stats.records_out += len(out)
            stats.buffered -= len(out)
            yield b"".join(out)
            out = []
    if out:
        stats.records_out += len(out)
        stats.buffered -= len(out)
        yield b"".join(out)
