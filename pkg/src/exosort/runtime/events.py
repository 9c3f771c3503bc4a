"""Structured event log and replay checks.

Every record has the fields ``ts, event, task, worker, block, bytes``.
Records are appended under a lock, so list order is a valid serialisation
of what happened; replay walks the list in order.
"""
from __future__ import annotations

import json
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, TextIO, Union

FIELDS = ("ts", "event", "task", "worker", "block", "bytes")


class EventLog:
    def __init__(self, path: Optional[Union[str, Path]] = None):
        self._lock = threading.Lock()
        self._t0 = time.perf_counter()
        self.records: List[dict] = []
        self.path = Path(path) if path else None
        self._fh: Optional[TextIO] = open(self.path, "w") if self.path else None

    def emit(self, event: str, task: Optional[str] = None, worker: Optional[int] = None,
             block: Optional[str] = None, nbytes: Optional[int] = None) -> None:
        with self._lock:
            rec = {
                "ts": round(time.perf_counter() - self._t0, 6),
                "event": event,
                "task": task,
                "worker": worker,
                "block": block,
                "bytes": nbytes,
            }
            self.records.append(rec)
            if self._fh:
                self._fh.write(json.dumps(rec) + "\n")

    def of(self, *events: str) -> List[dict]:
        with self._lock:
            return [r for r in self.records if r["event"] in events]

    def snapshot(self) -> List[dict]:
        with self._lock:
            return list(self.records)

    def close(self) -> None:
        with self._lock:
            if self._fh:
                self._fh.close()
                self._fh = None


def read_events(path: Union[str, Path]) -> List[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def max_concurrency(events: Iterable[dict], start: str, ends: Iterable[str]) -> Dict[int, int]:
    """Peak number of simultaneously open ``start`` intervals, per worker."""
    ends = set(ends)
    live: Dict[int, int] = defaultdict(int)
    peak: Dict[int, int] = defaultdict(int)
    for e in events:
        if e["event"] == start:
            live[e["worker"]] += 1
            peak[e["worker"]] = max(peak[e["worker"]], live[e["worker"]])
        elif e["event"] in ends:
            live[e["worker"]] -= 1
    return dict(peak)


def concurrency_series(events: Iterable[dict], start: str, ends: Iterable[str]):
    """``(ts, worker, live)`` after every change, for plotting."""
    ends = set(ends)
    live: Dict[int, int] = defaultdict(int)
    out = []
    for e in events:
        if e["event"] == start:
            live[e["worker"]] += 1
        elif e["event"] in ends:
            live[e["worker"]] -= 1
        else:
            continue
        out.append((e["ts"], e["worker"], live[e["worker"]]))
    return out


@dataclass
class BufferReplay:
    peak_buffered: Dict[int, int]
    peak_in_flight: Dict[int, int]
    deferred_acks: int
    merges: Dict[int, int]


def replay_buffers(events: Iterable[dict]) -> BufferReplay:
    """Rebuild per-worker merge-controller occupancy from the log.

    ``buffered`` counts blocks sitting in a controller buffer;
    ``in_flight`` adds blocks held by running merges.
    """
    buffered: Dict[int, int] = defaultdict(int)
    in_merge: Dict[int, int] = defaultdict(int)
    merge_size: Dict[str, int] = defaultdict(int)
    peak_b: Dict[int, int] = defaultdict(int)
    peak_f: Dict[int, int] = defaultdict(int)
    merges: Dict[int, int] = defaultdict(int)
    deferred = 0
    for e in events:
        w = e["worker"]
        ev = e["event"]
        if ev == "block_buffered":
            buffered[w] += 1
        elif ev == "block_consumed":
            buffered[w] -= 1
            in_merge[w] += 1
            merge_size[e["task"]] += 1
        elif ev == "merge_end":
            in_merge[w] -= merge_size.pop(e["task"], 0)
            merges[w] += 1
        elif ev == "ack_deferred":
            deferred += 1
        else:
            continue
        peak_b[w] = max(peak_b[w], buffered[w])
        peak_f[w] = max(peak_f[w], buffered[w] + in_merge[w])
    return BufferReplay(dict(peak_b), dict(peak_f), deferred, dict(merges))


def stage_barrier_holds(events: List[dict]) -> bool:
    """No reduce task starts before the last map and merge task has ended."""
    last_shuffle = -1
    for i, e in enumerate(events):
        if e["event"] in ("map_end", "merge_end"):
            last_shuffle = i
    first_reduce = next((i for i, e in enumerate(events) if e["event"] == "reduce_start"), len(events))
    return last_shuffle < first_reduce
