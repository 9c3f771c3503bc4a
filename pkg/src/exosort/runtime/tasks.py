"""Task specs, retry policy and fault injection."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Set, Tuple

DEFAULT_MAX_RETRIES = 3

KINDS = ("map", "merge", "reduce")


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    task_index: int
    target_worker: Optional[int] = None
    inputs: Tuple = ()
    attempt: int = 0
    lineage: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")

    @property
    def name(self) -> str:
        if self.kind == "map":
            return f"map-{self.task_index}"
        return f"{self.kind}-{self.target_worker}-{self.task_index}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "task_index": self.task_index, "target_worker": self.target_worker,
                "inputs": list(self.inputs), "attempt": self.attempt, "lineage": list(self.lineage)}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(d["kind"], d["task_index"], d["target_worker"], tuple(d["inputs"]), d["attempt"],
                   tuple(d["lineage"]))


class TaskFailed(RuntimeError):
    """One attempt of a task failed; eligible for retry."""

    def __init__(self, task: str, message: str):
        super().__init__(f"{task}: {message}")
        self.task = task


class InjectedFault(RuntimeError):
    pass


class JobFailed(RuntimeError):
    def __init__(self, task: str, lineage: Iterable[str], cause: Optional[BaseException] = None,
                 event_log: Optional[str] = None):
        self.task = task
        self.lineage = list(lineage)
        self.event_log = event_log
        msg = f"task {task} failed after {len(self.lineage)} attempt(s): " + "; ".join(self.lineage)
        super().__init__(msg)
        if cause is not None:
            self.__cause__ = cause


def retry_task(spec: TaskSpec, failure: BaseException, max_retries: int = DEFAULT_MAX_RETRIES) -> TaskSpec:
    """Next attempt of ``spec``; raises :class:`JobFailed` once retries run out."""
    lineage = spec.lineage + (f"attempt {spec.attempt}: {failure}",)
    if spec.attempt >= max_retries:
        raise JobFailed(spec.name, lineage, failure)
    return replace(spec, attempt=spec.attempt + 1, lineage=lineage)


@dataclass
class FaultInjector:
    """Fails chosen ``(task name, attempt)`` pairs once each.

    ``FaultInjector({("map-3", 0)})`` makes the first attempt of map task 3 raise.
    """

    faults: Set[Tuple[str, int]] = field(default_factory=set)
    fired: List[Tuple[str, int]] = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()

    def check(self, task: str, attempt: int) -> None:
        with self._lock:
            if (task, attempt) in self.faults and (task, attempt) not in self.fired:
                self.fired.append((task, attempt))
                raise InjectedFault(f"injected fault in {task} attempt {attempt}")

    @classmethod
    def parse(cls, items: Iterable[str]) -> "FaultInjector":
        """Parse ``"map-3"`` or ``"map-3@1"`` entries (default attempt 0)."""
        faults = set()
        for item in items:
            name, _, attempt = item.partition("@")
            faults.add((name, int(attempt or 0)))
        return cls(faults)
