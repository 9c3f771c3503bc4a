"""Block handles and local-disk spilling."""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union


class BlockState(enum.Enum):
    IN_MEMORY = "in-memory"
    SPILLED = "spilled"
    REMOTE = "remote"


class BlockError(IOError):
    pass


@dataclass(frozen=True)
class BlockRef:
    block_id: str
    size_bytes: int
    producer_task: str
    state: BlockState = BlockState.IN_MEMORY
    path: Optional[str] = None
    worker: Optional[int] = None
    data: Optional[bytes] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.state is BlockState.IN_MEMORY and (self.data is None or len(self.data) != self.size_bytes):
            raise ValueError(f"in-memory block {self.block_id} needs {self.size_bytes} bytes of data")
        if self.state is BlockState.SPILLED and self.path is None:
            raise ValueError(f"spilled block {self.block_id} needs a path")
        if self.state is BlockState.REMOTE and self.worker is None:
            raise ValueError(f"remote block {self.block_id} needs a worker")

    @classmethod
    def in_memory(cls, block_id: str, data: bytes, producer_task: str, worker: Optional[int] = None) -> "BlockRef":
        return cls(block_id, len(data), producer_task, BlockState.IN_MEMORY, worker=worker, data=data)

    def as_remote(self, worker: int) -> "BlockRef":
        return replace(self, state=BlockState.REMOTE, worker=worker, data=None, path=None)

    def to_dict(self) -> dict:
        return {"block_id": self.block_id, "size_bytes": self.size_bytes, "producer_task": self.producer_task,
                "state": self.state.value, "path": self.path, "worker": self.worker}

    @classmethod
    def from_dict(cls, d: dict) -> "BlockRef":
        return cls(d["block_id"], d["size_bytes"], d["producer_task"], BlockState(d["state"]),
                   d.get("path"), d.get("worker"))


def spill_path(spill_dir: Union[str, Path], worker: int, merge_seq: int, local_reducer: int) -> Path:
    return Path(spill_dir) / f"merge_{worker}_{merge_seq}_{local_reducer}.blk"


def spill_block(block: BlockRef, path: Union[str, Path]) -> BlockRef:
    """Write an in-memory block to ``path`` and return its spilled handle.

    The write goes to a temporary name first, so a re-executed merge
    replaces an earlier spill atomically.
    """
    if block.state is not BlockState.IN_MEMORY:
        raise BlockError(f"block {block.block_id} is not in memory")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(block.data)
    os.replace(tmp, path)
    return replace(block, state=BlockState.SPILLED, path=str(path), data=None)


def restore_block(block: BlockRef) -> bytes:
    if block.state is BlockState.IN_MEMORY:
        return block.data
    if block.state is not BlockState.SPILLED:
        raise BlockError(f"block {block.block_id} is on worker {block.worker}, not local")
    try:
        with open(block.path, "rb") as f:
            data = f.read()
    except FileNotFoundError:
        raise BlockError(f"spill file for {block.block_id} is missing: {block.path}") from None
    if len(data) != block.size_bytes:
        raise BlockError(f"spill file {block.path} has {len(data)} bytes, expected {block.size_bytes}")
    return data
