"""Object-store stand-in for S3 with ranged chunked reads, multipart writes
and request metering."""
from __future__ import annotations

import math
import os
import random
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Union

KiB = 1024
MiB = 1024 * KiB
MB = 1000 * 1000
GB = 1000 * MB

DEFAULT_GET_CHUNK = 16 * MiB
DEFAULT_PUT_PART = 100 * MB


class StorageError(IOError):
    pass


class ObjectNotFound(StorageError):
    pass


class TransientStorageError(StorageError):
    """A backend hiccup; the caller may retry the request."""


@dataclass(frozen=True)
class ObjectKey:
    bucket: str
    key: str

    def __post_init__(self):
        if not self.bucket or not self.key:
            raise ValueError("bucket and key must be non-empty")

    def __str__(self) -> str:
        return f"{self.bucket}/{self.key}"


@dataclass(frozen=True)
class MeterSnapshot:
    get_count: int = 0
    put_count: int = 0
    bytes_in: int = 0
    bytes_out: int = 0


class RequestMeter:
    """GET/PUT request and byte counters. ``bytes_in`` counts uploaded bytes."""

    def __init__(self):
        self._lock = threading.Lock()
        self._get = self._put = self._in = self._out = 0

    def count_get(self, nbytes: int) -> None:
        with self._lock:
            self._get += 1
            self._out += nbytes

    def count_put(self, nbytes: int) -> None:
        with self._lock:
            self._put += 1
            self._in += nbytes

    def snapshot(self) -> MeterSnapshot:
        with self._lock:
            return MeterSnapshot(self._get, self._put, self._in, self._out)

    @property
    def get_count(self) -> int:
        return self.snapshot().get_count

    @property
    def put_count(self) -> int:
        return self.snapshot().put_count


class MultipartUpload:
    def upload_part(self, data: bytes) -> None:
        raise NotImplementedError

    def complete(self) -> int:
        raise NotImplementedError

    def abort(self) -> None:
        raise NotImplementedError


class Backend:
    def size(self, key: ObjectKey) -> int:
        raise NotImplementedError

    def read_range(self, key: ObjectKey, start: int, end: int) -> bytes:
        raise NotImplementedError

    def create_multipart(self, key: ObjectKey) -> MultipartUpload:
        raise NotImplementedError

    def delete(self, key: ObjectKey) -> None:
        raise NotImplementedError

    def exists(self, key: ObjectKey) -> bool:
        try:
            self.size(key)
        except ObjectNotFound:
            return False
        return True


class _LocalUpload(MultipartUpload):
    def __init__(self, final: Path):
        self.final = final
        final.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = final.with_name(f".{final.name}.{os.getpid()}.{threading.get_ident()}.part")
        self.f = open(self.tmp, "wb")
        self.size = 0

    def upload_part(self, data: bytes) -> None:
        self.f.write(data)
        self.size += len(data)

    def complete(self) -> int:
        self.f.close()
        os.replace(self.tmp, self.final)
        return self.size

    def abort(self) -> None:
        self.f.close()
        self.tmp.unlink(missing_ok=True)


class LocalBackend(Backend):
    """Buckets are directories under ``root``; objects live at ``root/bucket/key``."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, key: ObjectKey) -> Path:
        return self.root / key.bucket / key.key

    def size(self, key: ObjectKey) -> int:
        try:
            return self.path(key).stat().st_size
        except FileNotFoundError:
            raise ObjectNotFound(str(key)) from None

    def read_range(self, key: ObjectKey, start: int, end: int) -> bytes:
        try:
            with open(self.path(key), "rb") as f:
                f.seek(start)
                return f.read(end - start)
        except FileNotFoundError:
            raise ObjectNotFound(str(key)) from None

    def create_multipart(self, key: ObjectKey) -> MultipartUpload:
        return _LocalUpload(self.path(key))

    def delete(self, key: ObjectKey) -> None:
        self.path(key).unlink(missing_ok=True)


class _MemoryUpload(MultipartUpload):
    def __init__(self, backend: "MemoryBackend", key: ObjectKey):
        self.backend = backend
        self.key = key
        self.parts: List[bytes] = []

    def upload_part(self, data: bytes) -> None:
        self.parts.append(bytes(data))

    def complete(self) -> int:
        data = b"".join(self.parts)
        with self.backend._lock:
            self.backend.objects[self.key] = data
        return len(data)

    def abort(self) -> None:
        self.parts = []


class MemoryBackend(Backend):
    def __init__(self):
        self.objects: Dict[ObjectKey, bytes] = {}
        self._lock = threading.Lock()

    def size(self, key: ObjectKey) -> int:
        try:
            return len(self.objects[key])
        except KeyError:
            raise ObjectNotFound(str(key)) from None

    def read_range(self, key: ObjectKey, start: int, end: int) -> bytes:
        try:
            return self.objects[key][start:end]
        except KeyError:
            raise ObjectNotFound(str(key)) from None

    def create_multipart(self, key: ObjectKey) -> MultipartUpload:
        return _MemoryUpload(self, key)

    def delete(self, key: ObjectKey) -> None:
        with self._lock:
            self.objects.pop(key, None)


def request_count(size: int, chunk: int) -> int:
    """Requests needed to move ``size`` bytes in ``chunk``-byte pieces (at least one)."""
    if chunk <= 0:
        raise ValueError("chunk size must be positive")
    return max(1, math.ceil(size / chunk))


class ObjectStore:
    def __init__(self, backend: Backend, meter: Optional[RequestMeter] = None):
        self.backend = backend
        self.meter = meter or RequestMeter()

    def size(self, key: ObjectKey) -> int:
        return self.backend.size(key)

    def exists(self, key: ObjectKey) -> bool:
        return self.backend.exists(key)

    def delete(self, key: ObjectKey) -> None:
        self.backend.delete(key)

    def get_object_chunked(self, key: ObjectKey, chunk_bytes: int = DEFAULT_GET_CHUNK) -> Iterator[bytes]:
        """Yield the object in ranged reads of ``chunk_bytes``; one GET per chunk.

        The object's size is resolved eagerly so a missing key fails at call time.
        """
        if chunk_bytes <= 0:
            raise ValueError("chunk size must be positive")
        size = self.backend.size(key)

        def chunks():
            if size == 0:
                self.meter.count_get(0)
                yield b""
                return
            for start in range(0, size, chunk_bytes):
                data = self.backend.read_range(key, start, min(size, start + chunk_bytes))
                self.meter.count_get(len(data))
                yield data

        return chunks()

    def get_object(self, key: ObjectKey, chunk_bytes: int = DEFAULT_GET_CHUNK) -> bytes:
        return b"".join(self.get_object_chunked(key, chunk_bytes))

    def put_object_multipart(self, key: ObjectKey, source: Union[bytes, Iterable[bytes]],
                             part_bytes: int = DEFAULT_PUT_PART) -> int:
        """Upload ``source`` in parts of exactly ``part_bytes`` (last part may be short).

        On any failure the partial upload is aborted and the error re-raised.
        """
        if part_bytes <= 0:
            raise ValueError("part size must be positive")
        if isinstance(source, (bytes, bytearray, memoryview)):
            source = [bytes(source)]
        upload = self.backend.create_multipart(key)
        try:
            pending = bytearray()
            sent = 0
            for chunk in source:
                pending += chunk
                while len(pending) >= part_bytes:
                    part = bytes(pending[:part_bytes])
                    del pending[:part_bytes]
                    upload.upload_part(part)
                    self.meter.count_put(len(part))
                    sent += 1
            if pending or sent == 0:
                upload.upload_part(bytes(pending))
                self.meter.count_put(len(pending))
            return upload.complete()
        except BaseException:
            upload.abort()
            raise


def assign_bucket(partition_index: int, buckets: List[str], rng_seed: int) -> str:
    """Pseudo-random bucket for a partition; a pure function of (index, seed)."""
    if not buckets:
        raise ValueError("no buckets configured")
    rng = random.Random(f"{rng_seed}:{partition_index}")
    return buckets[rng.randrange(len(buckets))]


def bucket_names(prefix: str, count: int) -> List[str]:
    return [f"{prefix}-{i:03d}" for i in range(count)]
