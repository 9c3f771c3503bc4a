"""100-byte sort records: generation, checksums and validation.

Functional stand-ins for the sort benchmark's gensort/valsort tools. The
generator is counter based, so the bytes of record ``g`` depend only on
``g`` and any partition can be produced independently of the others.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, List, Optional, Sequence, Union

import numpy as np

RECORD_SIZE = 100
KEY_SIZE = 10
PAYLOAD_SIZE = RECORD_SIZE - KEY_SIZE

MASK64 = (1 << 64) - 1
MASK128 = (1 << 128) - 1

# splitmix64 constants
_GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB

_KEY_TAIL_SALT = 0x5851F42D4C957F2D
_PAYLOAD_SALT = 0x2545F4914F6CDD1D
_DIGEST_SEED = 0x6A09E667F3BCC909

# 12 little-endian u64 words cover bytes 0..96, one u32 word covers 96..100
_DIGEST_WORDS = 12

GENERATE_BATCH = 65536


class RecordFormatError(ValueError):
    """A byte stream is not a whole number of 100-byte records."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class PartialOutputError(IOError):
    """The sink failed after some records had already been written."""

    def __init__(self, records_written: int, cause: BaseException):
        super().__init__(f"sink write failed after {records_written} records: {cause}")
        self.records_written = records_written
        self.__cause__ = cause


def mix64(x: int) -> int:
    """splitmix64 finalizer on a Python int."""
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def mix64_array(x: np.ndarray) -> np.ndarray:
    z = x.astype(np.uint64) + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
    return z ^ (z >> np.uint64(31))


# ---------------------------------------------------------------------------
# Record views
# ---------------------------------------------------------------------------

def as_records(buf: Union[bytes, bytearray, memoryview, np.ndarray]) -> np.ndarray:
    """View a record-aligned buffer as an ``(n, 100)`` uint8 array (no copy)."""
    if isinstance(buf, np.ndarray):
        arr = buf.reshape(-1) if buf.ndim != 2 else buf
        if arr.ndim == 2:
            if arr.shape[1] != RECORD_SIZE:
                raise RecordFormatError("record width is not 100 bytes", 0)
            return arr
    else:
        arr = np.frombuffer(buf, dtype=np.uint8)
    if arr.size % RECORD_SIZE:
        raise RecordFormatError("trailing partial record", arr.size - arr.size % RECORD_SIZE)
    return arr.reshape(-1, RECORD_SIZE)


def key_prefixes(records: np.ndarray) -> np.ndarray:
    """Big-endian u64 of key bytes 0..8 for every record."""
    if len(records) == 0:
        return np.empty(0, dtype=np.uint64)
    head = np.ascontiguousarray(records[:, :8])
    return head.view(">u8").reshape(-1).astype(np.uint64)


def key_tails(records: np.ndarray) -> np.ndarray:
    """Key bytes 8..10 as a u16, the tie-breaker below the partition key."""
    return (records[:, 8].astype(np.uint16) << np.uint16(8)) | records[:, 9].astype(np.uint16)


def partition_key_of(record: Union[bytes, bytearray, memoryview]) -> int:
    if len(record) != RECORD_SIZE:
        raise RecordFormatError(f"record has {len(record)} bytes, expected 100", 0)
    return int.from_bytes(bytes(record[:8]), "big")


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def generate_records(global_offset: int, count: int) -> np.ndarray:
    """Records ``global_offset .. global_offset+count`` as an ``(count, 100)`` array.

    Layout of record ``g``:

    * bytes 0..8   -- ``mix64(g)`` big-endian (uniform partition key)
    * bytes 8..10  -- top 16 bits of ``mix64(g ^ salt)``
    * bytes 10..18 -- ``g`` big-endian, so every record is distinct
    * bytes 18..100 -- ``mix64(g * 11 + j ^ salt)`` words, j = 0..10, truncated
    """
    if global_offset < 0 or count < 0:
        raise ValueError("offset and count must be non-negative")
    out = np.empty((count, RECORD_SIZE), dtype=np.uint8)
    if count == 0:
        return out
    g = np.arange(global_offset, global_offset + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        out[:, 0:8] = mix64_array(g).astype(">u8").view(np.uint8).reshape(count, 8)
        tail = mix64_array(g ^ np.uint64(_KEY_TAIL_SALT)) >> np.uint64(48)
        out[:, 8:10] = tail.astype(">u2").view(np.uint8).reshape(count, 2)
        out[:, 10:18] = g.astype(">u8").view(np.uint8).reshape(count, 8)
        base = g * np.uint64(11)
        words = np.empty((count, 11), dtype="<u8")
        for j in range(11):
            words[:, j] = mix64_array((base + np.uint64(j)) ^ np.uint64(_PAYLOAD_SALT))
    out[:, 18:100] = words.view(np.uint8).reshape(count, 88)[:, :82]
    return out


def generate_record_scalar(g: int) -> bytes:
    """Pure-Python rendering of record ``g``; reference for :func:`generate_records`."""
    key_head = mix64(g).to_bytes(8, "big")
    key_tail = (mix64(g ^ _KEY_TAIL_SALT) >> 48).to_bytes(2, "big")
    ordinal = g.to_bytes(8, "big")
    words = b"".join(
        mix64(((g * 11 + j) & MASK64) ^ _PAYLOAD_SALT).to_bytes(8, "little") for j in range(11)
    )
    return key_head + key_tail + ordinal + words[:82]


def generate_partition(global_record_offset: int, record_count: int, sink: BinaryIO,
                       batch: int = GENERATE_BATCH) -> int:
    """Write ``record_count`` records to ``sink`` and return their checksum."""
    total = 0
    written = 0
    for start in range(0, record_count, batch):
        n = min(batch, record_count - start)
        recs = generate_records(global_record_offset + start, n)
        total = (total + checksum(recs)) & MASK128
        try:
            sink.write(recs.tobytes())
        except Exception as exc:
            raise PartialOutputError(written, exc) from exc
        written += n
    return total


def generate_bytes(global_record_offset: int, record_count: int) -> bytes:
    return generate_records(global_record_offset, record_count).tobytes()


# ---------------------------------------------------------------------------
# Checksums
# ---------------------------------------------------------------------------

def record_digests(records: np.ndarray) -> np.ndarray:
    """Fixed 64-bit digest of each record (vectorised)."""
    n = len(records)
    if n == 0:
        return np.empty(0, dtype=np.uint64)
    words = np.ascontiguousarray(records[:, :96]).view("<u8").reshape(n, _DIGEST_WORDS)
    last = np.ascontiguousarray(records[:, 96:]).view("<u4").reshape(n).astype(np.uint64)
    h = np.full(n, _DIGEST_SEED, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(_DIGEST_WORDS):
            h = mix64_array(h ^ words[:, j].astype(np.uint64))
        h = mix64_array(h ^ last)
    return h


def record_digest_scalar(record: bytes) -> int:
    """Pure-Python digest of one record; reference for :func:`record_digests`."""
    h = _DIGEST_SEED
    for j in range(_DIGEST_WORDS):
        h = mix64(h ^ int.from_bytes(record[8 * j:8 * j + 8], "little"))
    return mix64(h ^ int.from_bytes(record[96:100], "little"))


def checksum(records: Union[np.ndarray, bytes, bytearray, memoryview]) -> int:
    """Sum of per-record digests modulo 2**128. Order independent."""
    recs = as_records(records)
    d = record_digests(recs)
    if d.size == 0:
        return 0
    # split into 32-bit halves so the sums cannot overflow u64 for n < 2**32
    lo = int((d & np.uint64(0xFFFFFFFF)).sum(dtype=np.uint64))
    hi = int((d >> np.uint64(32)).sum(dtype=np.uint64))
    return ((hi << 32) + lo) & MASK128


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationSummary:
    record_count: int
    first_key: Optional[bytes]
    last_key: Optional[bytes]
    is_sorted: bool
    checksum: int

    def __post_init__(self):
        if (self.record_count == 0) != (self.first_key is None and self.last_key is None):
            raise ValueError("record_count == 0 iff keys are absent")

    def to_line(self, index: int) -> str:
        first = self.first_key.hex() if self.first_key is not None else "-"
        last = self.last_key.hex() if self.last_key is not None else "-"
        return (f"{index} {self.record_count} {first} {last} "
                f"{int(self.is_sorted)} {self.checksum:032x}")

    @staticmethod
    def from_line(line: str) -> "tuple[int, ValidationSummary]":
        index, count, first, last, is_sorted, csum = line.split()
        return int(index), ValidationSummary(
            record_count=int(count),
            first_key=None if first == "-" else bytes.fromhex(first),
            last_key=None if last == "-" else bytes.fromhex(last),
            is_sorted=is_sorted == "1",
            checksum=int(csum, 16),
        )


def _chunks(stream) -> Iterator[bytes]:
    if isinstance(stream, (bytes, bytearray, memoryview)):
        yield bytes(stream)
    elif hasattr(stream, "read"):
        yield from iter(lambda: stream.read(1 << 22), b"")
    else:
        yield from stream


def validate_partition(stream: Union[bytes, BinaryIO, Iterable[bytes]]) -> ValidationSummary:
    """Single-pass order check and checksum over a record stream.

    ``stream`` may be a bytes object, a binary file, or an iterable of byte
    chunks; chunks need not be record aligned.
    """
    count = 0
    total = 0
    first: Optional[bytes] = None
    prev: Optional[bytes] = None
    is_sorted = True
    carry = b""
    offset = 0
    for chunk in _chunks(stream):
        data = carry + chunk if carry else chunk
        usable = len(data) - len(data) % RECORD_SIZE
        carry = data[usable:]
        if not usable:
            continue
        recs = np.frombuffer(data, dtype=np.uint8, count=usable).reshape(-1, RECORD_SIZE)
        total = (total + checksum(recs)) & MASK128
        if first is None:
            first = recs[0, :KEY_SIZE].tobytes()
        if is_sorted:
            if prev is not None and recs[0, :KEY_SIZE].tobytes() < prev:
                is_sorted = False
            elif len(recs) > 1:
                hi = key_prefixes(recs)
                lo = key_tails(recs)
                dec = (hi[1:] < hi[:-1]) | ((hi[1:] == hi[:-1]) & (lo[1:] < lo[:-1]))
                is_sorted = not bool(dec.any())
        prev = recs[-1, :KEY_SIZE].tobytes()
        count += len(recs)
        offset += usable
    if carry:
        raise RecordFormatError("trailing partial record", offset)
    return ValidationSummary(count, first, prev, is_sorted, total)


@dataclass
class TotalOrderReport:
    passed: bool
    record_count: int
    checksum: int
    expected_checksum: int
    violation: Optional[str] = None
    violation_index: Optional[int] = None

    def describe(self) -> str:
        if self.passed:
            return (f"PASS records={self.record_count} checksum={self.checksum:032x}")
        return (f"FAIL {self.violation} at partition {self.violation_index} "
                f"records={self.record_count} checksum={self.checksum:032x} "
                f"expected={self.expected_checksum:032x}")


def validate_total(summaries: Sequence[ValidationSummary], expected_input_checksum: int) -> TotalOrderReport:
    """Check per-partition order, cross-partition boundaries and checksum equality."""
    count = 0
    total = 0
    violation = None
    where = None
    prev_last: Optional[bytes] = None
    prev_index = -1
    for i, s in enumerate(summaries):
        count += s.record_count
        total = (total + s.checksum) & MASK128
        if violation is not None:
            continue
        if not s.is_sorted:
            violation, where = "unsorted", i
            continue
        if s.record_count == 0:
            continue
        if prev_last is not None and prev_last > s.first_key:
            violation, where = f"boundary {prev_index}/{i}", prev_index
            continue
        prev_last = s.last_key
        prev_index = i
    if violation is None and total != expected_input_checksum & MASK128:
        violation, where = "checksum mismatch", None
    return TotalOrderReport(
        passed=violation is None,
        record_count=count,
        checksum=total,
        expected_checksum=expected_input_checksum & MASK128,
        violation=violation,
        violation_index=where,
    )


def write_summaries(path, summaries: Sequence[ValidationSummary]) -> None:
    with open(path, "w") as f:
        for i, s in enumerate(summaries):
            f.write(s.to_line(i) + "\n")


def read_summaries(path) -> List[ValidationSummary]:
    rows = []
    with open(path) as f:
        for line in f:
            if line.strip():
                rows.append(ValidationSummary.from_line(line))
    rows.sort(key=lambda r: r[0])
    return [s for _, s in rows]


__all__ = [
    "RECORD_SIZE", "KEY_SIZE", "RecordFormatError", "PartialOutputError", "ValidationSummary",
    "TotalOrderReport", "as_records", "checksum", "generate_partition", "generate_records",
    "generate_bytes", "partition_key_of", "validate_partition", "validate_total",
    "write_summaries", "read_summaries", "key_prefixes", "key_tails",
]
