import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exosort.partition import PartitionPlan, reducer_bounds
from exosort.record import RecordFormatError, generate_bytes, partition_key_of
from exosort.sortlib import (
    MergeStats, SortedRun, SourceReadError, UnsortedRunError, iter_records, merge_runs,
    merge_runs_streaming, sort_and_slice,
)

import oracles


def _in_range(buf: bytes, lo: int, hi: int) -> bool:
    return all(lo <= partition_key_of(r) < hi for r in oracles.split(buf))


def test_empty_buffer_gives_w_empty_slices():
    runs = sort_and_slice(b"", PartitionPlan(1, 0, 4, 4))
    assert [r.count for r in runs] == [0, 0, 0, 0]


def test_sort_and_slice_equals_oracle():
    buf = generate_bytes(0, 1000)
    plan = PartitionPlan(1, len(buf), 4, 8)
    runs = sort_and_slice(buf, plan)
    assert b"".join(r.data for r in runs) == oracles.comparison_sort(buf)
    for w, r in enumerate(runs):
        assert _in_range(r.data, *plan.worker_bounds()[w:w + 2])


def test_single_prefix_lands_in_one_slice():
    rng = random.Random(1)
    recs = [b"\x80" + b"\x00" * 7 + bytes(rng.getrandbits(8) for _ in range(92)) for _ in range(50)]
    runs = sort_and_slice(b"".join(recs), PartitionPlan(1, 5000, 4, 4))
    assert [r.count for r in runs] == [0, 0, 50, 0]


def test_sort_and_slice_rejects_misaligned():
    with pytest.raises(RecordFormatError):
        sort_and_slice(b"x" * 150, PartitionPlan(1, 150, 1, 1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**40), st.integers(0, 500), st.sampled_from([(1, 1), (2, 4), (4, 20), (3, 3)]))
def test_sort_and_slice_property(offset, n, wr):
    buf = generate_bytes(offset, n)
    plan = PartitionPlan(1, len(buf), *wr)
    runs = sort_and_slice(buf, plan)
    assert len(runs) == wr[0]
    assert b"".join(r.data for r in runs) == oracles.comparison_sort(buf)


def test_ten_byte_tie_break():
    a = b"\x00" * 8 + b"\x00\x02" + b"a" * 90
    b = b"\x00" * 8 + b"\x00\x01" + b"b" * 90
    (run,) = sort_and_slice(a + b, PartitionPlan(1, 200, 1, 1))
    assert run.data == b + a


def test_merge_identity():
    run = oracles.comparison_sort(generate_bytes(0, 100))
    (out,) = merge_runs([SortedRun(run)], reducer_bounds(1))
    assert out.data == run


def test_merge_interleave():
    keys = [bytes([k]) + b"\x00" * 99 for k in (1, 2, 3, 4)]
    (out,) = merge_runs([keys[0] + keys[2], keys[1] + keys[3]], reducer_bounds(1))
    assert out.data == b"".join(keys)


def test_merge_forty_runs_five_reducers():
    runs = [oracles.comparison_sort(generate_bytes(i * 100, 100)) for i in range(40)]
    bounds = reducer_bounds(5)
    outs = merge_runs(runs, bounds)
    assert b"".join(o.data for o in outs) == oracles.comparison_sort(b"".join(runs))
    for j, o in enumerate(outs):
        assert _in_range(o.data, bounds[j], bounds[j + 1])


def test_merge_names_unsorted_run():
    good = oracles.comparison_sort(generate_bytes(0, 10))
    bad = generate_bytes(10, 10)
    assert not oracles.is_sorted(bad)
    with pytest.raises(UnsortedRunError) as info:
        merge_runs([good, bad], reducer_bounds(1))
    assert info.value.run == 1


def test_merge_rejects_out_of_range_input():
    plan = PartitionPlan(1, 0, 4, 4)
    runs = sort_and_slice(generate_bytes(0, 200), plan)
    with pytest.raises(ValueError):
        merge_runs([runs[0]], plan.local_reducer_bounds(1))


def test_merge_equal_keys_keep_run_order():
    rec = lambda tag: b"\x05" * 10 + tag * 90  # noqa: E731
    (out,) = merge_runs([rec(b"b"), rec(b"a")], reducer_bounds(1))
    assert out.data == rec(b"b") + rec(b"a")


def _stream(buf: bytes):
    return iter_records([buf])


def test_streaming_zero_sources():
    assert list(merge_runs_streaming([])) == []


def test_streaming_single_source_passthrough():
    run = oracles.comparison_sort(generate_bytes(0, 50))
    assert b"".join(merge_runs_streaming([_stream(run)], output_records=7)) == run


def test_streaming_many_sources_bounded_buffer():
    runs = [oracles.comparison_sort(generate_bytes(i * 1000, 1000)) for i in range(625)]
    stats = MergeStats()
    out = b"".join(merge_runs_streaming([_stream(r) for r in runs], output_records=4096, stats=stats))
    assert out == oracles.comparison_sort(b"".join(runs))
    assert stats.records_out == 625_000
    assert stats.peak_buffered <= 625 + 4096


def test_streaming_reports_failing_source():
    def broken():
        yield b"\x00" * 100
        raise OSError("read error")

    with pytest.raises(SourceReadError) as info:
        list(merge_runs_streaming([_stream(b"\x01" * 100), broken()]))
    assert info.value.source == 1


def test_streaming_detects_unsorted_source():
    with pytest.raises(UnsortedRunError):
        list(merge_runs_streaming([_stream(b"\x02" * 100 + b"\x01" * 100)]))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 80), min_size=1, max_size=12), st.integers(1, 50))
def test_streaming_matches_batch_merge(sizes, out_records):
    runs, off = [], 0
    for n in sizes:
        runs.append(oracles.comparison_sort(generate_bytes(off, n)))
        off += n
    streamed = b"".join(merge_runs_streaming([_stream(r) for r in runs], output_records=out_records))
    (batch,) = merge_runs(runs, reducer_bounds(1))
    assert streamed == batch.data


def test_iter_records_rejects_partial_tail():
    with pytest.raises(ValueError):
        list(iter_records([b"x" * 150]))


def test_sort_handles_numpy_input():
    arr = np.frombuffer(generate_bytes(0, 30), np.uint8).reshape(-1, 100)
    (run,) = sort_and_slice(arr, PartitionPlan(1, 3000, 1, 1))
    assert run.data == oracles.comparison_sort(arr.tobytes())
