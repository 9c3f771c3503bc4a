import pytest
from hypothesis import given, settings, strategies as st

from exosort.runtime import AckDecision, BlockRef, EventLog, MergeController, replay_buffers


class Harness:
    def __init__(self, threshold=2, slots=1, threshold_bytes=10**12):
        self.launched = []
        self.acked = []
        self.log = EventLog()
        self.c = MergeController(0, slots, self.launched.append, threshold_blocks=threshold,
                                 threshold_bytes=threshold_bytes, log=self.log)

    def send(self, bid, size=100):
        blk = BlockRef.in_memory(bid, b"x" * size, "map")
        return self.c.on_block_received(blk, f"map-{bid}", lambda: self.acked.append(bid))

    def finish(self, i=0):
        spec = self.launched[i]
        self.c.on_merge_done(spec.task_index)
        return spec


def ids(spec):
    return [b.block_id for b in spec.inputs]


def test_threshold_launches_and_acks():
    h = Harness(threshold=2, slots=1)
    assert h.send("b1") is AckDecision.ACK
    assert h.send("b2") is AckDecision.ACK
    assert [ids(s) for s in h.launched] == [["b1", "b2"]]
    assert h.acked == ["b1", "b2"]
    assert h.c.state.buffered_blocks == []


def test_ack_deferred_while_slot_busy():
    h = Harness(threshold=1, slots=1)
    h.send("b1")
    assert len(h.launched) == 1
    assert h.send("b2") is AckDecision.DEFERRED
    assert h.acked == ["b1"]
    h.finish(0)
    assert h.acked == ["b1", "b2"]
    assert ids(h.launched[1]) == ["b2"]


def test_overflow_blocks_wait_outside_buffer():
    h = Harness(threshold=1, slots=1)
    h.send("b1")
    h.send("b2")          # buffered, deferred
    assert h.send("b3") is AckDecision.DEFERRED   # buffer full: held back
    assert len(h.c.state.buffered_blocks) == 1
    assert [b for _, b in h.c.state.pending_acks] == ["b2", "b3"]
    h.finish(0)           # b2 merges, b3 enters the buffer and is deferred again
    assert h.acked == ["b1", "b2"]
    h.finish(1)
    assert h.acked == ["b1", "b2", "b3"]


def test_hundred_blocks_threshold_forty():
    h = Harness(threshold=40, slots=10**6)
    for i in range(100):
        h.send(f"b{i}")
    h.c.request_flush()
    assert [len(s.inputs) for s in h.launched] == [40, 40, 20]
    assert len(h.acked) == 100


def test_flush_of_partial_buffer():
    h = Harness(threshold=40, slots=1)
    for i in range(39):
        h.send(f"b{i}")
    assert h.launched == []
    h.c.request_flush()
    assert [len(s.inputs) for s in h.launched] == [39]
    h.finish(0)
    assert h.c.idle


def test_flush_of_empty_controller_is_noop():
    h = Harness()
    h.c.request_flush()
    assert h.launched == [] and h.c.idle


def test_byte_threshold():
    h = Harness(threshold=100, slots=1, threshold_bytes=250)
    h.send("a", 100)
    h.send("b", 100)
    assert h.launched == []
    h.send("c", 100)
    assert [ids(s) for s in h.launched] == [["a", "b", "c"]]


def test_duplicate_block_is_idempotent():
    h = Harness(threshold=3)
    h.send("b1")
    assert h.send("b1") is AckDecision.DUPLICATE
    assert len(h.c.state.buffered_blocks) == 1
    assert h.acked == ["b1", "b1"]


def test_duplicate_of_pending_block_waits_with_it():
    h = Harness(threshold=1, slots=1)
    h.send("b1")
    h.send("b2")
    assert h.send("b2") is AckDecision.DEFERRED
    h.finish(0)
    assert h.acked == ["b1", "b2", "b2"]
    assert ids(h.launched[1]) == ["b2"]


def test_failed_merge_relaunches_same_blocks():
    h = Harness(threshold=1, slots=1)
    h.send("b1")
    spec = h.launched[0]
    from exosort.runtime import retry_task
    h.c.on_merge_failed(spec.task_index, lambda s, e: retry_task(s, e, 3), RuntimeError("boom"))
    assert h.launched[1].attempt == 1 and ids(h.launched[1]) == ["b1"]
    assert h.c.state.running_merges == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.lists(st.booleans(), min_size=1, max_size=120))
def test_buffer_never_exceeds_threshold(threshold, slots, script):
    """Random interleaving of arrivals (True) and merge completions (False)."""
    h = Harness(threshold=threshold, slots=slots)
    done = 0
    n = 0
    for arrive in script:
        if arrive:
            h.send(f"b{n}")
            n += 1
        elif done < len(h.launched):
            h.finish(done)
            done += 1
        assert len(h.c.state.buffered_blocks) <= threshold
        assert h.c.state.running_merges <= slots
    h.c.request_flush()
    while done < len(h.launched):
        h.finish(done)
        done += 1
    assert h.c.idle
    assert sorted(h.acked) == sorted(f"b{i}" for i in range(n))
    merged = [b for s in h.launched for b in ids(s)]
    assert sorted(merged) == sorted(f"b{i}" for i in range(n))
    replay = replay_buffers(h.log.snapshot())
    assert max(replay.peak_buffered.values(), default=0) <= threshold
    assert max(replay.peak_in_flight.values(), default=0) <= threshold * (slots + 1)
