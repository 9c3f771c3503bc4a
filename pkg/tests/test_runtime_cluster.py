from dataclasses import replace

import pytest

from exosort.pipeline import Manifest, make_store, run_sort
from exosort.runtime import FaultInjector, JobFailed, max_concurrency, replay_buffers, stage_barrier_holds
from exosort.runtime.blocks import spill_path
from exosort.runtime.worker import WorkerConfig

from jobs import run_job, small_config
import oracles


@pytest.mark.parametrize("transport", ["in-process", "tcp"])
def test_small_job_matches_oracle(tmp_path, transport):
    cfg = small_config(tmp_path, transport=transport, threshold_blocks=2)
    run = run_job(tmp_path, cfg)
    assert run.validation.passed, run.validation.describe()
    assert run.output_bytes() == oracles.comparison_sort(run.input_bytes())
    assert stage_barrier_holds(run.events)


def test_empty_map_stage(tmp_path):
    cfg = small_config(tmp_path, partitions=0)
    run = run_job(tmp_path, cfg)
    assert run.report.map_tasks == 0 and run.report.merge_tasks == 0
    assert len(run.output.entries) == 4 and run.output.total_bytes == 0
    assert run.validation.passed


def test_single_empty_partition(tmp_path):
    cfg = small_config(tmp_path, partitions=1, records=0)
    run = run_job(tmp_path, cfg)
    assert run.input.entries[0].size_bytes == 0
    assert [e.size_bytes for e in run.output.entries] == [0, 0, 0, 0]
    assert run.validation.passed


def test_map_parallelism_respected(tmp_path):
    cfg = small_config(tmp_path, partitions=8, cores=3)  # floor(3/4 * 3) = 2
    assert cfg.cluster[0].map_parallelism == 2
    run = run_job(tmp_path, cfg)
    assert max(max_concurrency(run.events, "map_start", ["map_end", "map_fail"]).values()) <= 2
    assert max(max_concurrency(run.events, "merge_start", ["merge_end", "merge_fail"]).values()) <= 2


def test_counts_from_event_log(tmp_path):
    cfg = small_config(tmp_path, partitions=10, workers=2, reducers=6, threshold_blocks=4)
    run = run_job(tmp_path, cfg)
    r = run.report
    assert r.map_tasks == 10 and r.slice_deliveries == 20
    # 10 blocks per worker, merge every 4: two full merges and a flush of 2
    assert r.merges_per_worker == [3, 3]
    replay = replay_buffers(run.events)
    assert replay.merges == {0: 3, 1: 3}
    spilled = [e for e in run.events if e["event"] == "spill"]
    assert len(spilled) == sum(r.merges_per_worker) * cfg.plan.R1
    for w in range(2):
        for seq in range(3):
            for j in range(3):
                assert spill_path(run.work / "spill" / f"worker-{w}", w, seq, j).exists()


def test_one_merge_per_worker_with_r_equal_w(tmp_path):
    cfg = small_config(tmp_path, partitions=3, workers=2, reducers=2, threshold_blocks=40)
    run = run_job(tmp_path, cfg)
    assert run.report.merges_per_worker == [1, 1]
    assert run.validation.passed


@pytest.mark.parametrize("fault", ["map-1", "merge-0-0", "reduce-1-0", "map-2@1"])
def test_single_fault_is_retried(tmp_path, fault):
    cfg = small_config(tmp_path, threshold_blocks=2)
    clean = run_job(tmp_path / "clean", cfg)
    faults = [fault, "map-2"] if fault == "map-2@1" else [fault]
    run = run_job(tmp_path / "faulty", small_config(tmp_path / "faulty", threshold_blocks=2),
                  injector=FaultInjector.parse(faults))
    assert run.validation.passed
    assert run.report.retries == len(faults)
    assert [s.checksum for s in run.validation.summaries] == [s.checksum for s in clean.validation.summaries]


def test_retries_exhausted(tmp_path):
    cfg = small_config(tmp_path, max_retries=1)
    with pytest.raises(JobFailed) as info:
        run_job(tmp_path, cfg, injector=FaultInjector.parse(["map-3", "map-3@1"]))
    assert info.value.task == "map-3"
    assert len(info.value.lineage) == 2
    assert info.value.event_log.endswith("events.jsonl")


def test_missing_input_object_fails_naming_partition(tmp_path):
    cfg = small_config(tmp_path, max_retries=0)
    store = make_store(cfg.storage_root)
    from exosort.pipeline import generate_input
    m = generate_input(cfg.plan, cfg.buckets, cfg.seed, store)
    store.delete(m.entries[2].key)
    with pytest.raises(JobFailed) as info:
        run_sort(m, cfg, tmp_path / "work", store=store)
    assert info.value.task == "map-2"


def test_manifest_size_must_match_plan(tmp_path):
    cfg = small_config(tmp_path)
    with pytest.raises(ValueError):
        run_sort(Manifest([]), cfg, tmp_path / "work", store=make_store(cfg.storage_root))


def test_back_pressure_defers_acks(tmp_path):
    cfg = small_config(tmp_path, partitions=12, threshold_blocks=2)
    cfg = replace(cfg, cluster=[WorkerConfig(c.worker_id, cores=4, merge_parallelism=1) for c in cfg.cluster])
    run = run_job(tmp_path, cfg, merge_delay=0.05)
    replay = replay_buffers(run.events)
    assert replay.deferred_acks > 0
    assert max(replay.peak_buffered.values()) <= 2
    assert max(replay.peak_in_flight.values()) <= 2 * (1 + 1)
    assert run.validation.passed
