"""Mini execution plane: scheduling, merge controllers, spilling, retries."""
from .blocks import BlockRef, BlockState, restore_block, spill_block, spill_path
from .controller import AckDecision, MergeController, MergeControllerState
from .driver import Cluster, StageReport, run_map_stage, run_reduce_stage
from .events import EventLog, max_concurrency, read_events, replay_buffers, stage_barrier_holds
from .tasks import FaultInjector, JobFailed, TaskSpec, retry_task
from .transport import InProcessTransport, TcpTransport, make_transport
from .worker import JobContext, JobSettings, WorkerConfig

__all__ = [
    "AckDecision", "BlockRef", "BlockState", "Cluster", "EventLog", "FaultInjector", "InProcessTransport",
    "JobContext", "JobFailed", "JobSettings", "MergeController", "MergeControllerState", "StageReport",
    "TaskSpec", "TcpTransport", "WorkerConfig", "make_transport", "max_concurrency", "read_events",
    "replay_buffers", "restore_block", "retry_task", "run_map_stage", "run_reduce_stage", "spill_block",
    "spill_path", "stage_barrier_holds",
]
