"""Discrete-event laboratory for scheduling data-flow task graphs on
heterogeneous CPU+GPU platforms."""

from .graph import AccessMode, DataBlock, GraphBuilder, GraphError, Task, TaskGraph
from .kernels import (
    ALL_KINDS,
    default_timing_table,
    default_timings,
    gen_cholesky,
    gen_family,
    gen_lu_incpiv,
    gen_qr,
    gen_random_layered,
    kind_flops,
)
from .perfmodel import (
    ExecutionNoise,
    LoadTimestamps,
    PerfModel,
    PerfModelError,
    TaskTiming,
    apply_noise,
    load_timing_table,
)
from .platform import HOST, Link, Platform, PlatformError, ResourceClass, Worker, build_platform
from .sched import (
    ActivationBatch,
    Assignment,
    DadaConfig,
    DadaScheduler,
    HeftScheduler,
    SchedContext,
    SchedulerError,
    SearchState,
    WorkStealingScheduler,
    affinity_phase,
    affinity_score,
    dada_activate,
    dual_assign,
    dual_search,
    heft_activate,
    make_scheduler,
)
from .sim import (
    DeadlockError,
    ResidencyMap,
    SimReport,
    Simulation,
    SimulationError,
    TaskRun,
    TraceEvent,
    area_bound,
    critical_path_bound,
    flops_of,
    run,
)

__version__ = "0.1.0"
