"""Deterministic discrete-event execution of a task graph on a platform.

The engine owns all mutable state (queues, residency, time-stamps, link and
switch occupancy) and serializes every scheduler callback, so a run is a pure
function of (graph, platform, scheduler, model, seed, noise).
"""

from __future__ import annotations

import heapq
import random
from collections import deque, namedtuple
from dataclasses import dataclass

from .perfmodel import LoadTimestamps, apply_noise
from .platform import HOST, ResourceClass
from .sched import ActivationBatch, SchedContext


class SimulationError(RuntimeError):
    """Internal inconsistency while simulating."""


class DeadlockError(SimulationError):
    """No runnable task and no pending event while tasks remain."""

    def __init__(self, stuck):
        self.stuck = tuple(stuck)
        super().__init__(f"simulation deadlocked with tasks stuck: {list(stuck)}")


TaskRun = namedtuple("TaskRun", "worker start end")
TraceEvent = namedtuple("TraceEvent", "time kind worker task data nbytes")

# event kinds in the heap
_TASK_END = 0
_TRANSFER_END = 1


class ResidencyMap:
    """Which memory nodes hold a valid copy of each data block.

    Blocks start valid on the host; completing a write shrinks the set to
    the writer's node, a finished transfer adds its destination.
    """

    def __init__(self, n_blocks: int):
        self._nodes = [{HOST} for _ in range(n_blocks)]

    def __len__(self):
        return len(self._nodes)

    def __getitem__(self, data_id):
        return self._nodes[data_id]

    def add(self, data_id, node):
        self._nodes[data_id].add(node)

    def set_only(self, data_id, node):
        self._nodes[data_id] = {node}

    def as_sets(self):
        return [set(s) for s in self._nodes]


@dataclass(eq=True)
class SimReport:
    """Everything measured in one run."""

    makespan: float
    gflops: float
    bytes_h2d: int
    bytes_d2h: int
    bytes_d2d: int
    bytes_total: int
    steals_ok: int
    steals_failed: int
    busy: tuple
    schedule: dict  # task id -> TaskRun
    events: list | None = None


class _Transfer:
    __slots__ = ("data", "nbytes", "hops", "hop_idx", "dest", "waiters", "requester", "host_deps")

    def __init__(self, data, nbytes, hops, dest, requester):
        self.data = data
        self.nbytes = nbytes
        self.hops = hops
        self.hop_idx = 0
        self.dest = dest
        self.waiters = []
        self.requester = requester
        self.host_deps = []  # jobs waiting for this one to stage the block on the host


class Simulation:
    """One run; build, call ``run()`` once, then inspect the report (and, for
    white-box tests, the final residency map and calibrated model)."""

    def __init__(self, graph, platform, scheduler, model, seed=0, noise=0.0, trace=False):
        self.graph = graph
        self.platform = platform
        self.scheduler = scheduler
        self.model = model.copy()  # calibration must not leak across runs
        self.noise = apply_noise(seed, noise)
        self.rng = random.Random(seed)
        self.trace = [] if trace else None

        n_workers = platform.n_workers
        self.queues = [deque() for _ in range(n_workers)]
        self.running = [None] * n_workers  # (task id, start, duration) while executing
        self.wait_task = [None] * n_workers  # task id while inputs are in flight
        self.wait_pending = [0] * n_workers
        self.busy = [0.0] * n_workers

        self.stamps = LoadTimestamps(n_workers)
        self.residency = ResidencyMap(len(graph.data))
        self.ctx = SchedContext(graph, platform, self.model, self.stamps, self.residency)
        self.preds_left = graph.in_degrees()

        self.clock = 0.0
        self._events = []
        self._seq = 0
        self._done = 0
        self.schedule = {}
        self._inflight = {}  # (data id, dest node) -> _Transfer
        self._staging = {}  # data id -> transfer currently copying it into host memory
        self._link_avail = {}  # device node -> busy-until
        self._switch_active = [[] for _ in range(platform.n_switches)]
        self._slots = platform.switch_slots

        self.bytes_h2d = 0
        self.bytes_d2h = 0
        self.bytes_d2d = 0
        self.steals_ok = 0
        self.steals_failed = 0

    # -- event plumbing ------------------------------------------------

    def _push_event(self, time, kind, payload):
        heapq.heappush(self._events, (time, self._seq, kind, payload))
        self._seq += 1

    def _emit(self, time, kind, worker=-1, task=-1, data=-1, nbytes=0):
        if self.trace is not None:
            self.trace.append(TraceEvent(time, kind, worker, task, data, nbytes))

    # -- main loop -------------------------------------------------------

    def run(self) -> SimReport:
        n_tasks = len(self.graph)
        if n_tasks:
            initial = [t for t, d in enumerate(self.preds_left) if d == 0]
            self._activate(initial, 0.0, None)
            self._dispatch_round(0.0)
        while self._events:
            time, _, kind, payload = heapq.heappop(self._events)
            self.clock = time
            if kind == _TASK_END:
                self._task_end(payload, time)
            else:
                self._transfer_end(payload, time)
        if self._done != n_tasks:
            stuck = sorted(t for t in range(n_tasks) if t not in self.schedule)
            raise DeadlockError(stuck)
        return self._report()

    def _report(self):
        makespan = max((r.end for r in self.schedule.values()), default=0.0)
        total_flops = sum(t.flops for t in self.graph.tasks)
        gflops = total_flops / makespan / 1e9 if makespan > 0 else 0.0
        events = None
        if self.trace is not None:
            events = sorted(self.trace, key=lambda e: e.time)
        return SimReport(
            makespan=makespan,
            gflops=gflops,
            bytes_h2d=self.bytes_h2d,
            bytes_d2h=self.bytes_d2h,
            bytes_d2d=self.bytes_d2d,
            bytes_total=self.bytes_h2d + self.bytes_d2h + self.bytes_d2d,
            steals_ok=self.steals_ok,
            steals_failed=self.steals_failed,
            busy=tuple(self.busy),
            schedule=dict(self.schedule),
            events=events,
        )

    # -- scheduling glue ---------------------------------------------------

    def _idle_flags(self):
        return [
            self.running[w] is None and self.wait_task[w] is None and not self.queues[w]
            for w in range(self.platform.n_workers)
        ]

    def _activate(self, ready, now, completing):
        self.stamps.resync(now, self._idle_flags())
        batch = ActivationBatch(sorted(ready), now)
        assignment = self.scheduler.activate(batch, self.ctx, completing)
        for worker_id in sorted(assignment.order):
            self.queues[worker_id].extend(assignment.order[worker_id])

    def _dispatch_round(self, now):
        progress = True
        while progress:
            progress = False
            for w in range(self.platform.n_workers):
                if self.running[w] is None and self.wait_task[w] is None and self.queues[w]:
                    self._dispatch(w, self.queues[w].popleft(), now)
                    progress = True
            if self.scheduler.steals:
                for w in range(self.platform.n_workers):
                    if self.running[w] is None and self.wait_task[w] is None and not self.queues[w]:
                        if self._try_steal(w, now):
                            progress = True

    def _try_steal(self, thief, now):
        """Steal from the tail of a randomly chosen victim; each retry
        excludes already-probed victims, bounding failures per attempt."""
        candidates = [v for v in range(self.platform.n_workers) if v != thief]
        while candidates:
            victim = candidates.pop(self.rng.randrange(len(candidates)))
            if self.queues[victim]:
                task_id = self.queues[victim].pop()
                self.steals_ok += 1
                self._emit(now, "steal", worker=thief, task=task_id)
                self._dispatch(thief, task_id, now)
                return True
            self.steals_failed += 1
            self._emit(now, "steal_fail", worker=thief)
        return False

    # -- transfers ---------------------------------------------------------

    def _dispatch(self, worker_id, task_id, now):
        """A worker picks a task up: stage missing inputs, then execute."""
        task = self.graph.tasks[task_id]
        node = self.platform.workers[worker_id].memory
        pending = 0
        for data_id, mode in task.accesses:
            if not mode.reads:
                continue
            holders = self.residency[data_id]
            if node in holders:
                continue
            key = (data_id, node)
            job = self._inflight.get(key)
            if job is None:
                if not holders:
                    raise SimulationError(f"data block {data_id} lost all copies")
                src = HOST if HOST in holders else min(holders)
                nbytes = self.graph.sizes[data_id]
                staging = self._staging.get(data_id) if src != HOST else None
                if staging is not None:
                    # another transfer is already bringing this block into
                    # host memory; ride that leg and pay only the remainder
                    job = _Transfer(data_id, nbytes, self.platform.route(HOST, node), node, worker_id)
                    staging.host_deps.append(job)
                else:
                    job = _Transfer(data_id, nbytes, self.platform.route(src, node), node, worker_id)
                    if job.hops[0].dst == HOST:
                        self._staging[data_id] = job
                    self._issue_hop(job, now)
                self._inflight[key] = job
                self._account(job)
                self._emit(now, "transfer_job", worker=worker_id, task=task_id,
                           data=data_id, nbytes=nbytes)
            job.waiters.append(worker_id)
            pending += 1
        if pending:
            self.wait_task[worker_id] = task_id
            self.wait_pending[worker_id] = pending
        else:
            self._start_exec(worker_id, task_id, now)

    def _account(self, job):
        """Charge each hop of the route by its own direction: a device-to-
        device move staged through the host crosses PCIe twice and counts as
        one d2h plus one h2d; bytes_d2d only grows for peer single hops."""
        for hop in job.hops:
            if hop.src == HOST:
                self.bytes_h2d += job.nbytes
            elif hop.dst == HOST:
                self.bytes_d2h += job.nbytes
            else:
                self.bytes_d2d += job.nbytes

    def _switch_admit(self, switch, start):
        """Earliest time a transfer may enter the switch given its slots."""
        active = self._switch_active[switch]
        while True:
            while active and active[0] <= start:
                heapq.heappop(active)
            if len(active) < self._slots:
                return start
            start = active[0]

    def _issue_hop(self, job, now):
        hop = job.hops[job.hop_idx]
        start = now
        for endpoint in hop.endpoints:
            avail = self._link_avail.get(endpoint, 0.0)
            if avail > start:
                start = avail
        if self._slots is not None:
            for s in hop.switches:
                start = self._switch_admit(s, start)
        end = start + hop.latency + job.nbytes / hop.bandwidth
        for endpoint in hop.endpoints:
            self._link_avail[endpoint] = end
        if self._slots is not None:
            for s in hop.switches:
                heapq.heappush(self._switch_active[s], end)
        self._emit(start, "transfer_start", worker=job.requester, data=job.data, nbytes=job.nbytes)
        self._push_event(end, _TRANSFER_END, job)

    def _transfer_end(self, job, now):
        hop = job.hops[job.hop_idx]
        self._emit(now, "transfer_end", worker=job.requester, data=job.data, nbytes=job.nbytes)
        if hop.dst == HOST:
            self.residency.add(job.data, HOST)
            self._emit(now, "host_staged", worker=job.requester, data=job.data, nbytes=job.nbytes)
            if self._staging.get(job.data) is job:
                del self._staging[job.data]
            deps, job.host_deps = job.host_deps, []
            for dep in deps:
                if dep.hops:
                    self._issue_hop(dep, now)
                else:
                    self._finish_transfer(dep, now)  # wanted the host copy itself
            if job.hop_idx + 1 < len(job.hops):
                # staged through host memory on a device-to-device route
                job.hop_idx += 1
                self._issue_hop(job, now)
                return
        self._finish_transfer(job, now)

    def _finish_transfer(self, job, now):
        self.residency.add(job.data, job.dest)
        del self._inflight[(job.data, job.dest)]
        self._emit(now, "transfer_done", worker=job.requester, data=job.data, nbytes=job.nbytes)
        for worker_id in job.waiters:
            self.wait_pending[worker_id] -= 1
            if self.wait_pending[worker_id] == 0 and self.wait_task[worker_id] is not None:
                task_id = self.wait_task[worker_id]
                self.wait_task[worker_id] = None
                self._start_exec(worker_id, task_id, now)

    # -- execution -----------------------------------------------------

    def _start_exec(self, worker_id, task_id, now):
        task = self.graph.tasks[task_id]
        cls = self.platform.workers[worker_id].cls
        duration = self.model.true_exec(task.kind, cls) * self.noise.factor(task_id, worker_id)
        self.running[worker_id] = (task_id, now, duration)
        self.busy[worker_id] += duration
        self._emit(now, "task_start", worker=worker_id, task=task_id)
        self._push_event(now + duration, _TASK_END, worker_id)

    def _task_end(self, worker_id, now):
        task_id, started, duration = self.running[worker_id]
        self.running[worker_id] = None
        task = self.graph.tasks[task_id]
        self.schedule[task_id] = TaskRun(worker_id, started, now)
        self._emit(now, "task_end", worker=worker_id, task=task_id)
        node = self.platform.workers[worker_id].memory
        for data_id in task.write_ids():
            self.residency.set_only(data_id, node)
        self.model.record_sample(task.kind, self.platform.workers[worker_id].cls, duration)
        self.stamps.on_complete(worker_id, now)
        self._done += 1
        ready = []
        for succ in self.graph.successors(task_id):
            self.preds_left[succ] -= 1
            if self.preds_left[succ] < 0:
                raise SimulationError(f"negative predecessor count for task {succ}")
            if self.preds_left[succ] == 0:
                ready.append(succ)
        if ready:
            self._activate(ready, now, worker_id)
        self._dispatch_round(now)
        if self.running[worker_id] is None and self.wait_task[worker_id] is None and not self.queues[worker_id]:
            self._emit(now, "worker_idle", worker=worker_id)


def run(graph, platform, scheduler, model, seed=0, noise=0.0, trace=False) -> SimReport:
    """Simulate one execution; deterministic for fixed inputs and seed."""
    return Simulation(graph, platform, scheduler, model, seed=seed, noise=noise, trace=trace).run()


_FAMILY_FLOP_COEFF = {"cholesky": 1.0 / 3.0, "lu": 2.0 / 3.0, "qr": 4.0 / 3.0}


def flops_of(family: str, n: int) -> float:
    """Leading-order flop count of a dense n x n factorization, used to turn
    makespans into GFlop/s."""
    try:
        coeff = _FAMILY_FLOP_COEFF[family]
    except KeyError:
        raise SimulationError(f"unknown kernel family {family!r}") from None
    if n <= 0:
        raise SimulationError(f"matrix order must be positive, got {n}")
    return coeff * float(n) ** 3


def _best_times(graph, model):
    return [
        min(
            model.true_exec(t.kind, ResourceClass.CPU),
            model.true_exec(t.kind, ResourceClass.GPU),
        )
        for t in graph.tasks
    ]


def critical_path_bound(graph, model) -> float:
    """Schedule-independent lower bound: longest dependency chain of
    best-case execution times, ignoring transfers."""
    best = _best_times(graph, model)
    finish = [0.0] * len(graph)
    for t in graph.topological_order():
        start = max((finish[p] for p in graph.predecessors(t)), default=0.0)
        finish[t] = start + best[t]
    return max(finish, default=0.0)


def area_bound(graph, model, platform) -> float:
    """Schedule-independent lower bound: total best-case work spread over
    every worker."""
    return sum(_best_times(graph, model)) / platform.n_workers
