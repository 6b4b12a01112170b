"""Scheduling strategies over per-worker ready queues.

All strategies share one entry point: ``activate`` receives the tasks that
just became ready and pushes them onto worker queues. Three policies are
provided: a greedy earliest-finish-time heuristic that handles tasks in
decreasing GPU-speedup order ("heft"), a dual-approximation scheme with an
optional data-affinity pre-phase ("dada"), and random work stealing ("ws") as
the model-oblivious baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .platform import HOST, ResourceClass


class SchedulerError(ValueError):
    """Invalid scheduler configuration or activation input."""


@dataclass
class ActivationBatch:
    """Tasks that became ready together, handed to one activate call."""

    ready: list[int]
    now: float


@dataclass
class SchedContext:
    """State the strategies consult while placing a batch."""

    graph: object
    platform: object
    model: object
    stamps: object
    residency: object  # data id -> set of memory nodes


@dataclass
class DadaConfig:
    """Knobs of the dual-approximation strategy.

    ``alpha`` sizes the affinity pre-phase (0 disables it, 1 lets it fill a
    whole guess worth of work per worker), ``epsilon`` is the binary-search
    precision in seconds, ``with_cp`` includes transfer estimates in both the
    placement decisions and the fit test, and ``rho`` is the approximation
    target of the balance phase.
    """

    alpha: float = 0.0
    epsilon: float = 1e-4
    with_cp: bool = False
    rho: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise SchedulerError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.epsilon <= 0.0:
            raise SchedulerError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class Assignment:
    """Where one batch went: task -> worker, per-worker queue order, and the
    predicted batch-local load added to each worker. ``sequence`` is the
    order tasks were processed where the strategy defines one."""

    placement: dict
    order: dict
    loads: dict
    sequence: list = field(default_factory=list)


@dataclass
class SearchState:
    """Outcome of one dual-approximation binary search."""

    lower: float
    upper: float
    lam: float
    kept: Assignment | None
    accepted: list  # (guess, batch makespan) per accepted guess
    rejected: list
    iterations: int


class _TaskView:
    """Per-task numbers precomputed once per activation."""

    __slots__ = ("task", "id", "p_cpu", "p_gpu", "speedup", "tr", "aff")

    def __init__(self, task, p_cpu, p_gpu):
        self.task = task
        self.id = task.id
        self.p_cpu = p_cpu
        self.p_gpu = p_gpu
        self.speedup = p_cpu / p_gpu
        self.tr = None  # per-node transfer estimate, when CP is on
        self.aff = None  # per-node affinity score in bytes


def _make_views(batch, ctx, with_tr, with_aff):
    graph, platform, model = ctx.graph, ctx.platform, ctx.model
    residency, sizes = ctx.residency, graph.sizes
    n_nodes = platform.k + 1
    views = []
    for tid in batch.ready:
        task = graph.tasks[tid]
        v = _TaskView(
            task,
            model.predict_exec(task.kind, ResourceClass.CPU),
            model.predict_exec(task.kind, ResourceClass.GPU),
        )
        if with_tr:
            v.tr = [
                model.predict_transfer(platform, task, node, residency, sizes)
                for node in range(n_nodes)
            ]
        if with_aff:
            aff = [0.0] * n_nodes
            for d, m in task.accesses:
                if m.writes:
                    for node in residency[d]:
                        if node != HOST:
                            aff[node] += sizes[d]
            v.aff = aff
        views.append(v)
    return views


def _exec(view, worker):
    return view.p_cpu if worker.cls is ResourceClass.CPU else view.p_gpu


def _charge(view, worker):
    """Predicted load one placement adds: execution plus staging if CP."""
    p = view.p_cpu if worker.cls is ResourceClass.CPU else view.p_gpu
    if view.tr is not None:
        p += view.tr[worker.memory]
    return p


class _Overlay:
    """Copy-on-write residency view for within-batch lookahead: placing a
    task pretends its inputs were staged and its outputs written there."""

    __slots__ = ("base", "delta")

    def __init__(self, base):
        self.base = base
        self.delta = {}

    def __getitem__(self, d):
        got = self.delta.get(d)
        return self.base[d] if got is None else got

    def apply(self, task, node):
        for d, m in task.accesses:
            if m.writes:
                self.delta[d] = {node}
            else:
                s = self[d]
                if node not in s:
                    self.delta[d] = s | {node}


def affinity_score(task, worker, residency, sizes):
    """Bytes of the task's written or modified blocks already valid on the
    worker's memory node.

    Only device-resident copies score: host copies are ambient (every block
    starts there and fetching to a CPU from host memory costs nothing), so
    with fresh residency all scores are zero. CPU workers all share the host
    node and therefore score zero.
    """
    node = worker.memory
    if node == HOST:
        return 0
    return sum(sizes[d] for d, m in task.accesses if m.writes and node in residency[d])


def _affinity_candidates(views, workers):
    """(score, task, best worker) triples, best worker per task, sorted by
    decreasing score then ascending task id then ascending worker id."""
    cands = []
    for v in views:
        best_s = 0.0
        best_w = None
        for w in workers:  # ascending id, so score ties keep the lowest id
            s = v.aff[w.memory]
            if s > best_s:
                best_s, best_w = s, w
        if best_w is not None:
            cands.append((-best_s, v.id, best_w.id, v, best_w))
    cands.sort(key=lambda c: (c[0], c[1], c[2]))
    return cands


def affinity_phase(candidates, lam, alpha, loads, added, order, placement):
    """Greedy affinity placement bounded by ``alpha * lam`` per worker.

    Walks (task, best-scoring worker) pairs in decreasing score order and
    places a task if its worker's phase load has not yet overreached the
    budget: the work this phase already put there must be <= alpha * lam,
    the placement itself may exceed it. Pairs whose execution time alone
    exceeds the guess are skipped: a task that cannot run within ``lam`` on a
    worker cannot be part of a schedule of length ``lam``, so pinning it
    there would contradict the guess being probed. With alpha == 0 nothing
    is placed. Returns the set of placed task ids.
    """
    placed = set()
    if alpha <= 0.0 or not candidates:
        return placed
    budget = alpha * lam
    for _negs, tid, _wid, view, worker in candidates:
        if added[worker.id] <= budget and _exec(view, worker) <= lam:
            charge = _charge(view, worker)
            loads[worker.id] += charge
            added[worker.id] += charge
            order.setdefault(worker.id, []).append(tid)
            placement[tid] = worker.id
            placed.add(tid)
    return placed


def dual_assign(views, cpu_workers, gpu_workers, lam, loads, added, order, placement):
    """One probe of the two-sided assignment at makespan guess ``lam``.

    Rejects (returns False) if some task exceeds the guess on both classes,
    or a side it is forced to does not exist. Tasks too big for a CPU are
    forced to GPUs and vice versa; the flexible rest is handed to the GPUs in
    decreasing speedup order, each task going to the GPU with the earliest
    predicted finish among those whose load has not yet overreached the
    guess; once every GPU has overreached, the rest goes to the CPUs, again
    under earliest predicted finish (ties everywhere to the lowest worker
    id). With communication prediction the finish estimates include staging
    costs, which is what steers work towards the data. ``loads`` holds each
    worker's predicted occupation relative to now (pre-existing backlog plus
    this batch, affinity placements included) and is mutated in place
    together with the batch-only ``added``.
    """
    forced_gpu, forced_cpu, flexible = [], [], []
    for v in views:
        big_cpu = v.p_cpu > lam
        big_gpu = v.p_gpu > lam
        if big_cpu and big_gpu:
            return False
        if big_cpu:
            forced_gpu.append(v)
        elif big_gpu:
            forced_cpu.append(v)
        else:
            flexible.append(v)
    if forced_gpu and not gpu_workers:
        return False
    if forced_cpu and not cpu_workers:
        return False

    def place_gpu(v, must):
        best = None
        best_key = None
        for w in gpu_workers:
            if loads[w.id] > lam:
                continue
            key = loads[w.id] + _charge(v, w)
            if best is None or key < best_key:
                best, best_key = w, key
        if best is None:
            if not must:
                return False
            best = min(gpu_workers, key=lambda w: (loads[w.id], w.id))
        charge = _charge(v, best)
        loads[best.id] += charge
        added[best.id] += charge
        order.setdefault(best.id, []).append(v.id)
        placement[v.id] = best.id
        return True

    for v in forced_gpu:
        place_gpu(v, must=True)
    gpu_only = not cpu_workers
    spill = []
    for v in flexible:
        if not place_gpu(v, must=gpu_only):
            spill.append(v)
    cpu_stream = forced_cpu + spill
    cpu_stream.sort(key=lambda v: (-v.speedup, v.id))
    for v in cpu_stream:
        best = min(cpu_workers, key=lambda c: (loads[c.id], c.id))
        charge = _charge(v, best)
        loads[best.id] += charge
        added[best.id] += charge
        order.setdefault(best.id, []).append(v.id)
        placement[v.id] = best.id
    return True


def dual_search(batch, ctx, cfg: DadaConfig) -> SearchState:
    """Binary search on the batch makespan guess.

    Starting from [0, sum of max(p_cpu, p_gpu)], each probe runs the affinity
    phase then the two-sided assignment over per-worker loads seeded with the
    existing backlog (predicted availability minus now), and accepts the
    guess if every worker receiving batch work completes within
    (rho + alpha) times the guess. The interval halves either way until it
    is narrower than epsilon. The kept assignment is the one of the smallest
    accepted guess; it is None when every probe was rejected.
    """
    if not batch.ready:
        raise SchedulerError("empty activation batch")
    platform = ctx.platform
    views = _make_views(batch, ctx, with_tr=cfg.with_cp, with_aff=cfg.alpha > 0)
    views.sort(key=lambda v: (-v.speedup, v.id))
    cpu_workers = platform.cpu_workers
    gpu_workers = platform.gpu_workers
    now = batch.now
    backlog = [max(r - now, 0.0) for r in ctx.stamps.ready_at]
    cands = _affinity_candidates(views, platform.workers) if cfg.alpha > 0 else []
    n = platform.n_workers
    threshold = cfg.rho + cfg.alpha
    upper = sum(max(v.p_cpu, v.p_gpu) for v in views)
    lower = 0.0
    lam = upper
    kept = None
    accepted = []
    rejected = []
    iterations = 0
    while upper - lower > cfg.epsilon:
        lam = (lower + upper) / 2.0
        loads = list(backlog)
        added = [0.0] * n
        order = {}
        placement = {}
        placed = affinity_phase(cands, lam, cfg.alpha, loads, added, order, placement)
        rest = [v for v in views if v.id not in placed] if placed else views
        fits = dual_assign(rest, cpu_workers, gpu_workers, lam, loads, added, order, placement)
        iterations += 1
        if fits:
            makespan = max(loads[w] for w in range(n) if added[w] > 0.0)
            if makespan <= threshold * lam:
                upper = lam
                kept = Assignment(placement, order, {w: a for w, a in enumerate(added) if a > 0.0})
                accepted.append((lam, makespan))
                continue
        lower = lam
        rejected.append(lam)
    return SearchState(lower, upper, lam, kept, accepted, rejected, iterations)


def dada_activate(batch, ctx, cfg: DadaConfig) -> Assignment:
    """Activate one batch with the dual-approximation strategy.

    Pushes the last fitting schedule found by the search and advances the
    worker time-stamps by the predicted batch loads. When no guess was ever
    accepted (degenerate inputs, e.g. a task forced to a class the platform
    lacks) the batch falls back to the greedy finish-time strategy so the
    simulation stays total.
    """
    state = dual_search(batch, ctx, cfg)
    if state.kept is None:
        return heft_activate(batch, ctx)
    assignment = state.kept
    stamps = ctx.stamps
    for worker_id, load in assignment.loads.items():
        stamps.ready_at[worker_id] += load
    return assignment


def heft_activate(batch, ctx) -> Assignment:
    """Greedy finish-time activation.

    Ready tasks are handled in decreasing GPU-speedup order (ties by
    ascending task id); each goes to the worker with the smallest predicted
    completion time, always counting transfer estimates for inputs not yet
    valid on the worker's memory node. Time-stamps and a scratch residency
    overlay advance after every placement so later decisions see earlier
    ones.
    """
    if not batch.ready:
        raise SchedulerError("empty activation batch")
    graph, platform, model, stamps = ctx.graph, ctx.platform, ctx.model, ctx.stamps
    sizes = graph.sizes
    views = _make_views(batch, ctx, with_tr=False, with_aff=False)
    views.sort(key=lambda v: (-v.speedup, v.id))
    overlay = _Overlay(ctx.residency)
    placement = {}
    order = {}
    loads = {}
    sequence = []
    ready_at = stamps.ready_at
    for v in views:
        task = v.task
        best_w = None
        best_eft = math.inf
        for w in platform.workers:  # ascending id, so EFT ties keep the lowest
            eft = (
                ready_at[w.id]
                + model.predict_transfer(platform, task, w.memory, overlay, sizes)
                + (v.p_cpu if w.cls is ResourceClass.CPU else v.p_gpu)
            )
            if eft < best_eft:
                best_eft, best_w = eft, w
        loads[best_w.id] = loads.get(best_w.id, 0.0) + (best_eft - ready_at[best_w.id])
        ready_at[best_w.id] = best_eft
        placement[v.id] = best_w.id
        order.setdefault(best_w.id, []).append(v.id)
        sequence.append(v.id)
        overlay.apply(task, best_w.memory)
    return Assignment(placement, order, loads, sequence)


class HeftScheduler:
    name = "heft"
    steals = False

    def activate(self, batch, ctx, completing=None) -> Assignment:
        return heft_activate(batch, ctx)


class DadaScheduler:
    name = "dada"
    steals = False

    def __init__(self, cfg: DadaConfig | None = None, **kwargs):
        self.cfg = cfg if cfg is not None else DadaConfig(**kwargs)

    def activate(self, batch, ctx, completing=None) -> Assignment:
        return dada_activate(batch, ctx, self.cfg)


class WorkStealingScheduler:
    """Baseline: ready tasks go to the completing worker's own queue and
    idle workers steal from the tail of randomly chosen victims. The victim
    RNG is owned by the simulation, keeping runs seed-deterministic."""

    name = "ws"
    steals = True

    def activate(self, batch, ctx, completing=None) -> Assignment:
        if not batch.ready:
            raise SchedulerError("empty activation batch")
        target = 0 if completing is None else completing
        tasks = sorted(batch.ready)
        return Assignment(
            {t: target for t in tasks},
            {target: list(tasks)},
            {target: 0.0},
            list(tasks),
        )


def make_scheduler(name: str, alpha: float = 0.0, epsilon: float = 1e-4, cp: bool = False):
    """Build a strategy by its wire name: "heft", "dada" or "ws"."""
    if name == "heft":
        return HeftScheduler()
    if name == "dada":
        return DadaScheduler(DadaConfig(alpha=alpha, epsilon=epsilon, with_cp=cp))
    if name == "ws":
        return WorkStealingScheduler()
    raise SchedulerError(f"unknown scheduler {name!r}")
