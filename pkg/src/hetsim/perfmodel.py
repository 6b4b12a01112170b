"""Execution and transfer time prediction.

Execution estimates are history-based: per (kernel kind, resource class) the
model keeps a seed estimate plus a running mean of observed durations, and
predictions switch to the sample mean once enough samples exist. Transfer
estimates delegate to the platform's asymptotic-bandwidth link model. The
module also holds the per-worker availability time-stamps that finish-time
based strategies consult.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .platform import HOST, ResourceClass


class PerfModelError(ValueError):
    """Missing timing information or invalid model input."""


@dataclass(frozen=True)
class TaskTiming:
    """Predicted execution times of one task on either resource class."""

    p_cpu: float
    p_gpu: float

    @property
    def speedup(self) -> float:
        """CPU time over GPU time; above one means GPU-friendly."""
        return self.p_cpu / self.p_gpu


class PerfModel:
    """Per (kind, class) execution estimates with online calibration."""

    def __init__(self, fallback=None, sample_threshold: int = 1):
        self.fallback = dict(fallback or {})  # (kind, ResourceClass) -> seconds
        self.samples = {}  # (kind, ResourceClass) -> [count, mean]
        self.sample_threshold = sample_threshold

    def copy(self) -> "PerfModel":
        dup = PerfModel(self.fallback, self.sample_threshold)
        dup.samples = {k: list(v) for k, v in self.samples.items()}
        return dup

    def set_fallback(self, kind, cls, seconds):
        if seconds <= 0:
            raise PerfModelError(f"timing must be positive, got {seconds}")
        self.fallback[(kind, cls)] = float(seconds)

    def predict_exec(self, kind, cls) -> float:
        """Sample mean once calibrated, seed estimate otherwise."""
        entry = self.samples.get((kind, cls))
        if entry is not None and entry[0] >= self.sample_threshold:
            return entry[1]
        try:
            return self.fallback[(kind, cls)]
        except KeyError:
            raise PerfModelError(f"uncalibrated kind {kind!r} on {cls.value}") from None

    def true_exec(self, kind, cls) -> float:
        """Ground-truth duration: the seed estimate, untouched by calibration."""
        try:
            return self.fallback[(kind, cls)]
        except KeyError:
            raise PerfModelError(f"no ground-truth timing for {kind!r} on {cls.value}") from None

    def record_sample(self, kind, cls, duration):
        if duration <= 0:
            raise PerfModelError(f"sample duration must be positive, got {duration}")
        entry = self.samples.setdefault((kind, cls), [0, 0.0])
        entry[0] += 1
        entry[1] += (duration - entry[1]) / entry[0]

    def task_timing(self, kind) -> TaskTiming:
        return TaskTiming(
            self.predict_exec(kind, ResourceClass.CPU),
            self.predict_exec(kind, ResourceClass.GPU),
        )

    def predict_transfer(self, platform, task, node, residency, sizes) -> float:
        """Estimated time to stage the task's inputs on a memory node.

        Sums the contention-free transfer time of every read or read-write
        access whose block has no valid copy on ``node``, fetching from the
        host when the host copy is valid and from the lowest-index holder
        otherwise. Pure writes are allocated at the destination for free.
        """
        total = 0.0
        for data_id, mode in task.accesses:
            if not mode.reads:
                continue
            holders = residency[data_id]
            if node in holders:
                continue
            if not holders:
                raise PerfModelError(f"data block {data_id} has no valid copy anywhere")
            src = HOST if HOST in holders else min(holders)
            total += platform.raw_transfer_time(sizes[data_id], src, node)
        return total

    def completion_time(self, stamps, platform, task, worker, residency, sizes, with_cp=True) -> float:
        """Predicted finish time of the task on a worker: the worker's
        availability, plus staging time when communication prediction is on,
        plus execution."""
        t = stamps.ready_at[worker.id]
        if with_cp:
            t += self.predict_transfer(platform, task, worker.memory, residency, sizes)
        return t + self.predict_exec(task.kind, worker.cls)


class LoadTimestamps:
    """Per-worker predicted availability and last observed completion.

    ``ready_at`` is the predicted date a worker finishes everything queued on
    it; it only moves backward through an explicit resync to the current
    simulated time. All mutation is serialized by the simulation loop.
    """

    def __init__(self, n_workers: int):
        self.ready_at = [0.0] * n_workers
        self.last_completion = [0.0] * n_workers

    def __len__(self):
        return len(self.ready_at)

    def resync(self, now: float, idle=None):
        """Raise stale predictions to ``now``; workers flagged idle are reset
        exactly to ``now`` (their backlog prediction is obsolete)."""
        for w in range(len(self.ready_at)):
            if idle is not None and idle[w]:
                self.ready_at[w] = now
            elif self.ready_at[w] < now:
                self.ready_at[w] = now

    def on_complete(self, worker: int, t: float):
        self.last_completion[worker] = t
        if self.ready_at[worker] < t:
            self.ready_at[worker] = t


class ExecutionNoise:
    """Deterministic multiplicative perturbation of realized durations.

    The factor for a given (task, worker) pair depends only on the seed, so
    reruns with the same seed reproduce identical simulations.
    """

    def __init__(self, seed: int, amplitude: float):
        if not 0.0 <= amplitude < 1.0:
            raise PerfModelError(f"noise amplitude must be in [0, 1), got {amplitude}")
        self.seed = seed
        self.amplitude = amplitude

    def factor(self, task_id: int, worker_id: int) -> float:
        if self.amplitude == 0.0:
            return 1.0
        mix = (self.seed * 1_000_003 + task_id) * 1_000_003 + worker_id
        return 1.0 + random.Random(mix).uniform(-self.amplitude, self.amplitude)


def apply_noise(seed: int, relative_amplitude: float) -> ExecutionNoise:
    """Build the noise generator used to perturb simulated durations."""
    return ExecutionNoise(seed, relative_amplitude)


def load_timing_table(source):
    """Parse timing lines ``kind,class,seconds`` into a fallback table.

    ``source`` is a file path or an iterable of lines; blank lines and lines
    starting with '#' are skipped. Seconds are parsed with plain float() so
    decimal text maps to the nearest binary double, bit-exactly reproducible.
    """
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = list(source)
    table = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise PerfModelError(f"timing line {lineno}: expected 'kind,class,seconds', got {line!r}")
        kind, cls_name, secs = parts
        try:
            cls = ResourceClass[cls_name.upper()]
        except KeyError:
            raise PerfModelError(f"timing line {lineno}: unknown class {cls_name!r}") from None
        value = float(secs)
        if value <= 0:
            raise PerfModelError(f"timing line {lineno}: seconds must be positive")
        table[(kind, cls)] = value
    return table
