"""Data-flow task graphs.

Tasks declare typed accesses (read / write / read-write) to data blocks, in
the order a sequential program would issue them. Dependency edges are derived
from that access history when the graph is sealed, so callers never wire
edges by hand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum


class GraphError(ValueError):
    """Invalid graph construction or query."""


class AccessMode(Enum):
    """How a task touches a data block."""

    READ = "R"
    WRITE = "W"
    READWRITE = "RW"

    @property
    def reads(self) -> bool:
        return self is not AccessMode.WRITE

    @property
    def writes(self) -> bool:
        return self is not AccessMode.READ


@dataclass(frozen=True)
class DataBlock:
    id: int
    size_bytes: int


@dataclass(frozen=True)
class Task:
    id: int
    kind: str
    accesses: tuple[tuple[int, AccessMode], ...]
    flops: float = 0.0

    def read_ids(self):
        """Data ids this task fetches (READ and READWRITE accesses)."""
        return tuple(d for d, m in self.accesses if m.reads)

    def write_ids(self):
        """Data ids this task updates (WRITE and READWRITE accesses)."""
        return tuple(d for d, m in self.accesses if m.writes)


def derive_edges(tasks) -> set[tuple[int, int]]:
    """Derive dependency edges from accesses under sequential consistency.

    Scanning tasks in creation order, per data block: a read depends on the
    last prior writer; a write depends on the last prior writer and on every
    read issued since it (read-set flush). Reads do not order among
    themselves, and a read-write counts as a write. Every edge goes from a
    lower to a higher task id, so the result is acyclic by construction.
    """
    last_writer: dict[int, int] = {}
    readers_since: dict[int, list[int]] = {}
    edges: set[tuple[int, int]] = set()
    for task in tasks:
        for data_id, mode in task.accesses:
            writer = last_writer.get(data_id)
            if mode.writes:
                if writer is not None:
                    edges.add((writer, task.id))
                for reader in readers_since.get(data_id, ()):
                    edges.add((reader, task.id))
                last_writer[data_id] = task.id
                readers_since[data_id] = []
            else:
                if writer is not None:
                    edges.add((writer, task.id))
                readers_since.setdefault(data_id, []).append(task.id)
    return edges


class GraphBuilder:
    """Accumulates data blocks and tasks in program order; ``seal`` freezes
    the graph and derives its edges."""

    def __init__(self):
        self._data: list[DataBlock] = []
        self._tasks: list[Task] = []
        self._sealed = False

    def add_data(self, size_bytes: int) -> int:
        self._check_open()
        if size_bytes <= 0:
            raise GraphError(f"data block size must be positive, got {size_bytes}")
        block = DataBlock(len(self._data), int(size_bytes))
        self._data.append(block)
        return block.id

    def add_task(self, kind: str, accesses, flops: float = 0.0) -> int:
        """Append a task; returns its dense id (creation order)."""
        self._check_open()
        if flops < 0:
            raise GraphError(f"flops must be non-negative, got {flops}")
        seen = set()
        norm = []
        for data_id, mode in accesses:
            if not 0 <= data_id < len(self._data):
                raise GraphError(f"access references undeclared data id {data_id}")
            if data_id in seen:
                raise GraphError(f"data id {data_id} appears twice in one access list")
            seen.add(data_id)
            norm.append((int(data_id), AccessMode(mode)))
        task = Task(len(self._tasks), str(kind), tuple(norm), float(flops))
        self._tasks.append(task)
        return task.id

    def seal(self) -> TaskGraph:
        self._check_open()
        self._sealed = True
        edges = derive_edges(self._tasks)
        return TaskGraph(tuple(self._tasks), tuple(self._data), edges)

    def _check_open(self):
        if self._sealed:
            raise GraphError("graph already sealed")


class TaskGraph:
    """Immutable DAG; safe to share read-only once built."""

    def __init__(self, tasks, data, edges):
        self.tasks = tuple(tasks)
        self.data = tuple(data)
        self.sizes = tuple(b.size_bytes for b in self.data)
        succs = [[] for _ in self.tasks]
        preds = [[] for _ in self.tasks]
        for u, v in sorted(edges):
            succs[u].append(v)
            preds[v].append(u)
        self._succs = tuple(tuple(s) for s in succs)
        self._preds = tuple(tuple(sorted(p)) for p in preds)
        self.n_edges = len(edges)

    def __len__(self):
        return len(self.tasks)

    def _check_task(self, task_id):
        if not 0 <= task_id < len(self.tasks):
            raise GraphError(f"unknown task id {task_id}")

    def successors(self, task_id) -> tuple[int, ...]:
        """Successor ids in ascending order."""
        self._check_task(task_id)
        return self._succs[task_id]

    def predecessors(self, task_id) -> tuple[int, ...]:
        self._check_task(task_id)
        return self._preds[task_id]

    def in_degree(self, task_id) -> int:
        self._check_task(task_id)
        return len(self._preds[task_id])

    def in_degrees(self) -> list[int]:
        return [len(p) for p in self._preds]

    def edges(self):
        for u in range(len(self.tasks)):
            for v in self._succs[u]:
                yield (u, v)

    def topological_order(self) -> list[int]:
        """Kahn's algorithm; raises if a cycle exists (cannot happen for
        graphs produced by GraphBuilder, kept as a structural check)."""
        remaining = self.in_degrees()
        frontier = [t for t, d in enumerate(remaining) if d == 0]
        out = []
        while frontier:
            nxt = []
            for u in sorted(frontier):
                out.append(u)
                for v in self._succs[u]:
                    remaining[v] -= 1
                    if remaining[v] == 0:
                        nxt.append(v)
            frontier = nxt
        if len(out) != len(self.tasks):
            raise GraphError("graph contains a cycle")
        return out

    def export_dot(self) -> str:
        """DOT text with node labels ``kind#id``; byte-deterministic."""
        lines = ["digraph G {"]
        for t in self.tasks:
            lines.append(f'  {t.id} [label="{t.kind}#{t.id}"];')
        for u in range(len(self.tasks)):
            for v in self._succs[u]:
                lines.append(f"  {u} -> {v};")
        lines.append("}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        """Debug dump of tasks, accesses, block sizes and derived edges."""
        doc = {
            "tasks": [
                {
                    "id": t.id,
                    "kind": t.kind,
                    "flops": t.flops,
                    "accesses": [{"data": d, "mode": m.value} for d, m in t.accesses],
                }
                for t in self.tasks
            ],
            "data": [{"id": b.id, "size_bytes": b.size_bytes} for b in self.data],
            "edges": [[u, v] for u, v in self.edges()],
        }
        return json.dumps(doc, indent=2, sort_keys=True)
