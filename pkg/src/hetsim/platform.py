"""Machine model: CPU and GPU workers, one memory node per GPU plus the
host, and host<->device links grouped under PCIe-style switches that cap the
aggregate bandwidth of the GPUs sharing them."""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass
from enum import Enum


class PlatformError(ValueError):
    """Invalid platform description or node query."""


class ResourceClass(Enum):
    CPU = "CPU"
    GPU = "GPU"


HOST = 0  # memory node id of shared host RAM


@dataclass(frozen=True)
class Worker:
    id: int
    cls: ResourceClass
    memory: int


@dataclass(frozen=True)
class Link:
    src: int
    dst: int
    bandwidth: float
    latency: float
    switch: int


# One leg of a route. `endpoints` are the device links it occupies (both
# directions of a device link share one DMA engine), `switches` the switch
# slots it needs.
Hop = namedtuple("Hop", "src dst bandwidth latency switches endpoints")


@dataclass(frozen=True, eq=False)
class Platform:
    m: int  # CPU cores, including one per GPU spent driving it
    k: int
    n_switches: int
    workers: tuple[Worker, ...]
    links: dict
    link_bandwidth: float
    link_latency: float
    switch_cap: float  # math.inf disables the cap
    p2p: bool = False

    @property
    def n_workers(self) -> int:
        return len(self.workers)

    @property
    def n_cpu_workers(self) -> int:
        return self.m - self.k

    @property
    def cpu_workers(self):
        return tuple(w for w in self.workers if w.cls is ResourceClass.CPU)

    @property
    def gpu_workers(self):
        return tuple(w for w in self.workers if w.cls is ResourceClass.GPU)

    @property
    def switch_slots(self):
        """Concurrent transfers a switch admits; None means unlimited."""
        if math.isinf(self.switch_cap):
            return None
        return max(1, int(self.switch_cap / self.link_bandwidth + 1e-9))

    def _check_node(self, node):
        if not 0 <= node <= self.k:
            raise PlatformError(f"unknown memory node {node}")

    def switch_of(self, node: int) -> int:
        """Switch hosting a GPU memory node (round-robin assignment)."""
        self._check_node(node)
        if node == HOST:
            raise PlatformError("host is on no switch")
        return (node - 1) % self.n_switches

    def route(self, src: int, dst: int) -> tuple[Hop, ...]:
        """Hops from src to dst; device-to-device goes via the host unless
        peer transfers are enabled."""
        self._check_node(src)
        self._check_node(dst)
        if src == dst:
            return ()
        if src == HOST or dst == HOST:
            link = self.links[(src, dst)]
            dev = dst if src == HOST else src
            return (Hop(src, dst, link.bandwidth, link.latency, (link.switch,), (dev,)),)
        if self.p2p:
            up = self.links[(src, HOST)]
            down = self.links[(HOST, dst)]
            return (
                Hop(
                    src,
                    dst,
                    min(up.bandwidth, down.bandwidth),
                    up.latency + down.latency,
                    tuple(sorted({up.switch, down.switch})),
                    (src, dst),
                ),
            )
        return self.route(src, HOST) + self.route(HOST, dst)

    def raw_transfer_time(self, nbytes, src: int, dst: int) -> float:
        """Contention-free time to move nbytes from src to dst."""
        if nbytes < 0:
            raise PlatformError(f"negative transfer size {nbytes}")
        return sum(h.latency + nbytes / h.bandwidth for h in self.route(src, dst))


def build_platform(
    m: int,
    k: int,
    n_switches: int = 4,
    link_bandwidth: float = 6e9,
    link_latency: float = 1e-5,
    switch_cap: float | None = None,
    p2p: bool = False,
) -> Platform:
    """Build a machine with ``m - k`` CPU compute workers and ``k`` GPU
    workers (each running GPU monopolizes one CPU core to drive it).

    GPUs are assigned round-robin to switches. ``switch_cap`` defaults to one
    link's bandwidth, the regime where two GPUs sharing a switch contend;
    pass ``math.inf`` to disable switch contention.
    """
    if m < k:
        raise PlatformError("not enough CPU cores to host GPU workers (m < k)")
    if m < 1:
        raise PlatformError("platform needs at least one CPU core")
    if k > 0 and n_switches < 1:
        raise PlatformError("need at least one switch for GPUs")
    if link_bandwidth <= 0:
        raise PlatformError("link bandwidth must be positive")
    if link_latency < 0:
        raise PlatformError("link latency must be non-negative")
    cap = link_bandwidth if switch_cap is None else float(switch_cap)
    if cap <= 0:
        raise PlatformError("switch cap must be positive")

    workers = [Worker(i, ResourceClass.CPU, HOST) for i in range(m - k)]
    for g in range(k):
        workers.append(Worker(m - k + g, ResourceClass.GPU, g + 1))
    links = {}
    for g in range(k):
        node = g + 1
        sw = g % n_switches
        links[(HOST, node)] = Link(HOST, node, link_bandwidth, link_latency, sw)
        links[(node, HOST)] = Link(node, HOST, link_bandwidth, link_latency, sw)
    return Platform(
        m=m,
        k=k,
        n_switches=max(1, n_switches),
        workers=tuple(workers),
        links=links,
        link_bandwidth=link_bandwidth,
        link_latency=link_latency,
        switch_cap=cap,
        p2p=p2p,
    )
