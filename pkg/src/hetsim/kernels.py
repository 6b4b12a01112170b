"""Benchmark task-graph generators.

Tile algorithms for Cholesky, LU with incremental pivoting, and QR over an
nt x nt grid of b x b double-precision tiles, plus a random layered DAG for
property tests. Shipped timings are synthetic: they give update kernels a
large GPU speedup and panel kernels none, which is the heterogeneity the
schedulers exploit; override them with a timing table for anything
quantitative.
"""

from __future__ import annotations

import random

from .graph import AccessMode, GraphBuilder, GraphError, TaskGraph
from .perfmodel import PerfModel
from .platform import ResourceClass

R = AccessMode.READ
W = AccessMode.WRITE
RW = AccessMode.READWRITE

# Cholesky
POTRF = "POTRF"
TRSM = "TRSM"
SYRK = "SYRK"
GEMM = "GEMM"
# LU with incremental pivoting
GETRF_INC = "GETRF_INC"
GESSM = "GESSM"
TSTRF = "TSTRF"
SSSSM = "SSSSM"
# QR
GEQRT = "GEQRT"
UNMQR = "UNMQR"
TSQRT = "TSQRT"
TSMQR = "TSMQR"

CHOLESKY_KINDS = (POTRF, TRSM, SYRK, GEMM)
LU_KINDS = (GETRF_INC, GESSM, TSTRF, SSSSM)
QR_KINDS = (GEQRT, UNMQR, TSQRT, TSMQR)
ALL_KINDS = CHOLESKY_KINDS + LU_KINDS + QR_KINDS

# Leading-order flop count of one tile kernel, as a multiple of b^3. The
# coefficients are chosen so the per-family sums telescope to the classical
# totals (n^3/3, 2n^3/3, 4n^3/3).
_FLOP_COEFF = {
    POTRF: 1.0 / 3.0,
    TRSM: 1.0,
    SYRK: 1.0,
    GEMM: 2.0,
    GETRF_INC: 2.0 / 3.0,
    GESSM: 1.0,
    TSTRF: 1.0,
    SSSSM: 2.0,
    GEQRT: 4.0 / 3.0,
    UNMQR: 2.0,
    TSQRT: 2.0,
    TSMQR: 4.0,
}

# Panel kernels: little parallelism, no GPU advantage.
PANEL_KINDS = frozenset({POTRF, GETRF_INC, GEQRT, TSQRT, TSTRF})

_CPU_RATE = 10e9  # flop/s, any kind
_GPU_RATE = {
    GEMM: 100e9,
    SSSSM: 100e9,
    TSMQR: 100e9,
    SYRK: 80e9,
    TRSM: 50e9,
    GESSM: 50e9,
    UNMQR: 50e9,
    POTRF: 8e9,
    GETRF_INC: 8e9,
    GEQRT: 8e9,
    TSQRT: 8e9,
    TSTRF: 8e9,
}

ELEMENT_SIZE = 8  # double precision


def kind_flops(kind: str, b: int) -> float:
    """Flop count of one tile kernel of order b."""
    try:
        return _FLOP_COEFF[kind] * float(b) ** 3
    except KeyError:
        raise GraphError(f"unknown kernel kind {kind!r}") from None


def default_timings(kind: str, cls: ResourceClass, b: int = 512, ib: int = 128) -> float:
    """Synthetic per-kernel execution time for the given tile geometry."""
    t = kind_flops(kind, b) / (_CPU_RATE if cls is ResourceClass.CPU else _GPU_RATE[kind])
    if kind in PANEL_KINDS:
        t *= 1.0 + ib / b  # panel kernels pay extra for larger inner blocks
    return t


def default_timing_table(b: int = 512, ib: int = 128) -> dict:
    table = {}
    for kind in ALL_KINDS:
        for cls in ResourceClass:
            table[(kind, cls)] = default_timings(kind, cls, b, ib)
    return table


def _tile_bytes(b):
    return b * b * ELEMENT_SIZE


def gen_cholesky(nt: int, b: int = 512) -> TaskGraph:
    """Right-looking tile Cholesky on the lower-triangular tiles.

    Per step k: factor the diagonal tile, solve the tiles below it, then
    update the trailing matrix with symmetric rank-k updates on the diagonal
    and general updates elsewhere.
    """
    if nt < 1:
        raise GraphError("nt must be at least 1")
    g = GraphBuilder()
    tile = {}
    for i in range(nt):
        for j in range(i + 1):
            tile[(i, j)] = g.add_data(_tile_bytes(b))
    for k in range(nt):
        g.add_task(POTRF, [(tile[(k, k)], RW)], flops=kind_flops(POTRF, b))
        for i in range(k + 1, nt):
            g.add_task(TRSM, [(tile[(k, k)], R), (tile[(i, k)], RW)], flops=kind_flops(TRSM, b))
        for i in range(k + 1, nt):
            g.add_task(SYRK, [(tile[(i, k)], R), (tile[(i, i)], RW)], flops=kind_flops(SYRK, b))
            for j in range(k + 1, i):
                g.add_task(
                    GEMM,
                    [(tile[(i, k)], R), (tile[(j, k)], R), (tile[(i, j)], RW)],
                    flops=kind_flops(GEMM, b),
                )
    return g.seal()


def gen_lu_incpiv(nt: int, b: int = 512, ib: int = 128) -> TaskGraph:
    """Tile LU with incremental pivoting on the full nt x nt grid.

    The panel factorizations down column k chain sequentially because each
    TSTRF updates the diagonal tile it shares with its predecessors.
    """
    if nt < 1:
        raise GraphError("nt must be at least 1")
    if not 1 <= ib <= b:
        raise GraphError("need 1 <= ib <= b")
    g = GraphBuilder()
    tile = {}
    for i in range(nt):
        for j in range(nt):
            tile[(i, j)] = g.add_data(_tile_bytes(b))
    for k in range(nt):
        g.add_task(GETRF_INC, [(tile[(k, k)], RW)], flops=kind_flops(GETRF_INC, b))
        for j in range(k + 1, nt):
            g.add_task(GESSM, [(tile[(k, k)], R), (tile[(k, j)], RW)], flops=kind_flops(GESSM, b))
        for i in range(k + 1, nt):
            g.add_task(TSTRF, [(tile[(k, k)], RW), (tile[(i, k)], RW)], flops=kind_flops(TSTRF, b))
            for j in range(k + 1, nt):
                g.add_task(
                    SSSSM,
                    [(tile[(i, k)], R), (tile[(k, j)], RW), (tile[(i, j)], RW)],
                    flops=kind_flops(SSSSM, b),
                )
    return g.seal()


def gen_qr(nt: int, b: int = 512, ib: int = 128, materialize_t: bool = False) -> TaskGraph:
    """Tile QR; structurally isomorphic to the incremental-pivoting LU.

    By default the block reflectors travel inside their V tiles. With
    ``materialize_t`` the ib x b T factors become separate data blocks, which
    adds transfer volume but no tasks.
    """
    if nt < 1:
        raise GraphError("nt must be at least 1")
    if not 1 <= ib <= b:
        raise GraphError("need 1 <= ib <= b")
    g = GraphBuilder()
    tile = {}
    tfac = {}
    for i in range(nt):
        for j in range(nt):
            tile[(i, j)] = g.add_data(_tile_bytes(b))
    if materialize_t:
        for i in range(nt):
            for j in range(i + 1):
                tfac[(i, j)] = g.add_data(b * ib * ELEMENT_SIZE)
    for k in range(nt):
        acc = [(tile[(k, k)], RW)]
        if materialize_t:
            acc.append((tfac[(k, k)], W))
        g.add_task(GEQRT, acc, flops=kind_flops(GEQRT, b))
        for j in range(k + 1, nt):
            acc = [(tile[(k, k)], R), (tile[(k, j)], RW)]
            if materialize_t:
                acc.append((tfac[(k, k)], R))
            g.add_task(UNMQR, acc, flops=kind_flops(UNMQR, b))
        for i in range(k + 1, nt):
            acc = [(tile[(k, k)], RW), (tile[(i, k)], RW)]
            if materialize_t:
                acc.append((tfac[(i, k)], W))
            g.add_task(TSQRT, acc, flops=kind_flops(TSQRT, b))
            for j in range(k + 1, nt):
                acc = [(tile[(i, k)], R), (tile[(k, j)], RW), (tile[(i, j)], RW)]
                if materialize_t:
                    acc.append((tfac[(i, k)], R))
                g.add_task(TSMQR, acc, flops=kind_flops(TSMQR, b))
    return g.seal()


GENERATORS = {
    "cholesky": gen_cholesky,
    "lu": gen_lu_incpiv,
    "qr": gen_qr,
}


def gen_family(family: str, nt: int, b: int = 512, ib: int = 128) -> TaskGraph:
    """Generate a benchmark graph by family name."""
    if family == "cholesky":
        return gen_cholesky(nt, b)
    if family == "lu":
        return gen_lu_incpiv(nt, b, ib)
    if family == "qr":
        return gen_qr(nt, b, ib)
    raise GraphError(f"unknown kernel family {family!r}")


def gen_random_layered(
    n_tasks: int,
    width: int,
    seed: int,
    p_cpu_range=(0.2, 2.0),
    p_gpu_range=(0.02, 1.0),
    size_range=(1 << 20, 1 << 22),
):
    """Random layered DAG plus a matching fallback timing table.

    Tasks fill layers of ``width``; every task reads a non-empty random
    subset of the previous layer's outputs and writes one output block, so
    edges only join adjacent layers. ``width >= n_tasks`` gives independent
    tasks and ``width == 1`` a chain. Each task gets its own kernel kind with
    CPU/GPU timings drawn from the given ranges. Deterministic per seed.
    """
    if n_tasks < 1 or width < 1:
        raise GraphError("n_tasks and width must be at least 1")
    rng = random.Random(seed)
    g = GraphBuilder()
    model = PerfModel()
    outputs = []
    for t in range(n_tasks):
        layer = t // width
        accesses = []
        if layer > 0:
            prev = outputs[(layer - 1) * width : layer * width]
            n_preds = rng.randint(1, len(prev))
            for d in rng.sample(prev, n_preds):
                accesses.append((d, R))
        out = g.add_data(rng.randint(*size_range))
        outputs.append(out)
        accesses.append((out, W))
        kind = f"K{t}"
        g.add_task(kind, accesses)
        model.set_fallback(kind, ResourceClass.CPU, rng.uniform(*p_cpu_range))
        model.set_fallback(kind, ResourceClass.GPU, rng.uniform(*p_gpu_range))
    return g.seal(), model
