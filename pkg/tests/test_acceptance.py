"""Acceptance suite: one test per exit criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import math
import random
import statistics
import time

import pytest

from hetsim.graph import GraphBuilder
from hetsim.kernels import (
    default_timing_table,
    gen_cholesky,
    gen_family,
    gen_lu_incpiv,
    gen_qr,
    gen_random_layered,
)
from hetsim.perfmodel import LoadTimestamps, PerfModel
from hetsim.platform import HOST, ResourceClass, build_platform
from hetsim.sched import (
    ActivationBatch,
    DadaConfig,
    SchedContext,
    dada_activate,
    dual_search,
    make_scheduler,
)
from hetsim.sim import ResidencyMap, area_bound, critical_path_bound, run

CPU = ResourceClass.CPU
GPU = ResourceClass.GPU


def single_layer_ctx(rng, n_tasks, n_cpu, n_gpu):
    graph, model = gen_random_layered(n_tasks, width=n_tasks, seed=rng.randrange(1 << 30))
    platform = build_platform(n_cpu + n_gpu, n_gpu, max(1, n_gpu))
    ctx = SchedContext(graph, platform, model,
                       LoadTimestamps(platform.n_workers), ResidencyMap(len(graph.data)))
    return graph, platform, ctx


def test_acceptance_1_dual_approximation_guarantee():
    """Every accepted guess satisfies batch makespan <= (2 + alpha) * guess."""
    t0 = time.monotonic()
    rng = random.Random(1001)
    alphas = [0.0, 0.25, 0.5, 1.0]
    batches = 0
    accepts = 0
    while batches < 1000:
        n = rng.randint(1, 32)
        graph, platform, ctx = single_layer_ctx(rng, n, rng.randint(1, 4), rng.randint(1, 8))
        alpha = alphas[batches % len(alphas)]
        cfg = DadaConfig(alpha=alpha, with_cp=batches % 2 == 0)
        state = dual_search(ActivationBatch(list(range(n)), 0.0), ctx, cfg)
        for lam, makespan in state.accepted:
            assert makespan <= (cfg.rho + cfg.alpha) * lam  # no tolerance
            accepts += 1
        if state.kept is not None:
            kept_mk = max(state.kept.loads.values())
            assert kept_mk <= (cfg.rho + cfg.alpha) * state.accepted[-1][0]
        batches += 1
    elapsed = time.monotonic() - t0
    assert accepts > 1000  # the property was exercised, not vacuous
    assert elapsed < 10.0
    print(f"\nACCEPTANCE 1 (dual-approximation guarantee): PASS "
          f"({batches} batches, {accepts} accepted guesses, {elapsed:.1f}s)")


def brute_force_optimum(p_cpu, p_gpu):
    """Enumerate all 2^n assignments on 1 CPU + 1 GPU."""
    n = len(p_cpu)
    best = math.inf
    cpu_sum = [0.0] * (1 << n)
    for mask in range(1, 1 << n):
        low = (mask & -mask).bit_length() - 1
        cpu_sum[mask] = cpu_sum[mask & (mask - 1)] + p_cpu[low]
    total_gpu = sum(p_gpu)
    gpu_sum = [0.0] * (1 << n)
    for mask in range(1, 1 << n):
        low = (mask & -mask).bit_length() - 1
        gpu_sum[mask] = gpu_sum[mask & (mask - 1)] + p_gpu[low]
    full = (1 << n) - 1
    for mask in range(1 << n):
        best = min(best, max(cpu_sum[mask], gpu_sum[full ^ mask]))
    return best


def test_acceptance_2_oracle_optimality_ratio():
    """DADA(0) on independent tasks stays within twice the true optimum."""
    t0 = time.monotonic()
    rng = random.Random(2002)
    for trial in range(200):
        n = rng.randint(1, 12)
        graph, model = gen_random_layered(n, width=n, seed=rng.randrange(1 << 30))
        platform = build_platform(2, 1, 1)  # 1 CPU worker + 1 GPU worker
        sched = make_scheduler("dada", alpha=0.0, epsilon=1e-9)
        report = run(graph, platform, sched, model, seed=trial, noise=0.0)
        assert report.bytes_total == 0  # write-only outputs: zero transfers
        p_cpu = [model.true_exec(t.kind, CPU) for t in graph.tasks]
        p_gpu = [model.true_exec(t.kind, GPU) for t in graph.tasks]
        opt = brute_force_optimum(p_cpu, p_gpu)
        assert report.makespan <= 2.0 * opt + 1e-9, f"trial {trial}"
    elapsed = time.monotonic() - t0
    assert elapsed < 30.0
    print(f"\nACCEPTANCE 2 (oracle optimality ratio): PASS (200 instances, {elapsed:.1f}s)")


def test_acceptance_3_dada0_equals_plain_dual_approximation(monkeypatch):
    """With alpha = 0, or with all affinity scores zero (fresh residency),
    assignments match a build whose affinity phase is stubbed out."""
    import hetsim.sched as sched_mod

    rng = random.Random(3003)
    cases = []
    for trial in range(100):
        n = rng.randint(1, 24)
        seed = rng.randrange(1 << 30)
        n_cpu, n_gpu = rng.randint(1, 4), rng.randint(1, 6)
        # alpha = 0 on even trials; fresh residency (all scores zero) with
        # alpha > 0 on odd ones
        alpha = 0.0 if trial % 2 == 0 else 0.7
        cases.append((n, seed, n_cpu, n_gpu, alpha))

    def activate_all(stub):
        out = []
        for n, seed, n_cpu, n_gpu, alpha in cases:
            graph, model = gen_random_layered(n, width=n, seed=seed)
            platform = build_platform(n_cpu + n_gpu, n_gpu, max(1, n_gpu))
            ctx = SchedContext(graph, platform, model,
                               LoadTimestamps(platform.n_workers),
                               ResidencyMap(len(graph.data)))
            cfg = DadaConfig(alpha=alpha, with_cp=True)
            if stub:
                monkeypatch.setattr(sched_mod, "affinity_phase", lambda *a, **k: set())
            else:
                monkeypatch.undo()
            out.append(dada_activate(ActivationBatch(list(range(n)), 0.0), ctx, cfg))
        return out

    normal = activate_all(stub=False)
    stubbed = activate_all(stub=True)
    for a, b in zip(normal, stubbed):
        assert a == b
    print("\nACCEPTANCE 3 (DADA(0) == plain dual approximation): PASS (100 batches)")


def test_acceptance_4_alpha_tradeoff_trend():
    """Affinity plus communication prediction halves the transferred bytes of
    the data-blind search at 4+ GPUs while staying within 1.25x of the greedy
    finish-time makespan everywhere."""
    t0 = time.monotonic()
    graph = gen_cholesky(16, 512)  # n = 8192
    model = PerfModel(default_timing_table(512, 128))
    seeds = range(30)
    schedulers = {
        "dada09cp": make_scheduler("dada", alpha=0.9, cp=True),
        "dada0": make_scheduler("dada", alpha=0.0, cp=False),
        "heft": make_scheduler("heft"),
    }
    rows = []
    for k in (1, 2, 4, 6, 8):
        platform = build_platform(12, k, 4)
        means = {}
        for name, sched in schedulers.items():
            reports = [run(graph, platform, sched, model, seed=s, noise=0.0) for s in seeds]
            means[name] = (
                statistics.mean(r.makespan for r in reports),
                statistics.mean(r.bytes_total for r in reports),
            )
        mk_ratio = means["dada09cp"][0] / means["heft"][0]
        bytes_ratio = means["dada09cp"][1] / means["dada0"][1]
        rows.append((k, mk_ratio, bytes_ratio))
        assert mk_ratio <= 1.25, f"k={k}: makespan ratio {mk_ratio:.3f}"
        if k >= 4:
            assert bytes_ratio <= 0.5, f"k={k}: bytes ratio {bytes_ratio:.3f}"
    elapsed = time.monotonic() - t0
    assert elapsed < 120.0
    table = "  ".join(f"k={k}:mk={m:.2f},bytes={b:.2f}" for k, m, b in rows)
    print(f"\nACCEPTANCE 4 (alpha trade-off trend): PASS ({table}, {elapsed:.0f}s)")


def replay_and_check(graph, platform, report):
    """Independent replay of the event trace: transfer necessity, byte
    accounting and the single-writer residency rule."""
    res = {d: {HOST} for d in range(len(graph.data))}
    hop_bytes = 0
    for ev in report.events:
        if ev.kind == "transfer_job":
            node = platform.workers[ev.worker].memory
            task = graph.tasks[ev.task]
            assert node not in res[ev.data], "unneeded transfer issued"
            assert ev.data in task.read_ids(), "transfer for a block the task never reads"
            assert ev.nbytes == graph.sizes[ev.data]
        elif ev.kind == "transfer_end":
            hop_bytes += ev.nbytes
        elif ev.kind == "host_staged":
            res[ev.data].add(HOST)
        elif ev.kind == "transfer_done":
            res[ev.data].add(platform.workers[ev.worker].memory)
        elif ev.kind == "task_end":
            node = platform.workers[ev.worker].memory
            for d in graph.tasks[ev.task].write_ids():
                res[d] = {node}
                assert len(res[d]) == 1
    assert hop_bytes == report.bytes_total
    return res


def test_acceptance_5_scheduler_validity_suite():
    """Precedence, single execution, residency, transfer accounting and
    seed determinism across kernels and schedulers."""
    t0 = time.monotonic()
    model = PerfModel(default_timing_table())
    platform = build_platform(8, 4, 4)
    checked = 0
    for family in ("cholesky", "lu", "qr"):
        for nt in (4, 8, 16):
            graph = gen_family(family, nt)
            for name in ("heft", "dada", "ws"):
                sched = make_scheduler(name, alpha=0.5, cp=True)
                rep = run(graph, platform, sched, model, seed=nt, noise=0.0, trace=True)
                # single execution
                assert sorted(rep.schedule) == list(range(len(graph)))
                starts = [ev for ev in rep.events if ev.kind == "task_start"]
                assert len(starts) == len(graph)
                # precedence soundness
                for u, v in graph.edges():
                    assert rep.schedule[u].end <= rep.schedule[v].start
                # transfer necessity, byte accounting, single-writer residency
                replay_and_check(graph, platform, rep)
                # determinism by seed
                again = run(graph, platform, sched, model, seed=nt, noise=0.0, trace=True)
                assert rep == again
                checked += 1
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    print(f"\nACCEPTANCE 5 (scheduler validity suite): PASS ({checked} runs, {elapsed:.1f}s)")


def test_acceptance_6_kernel_dag_shapes():
    """Generated task counts match the closed forms exactly."""
    for nt in range(1, 17):
        chol = nt + 2 * math.comb(nt, 2) + math.comb(nt, 3)
        assert len(gen_cholesky(nt, b=64)) == chol
        lu = len(gen_lu_incpiv(nt, b=64, ib=16))
        qr = len(gen_qr(nt, b=64, ib=16))
        assert lu == qr == sum((q + 1) ** 2 for q in range(nt))
    assert len(gen_cholesky(4)) == 20
    print("\nACCEPTANCE 6 (kernel DAG shapes): PASS (nt = 1..16, all families)")


def test_acceptance_7_heft_determinism_and_scale_invariance():
    """Scaling every execution and transfer time by 7 leaves assignments
    identical; so does rerunning the same configuration."""
    rng = random.Random(7007)
    factor = 7.0
    for trial in range(50):
        n = rng.randint(5, 40)
        width = rng.randint(1, max(1, n // 2))
        graph, model = gen_random_layered(n, width=width, seed=rng.randrange(1 << 30))
        bw, lat = 4e9, 1e-5
        platform = build_platform(4, 2, 2, link_bandwidth=bw, link_latency=lat)
        sched = make_scheduler("heft")
        base = run(graph, platform, sched, model, seed=trial, noise=0.1)
        again = run(graph, platform, sched, model, seed=trial, noise=0.1)
        assert base.schedule == again.schedule  # determinism
        # uniform time scaling: executions x7 and transfers x7 (bandwidth /7)
        scaled_model = PerfModel({key: factor * v for key, v in model.fallback.items()})
        scaled_platform = build_platform(4, 2, 2, link_bandwidth=bw / factor,
                                         link_latency=lat * factor)
        scaled = run(graph, scaled_platform, sched, scaled_model, seed=trial, noise=0.1)
        assert {t: r.worker for t, r in scaled.schedule.items()} == \
               {t: r.worker for t, r in base.schedule.items()}
        # transfer-free instances: scaling the timing table and the bandwidth
        # by 7 together also preserves assignments (no transfer terms)
        flat_graph, flat_model = gen_random_layered(n, width=n, seed=rng.randrange(1 << 30))
        flat_base = run(flat_graph, platform, sched, flat_model, seed=trial, noise=0.1)
        big_model = PerfModel({key: factor * v for key, v in flat_model.fallback.items()})
        big_platform = build_platform(4, 2, 2, link_bandwidth=bw * factor, link_latency=lat)
        flat_scaled = run(flat_graph, big_platform, sched, big_model, seed=trial, noise=0.1)
        assert {t: r.worker for t, r in flat_scaled.schedule.items()} == \
               {t: r.worker for t, r in flat_base.schedule.items()}
    print("\nACCEPTANCE 7 (HEFT determinism and scale invariance): PASS (50 instances)")


def test_acceptance_8_lower_bound_sanity():
    """Noise-free makespans dominate the critical-path and area bounds."""
    model = PerfModel(default_timing_table())
    platform = build_platform(8, 4, 4)
    checked = 0
    for family in ("cholesky", "lu", "qr"):
        for nt in (4, 8, 16):
            graph = gen_family(family, nt)
            cp = critical_path_bound(graph, model)
            area = area_bound(graph, model, platform)
            bound = max(cp, area)
            for name in ("heft", "dada", "ws"):
                sched = make_scheduler(name, alpha=0.5, cp=True)
                rep = run(graph, platform, sched, model, seed=1, noise=0.0)
                assert rep.makespan >= bound
                checked += 1
    print(f"\nACCEPTANCE 8 (lower-bound sanity): PASS ({checked} runs)")


def test_acceptance_9_contention_model():
    """Two transfers behind one switch serialize exactly; with one GPU per
    switch the cap never binds."""
    # hand-computed serialization: 2 MiB at 2^33 B/s is 2^-12 s per transfer
    g = GraphBuilder()
    d0 = g.add_data(2_097_152)
    d1 = g.add_data(2_097_152)
    g.add_task("K0", [(d0, "R")])
    g.add_task("K1", [(d1, "R")])
    graph = g.seal()
    model = PerfModel({("K0", CPU): 1.0, ("K0", GPU): 1e-3,
                       ("K1", CPU): 1.0, ("K1", GPU): 1e-3})
    shared = build_platform(4, 2, 1, link_bandwidth=2.0**33, link_latency=0.0)
    rep = run(graph, shared, make_scheduler("heft"), model, trace=True)
    ends = sorted(ev.time for ev in rep.events if ev.kind == "transfer_end")
    assert ends == [2.0**-12, 2.0**-11]
    split = build_platform(4, 2, 2, link_bandwidth=2.0**33, link_latency=0.0)
    rep2 = run(graph, split, make_scheduler("heft"), model, trace=True)
    ends2 = sorted(ev.time for ev in rep2.events if ev.kind == "transfer_end")
    assert ends2 == [2.0**-12, 2.0**-12]

    # one GPU per switch: capped and uncapped runs coincide
    big = gen_cholesky(8)
    table = PerfModel(default_timing_table())
    for name in ("heft", "dada"):
        results = []
        for cap in (None, math.inf):
            platform = build_platform(8, 4, 4, switch_cap=cap)
            sched = make_scheduler(name, alpha=0.5, cp=True)
            results.append(run(big, platform, sched, table, seed=2, noise=0.0))
        assert results[0].makespan == results[1].makespan
        assert results[0].bytes_total == results[1].bytes_total
    print("\nACCEPTANCE 9 (contention model): PASS")
