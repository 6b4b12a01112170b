"""Experiment harness.

Subcommands: ``run`` (one configuration, one CSV row per repetition),
``sweep`` (Cartesian product over GPU counts, alpha values and schedulers),
``export-dot`` (the generated task graph) and ``validate`` (config lint).
Settings come from an INI-style config file overridden by command-line
flags; flags win.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
from dataclasses import dataclass, replace

from .graph import GraphError
from .kernels import default_timing_table, gen_family
from .perfmodel import PerfModel, PerfModelError, load_timing_table
from .platform import PlatformError, build_platform
from .sched import SchedulerError, make_scheduler
from .sim import SimulationError, flops_of, run

CSV_COLUMNS = [
    "scheduler", "alpha", "cp", "ncpu", "ngpu", "kernel", "n", "tile", "seed", "rep",
    "makespan_s", "gflops", "bytes_h2d", "bytes_d2h", "bytes_d2d", "bytes_total",
    "steals_ok", "steals_failed",
]

_ERRORS = (GraphError, PlatformError, PerfModelError, SchedulerError, SimulationError, ValueError, OSError)


@dataclass
class ExperimentConfig:
    kernel: str = "cholesky"
    nt: int = 16
    tile: int = 512
    ib: int = 128
    cpus: int = 12
    gpus: int = 8
    switches: int = 4
    bandwidth: float = 6e9
    latency: float = 1e-5
    switch_cap: float | None = None
    scheduler: str = "heft"
    alpha: float = 0.5
    epsilon: float = 1e-4
    cp: bool = False
    seed: int = 0
    noise: float = 0.0
    reps: int = 1
    timings: str | None = None

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError(f"reps must be at least 1, got {self.reps}")
        if self.nt < 1:
            raise ValueError(f"nt must be at least 1, got {self.nt}")


def load_config(path: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise OSError(f"cannot read config file {path!r}")
    cfg = ExperimentConfig()
    plat = parser["platform"] if parser.has_section("platform") else {}
    kern = parser["kernel"] if parser.has_section("kernel") else {}
    sched = parser["sched"] if parser.has_section("sched") else {}
    runsec = parser["run"] if parser.has_section("run") else {}
    return replace(
        cfg,
        cpus=int(plat.get("cpus", cfg.cpus)),
        gpus=int(plat.get("gpus", cfg.gpus)),
        switches=int(plat.get("switches", cfg.switches)),
        bandwidth=float(plat.get("bandwidth", cfg.bandwidth)),
        latency=float(plat.get("latency", cfg.latency)),
        switch_cap=float(plat["switch_cap"]) if "switch_cap" in plat else cfg.switch_cap,
        kernel=kern.get("family", cfg.kernel),
        nt=int(kern.get("nt", cfg.nt)),
        tile=int(kern.get("tile", cfg.tile)),
        ib=int(kern.get("ib", cfg.ib)),
        scheduler=sched.get("name", cfg.scheduler),
        alpha=float(sched.get("alpha", cfg.alpha)),
        epsilon=float(sched.get("epsilon", cfg.epsilon)),
        cp=_parse_bool(sched.get("cp", cfg.cp)),
        seed=int(runsec.get("seed", cfg.seed)),
        noise=float(runsec.get("noise", cfg.noise)),
        reps=int(runsec.get("reps", cfg.reps)),
        timings=runsec.get("timings", cfg.timings),
    )


def _parse_bool(value):
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def _merge_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    overrides = {}
    for flag, field_name in [
        ("kernel", "kernel"), ("nt", "nt"), ("tile", "tile"), ("ib", "ib"),
        ("cpus", "cpus"), ("gpus", "gpus"), ("switches", "switches"),
        ("bandwidth", "bandwidth"), ("latency", "latency"), ("switch_cap", "switch_cap"),
        ("scheduler", "scheduler"), ("alpha", "alpha"), ("epsilon", "epsilon"),
        ("cp", "cp"), ("seed", "seed"), ("noise", "noise"), ("reps", "reps"),
        ("timings", "timings"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field_name] = value
    if "cp" in overrides:
        overrides["cp"] = bool(overrides["cp"])
    return replace(cfg, **overrides)


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return _merge_flags(cfg, args)


def _build_model(cfg: ExperimentConfig) -> PerfModel:
    table = default_timing_table(cfg.tile, cfg.ib)
    if cfg.timings:
        table.update(load_timing_table(cfg.timings))
    return PerfModel(table)


def _simulate_point(cfg: ExperimentConfig, writer, trace_path=None):
    """Run cfg.reps simulations with seeds seed, seed+1, ... and emit rows."""
    graph = gen_family(cfg.kernel, cfg.nt, cfg.tile, cfg.ib)
    platform = build_platform(
        cfg.cpus, cfg.gpus, cfg.switches, cfg.bandwidth, cfg.latency, cfg.switch_cap
    )
    model = _build_model(cfg)
    scheduler = make_scheduler(cfg.scheduler, alpha=cfg.alpha, epsilon=cfg.epsilon, cp=cfg.cp)
    n = cfg.nt * cfg.tile
    total_flops = flops_of(cfg.kernel, n)
    for rep in range(cfg.reps):
        seed = cfg.seed + rep
        want_trace = trace_path is not None and rep == 0
        report = run(graph, platform, scheduler, model, seed=seed, noise=cfg.noise, trace=want_trace)
        gflops = total_flops / report.makespan / 1e9 if report.makespan > 0 else 0.0
        writer.writerow([
            cfg.scheduler, repr(cfg.alpha), int(cfg.cp), cfg.cpus, cfg.gpus,
            cfg.kernel, n, cfg.tile, seed, rep,
            repr(report.makespan), repr(gflops),
            report.bytes_h2d, report.bytes_d2h, report.bytes_d2d, report.bytes_total,
            report.steals_ok, report.steals_failed,
        ])
        if want_trace:
            with open(trace_path, "w", encoding="utf-8") as fh:
                fh.write("# time kind worker task data bytes\n")
                for ev in report.events:
                    fh.write(f"{ev.time!r} {ev.kind} {ev.worker} {ev.task} {ev.data} {ev.nbytes}\n")


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    out, close = _open_out(args.out)
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        _simulate_point(cfg, writer, trace_path=args.trace)
    finally:
        if close:
            out.close()
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    gpus_axis = _parse_int_list(args.gpus) if args.gpus else [cfg.gpus]
    alpha_axis = _parse_float_list(args.alpha) if args.alpha else [cfg.alpha]
    sched_axis = args.scheduler.split(",") if args.scheduler else [cfg.scheduler]
    out, close = _open_out(args.out)
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for sched_name in sched_axis:
            for alpha in alpha_axis:
                for gpus in gpus_axis:
                    point = replace(cfg, scheduler=sched_name.strip(), alpha=alpha, gpus=gpus)
                    _simulate_point(point, writer)
    finally:
        if close:
            out.close()
    return 0


def cmd_export_dot(args) -> int:
    cfg = _config_from_args(args)
    graph = gen_family(cfg.kernel, cfg.nt, cfg.tile, cfg.ib)
    text = graph.export_dot()
    if args.out and args.out != "-":
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_validate(args) -> int:
    cfg = _config_from_args(args)
    graph = gen_family(cfg.kernel, cfg.nt, cfg.tile, cfg.ib)
    platform = build_platform(
        cfg.cpus, cfg.gpus, cfg.switches, cfg.bandwidth, cfg.latency, cfg.switch_cap
    )
    _build_model(cfg)
    make_scheduler(cfg.scheduler, alpha=cfg.alpha, epsilon=cfg.epsilon, cp=cfg.cp)
    print(
        f"ok: {cfg.kernel} nt={cfg.nt} -> {len(graph)} tasks, "
        f"{platform.n_cpu_workers} CPU + {platform.k} GPU workers, "
        f"scheduler {cfg.scheduler}, reps {cfg.reps}"
    )
    return 0


def _parse_int_list(text):
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",") if x != ""]


def _parse_float_list(text):
    return [float(x) for x in text.split(",") if x != ""]


def _add_common_flags(p, sweep=False):
    p.add_argument("--config", help="INI config file; flags override it")
    p.add_argument("--kernel", help="kernel family: cholesky, lu or qr")
    p.add_argument("--nt", type=int, help="tiles per matrix dimension")
    p.add_argument("--tile", type=int, help="tile order b")
    p.add_argument("--ib", type=int, help="inner block size")
    p.add_argument("--cpus", type=int, help="CPU cores m (one per GPU is consumed)")
    p.add_argument("--switches", type=int, help="number of PCIe switches")
    p.add_argument("--bandwidth", type=float, help="link bandwidth in bytes/s")
    p.add_argument("--latency", type=float, help="link latency in seconds")
    p.add_argument("--switch-cap", dest="switch_cap", type=float,
                   help="per-switch aggregate bandwidth in bytes/s (inf to disable)")
    p.add_argument("--epsilon", type=float, help="dual-approximation search precision")
    p.add_argument("--cp", type=int, choices=(0, 1), help="communication prediction for dada")
    p.add_argument("--seed", type=int, help="base RNG seed")
    p.add_argument("--noise", type=float, help="execution-time noise amplitude in [0,1)")
    p.add_argument("--reps", type=int, help="repetitions per point (seeds seed, seed+1, ...)")
    p.add_argument("--timings", help="timing table file with 'kind,class,seconds' lines")
    p.add_argument("--out", help="output file (default stdout)")
    if sweep:
        p.add_argument("--gpus", help="GPU counts, e.g. '0,2,4,8' or '0..8'")
        p.add_argument("--alpha", help="comma-separated alpha values")
        p.add_argument("--scheduler", help="comma-separated scheduler names")
    else:
        p.add_argument("--gpus", type=int, help="GPU count k (requires m >= k)")
        p.add_argument("--alpha", type=float, help="dada affinity budget in [0,1]")
        p.add_argument("--scheduler", help="heft, dada or ws")


def _build_parser():
    parser = argparse.ArgumentParser(prog="hetsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one configuration")
    _add_common_flags(p_run)
    p_run.add_argument("--trace", help="write the first repetition's event trace to this file")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep GPU count, alpha and scheduler axes")
    _add_common_flags(p_sweep, sweep=True)
    p_sweep.set_defaults(func=cmd_sweep)

    p_dot = sub.add_parser("export-dot", help="print the generated task graph as DOT")
    _add_common_flags(p_dot)
    p_dot.set_defaults(func=cmd_export_dot)

    p_val = sub.add_parser("validate", help="check a configuration without running")
    _add_common_flags(p_val)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
