"""
Experiment orchestration: build one instance per replicate, run every
configured algorithm on it and summarize the runs as a comparison table.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import traceio
from .algorithms import AlgoParams, AlgoState, DivergenceError, cola_round, run
from .analysis import Diagnostics, validate_params
from .censoring import ThresholdSchedule
from .graph import build_topology, incidence_set, spectral_info
from .problems import ConvergenceError, ls_generate, lr_generate, solve_centralized


@dataclass
class Instance:
    """Everything shared by the runs of one replicate."""

    replicate: int
    topology_seed: int
    problem_seed: int
    net: object
    inc: object
    problem: object
    xstar: np.ndarray
    spectral: object
    constants: object

    def summary(self):
        return {
            "replicate": self.replicate,
            "topology_seed": self.topology_seed,
            "problem_seed": self.problem_seed,
            "edges": len(self.net.edges),
            "M": self.constants.M,
            "m": self.constants.m,
            "spectral": asdict(self.spectral),
            "xstar": [float(v) for v in self.xstar],
        }


@dataclass
class RunRecord:
    label: str
    kind: str
    replicate: int
    trace: object | None
    error: str | None = None
    diverged: bool = False
    report: object | None = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class TableRow:
    label: str
    kind: str
    runs: int
    reached: int
    iterations: float
    broadcasts: float
    wall_ms: float

    def cells(self):
        return [self.label, self.kind, self.runs, self.reached,
                _num(self.iterations), _num(self.broadcasts), _num(self.wall_ms)]


TABLE_HEADER = ["algorithm", "kind", "runs", "reached", "iterations_to_target",
                "broadcasts_to_target", "wall_ms_to_target"]


def _num(v):
    if math.isinf(v):
        return "inf"
    return repr(float(v))


@dataclass
class ExperimentResult:
    config: object
    instances: list
    runs: list = field(default_factory=list)
    table: list = field(default_factory=list)

    @property
    def any_diverged(self):
        return any(r.diverged for r in self.runs)

    def traces(self, label):
        return [r.trace for r in self.runs if r.label == label]


def reference_optimum(problem, inc, tolerance=1e-12, reference_iters=100_000):
    """
    x* for a problem instance.

    Least squares: direct solve of the normal equations. Logistic: a DLM
    reference run of ``reference_iters`` rounds with rho = M and c = M/2
    (which meets the convergence condition on any graph), whose node average
    warm-starts centralized gradient descent to ``tolerance``.
    """
    if problem.kind == "ls":
        return solve_centralized(problem, tolerance)
    M = problem.constants().M
    params = AlgoParams(c=0.5 * M, rho=M)
    state = AlgoState.zeros(problem.n, problem.p)
    for _ in range(reference_iters):
        state = cola_round(state, inc, problem, params, 0.0).state
    x0 = state.x.mean(axis=0) if np.all(np.isfinite(state.x)) else None
    return solve_centralized(problem, tolerance, x0)


def build_instance(cfg, replicate=0):
    t_seed, p_seed = cfg.seeds(replicate)
    t, p = cfg.topology, cfg.problem
    net = build_topology(t.kind, t.n, t.edge_fraction, t_seed)
    inc = incidence_set(net, p.p)
    if p.kind == "ls":
        problem = ls_generate(t.n, p.p, p_seed)
    else:
        problem = lr_generate(t.n, p.p, p_seed)
    xstar = reference_optimum(problem, inc, p.tolerance, p.reference_iters)
    return Instance(replicate, t_seed, p_seed, net, inc, problem, np.asarray(xstar),
                    spectral_info(inc), problem.constants())


def _run_one(cfg, inst, spec):
    diag = None
    if cfg.diagnostics:
        # energy uses the linearization weight; ADMM-type and ETSD runs have none
        rho = spec.params.rho if spec.kind in ("cola", "dlm") else 0.0
        diag = Diagnostics(inst.inc, inst.problem, inst.xstar, spec.params.c, rho)
    report = None
    if spec.kind in ("cola", "dlm"):
        sched = spec.schedule if spec.kind == "cola" else ThresholdSchedule("zero")
        report = validate_params(spec.params.c, spec.params.rho, inst.constants,
                                 inst.spectral, sched)
    try:
        trace = run(spec.kind, inst.inc, inst.problem, spec.params, spec.schedule,
                    inst.xstar, cfg.max_iter, cfg.target_accuracy, diagnostics=diag,
                    subproblem_tol=spec.subproblem_tol, label=spec.label,
                    accounting=cfg.accounting)
        rec = RunRecord(spec.label, spec.kind, inst.replicate, trace, report=report)
    except DivergenceError as exc:
        rec = RunRecord(spec.label, spec.kind, inst.replicate, exc.trace, str(exc),
                        diverged=True, report=report)
    except (ConvergenceError, ValueError, np.linalg.LinAlgError) as exc:
        rec = RunRecord(spec.label, spec.kind, inst.replicate, None,
                        f"{type(exc).__name__}: {exc}", report=report)
    if rec.trace is not None:
        rec.trace.meta.update(
            config_digest=cfg.digest(),
            replicate=inst.replicate,
            topology_seed=inst.topology_seed,
            problem_seed=inst.problem_seed,
            M=inst.constants.M,
            m=inst.constants.m,
            spectral=asdict(inst.spectral),
            param_report=None if report is None else asdict(report),
        )
    return rec


def run_experiment(cfg, jobs=1, log=None):
    """
    Run every algorithm of ``cfg`` on every replicate.

    Parameters
    ----------
    cfg : config.ExperimentConfig
    jobs : int
        Worker threads. Runs share only read-only instance data; wall times
        are less meaningful when runs overlap.
    log : callable, optional
        Receives one progress line per finished run.

    Returns
    -------
    ExperimentResult
    """
    instances = [build_instance(cfg, r) for r in range(cfg.replicates)]
    tasks = [(inst, spec) for inst in instances for spec in cfg.algorithms]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(lambda t: _run_one(cfg, *t), tasks))
    else:
        runs = [_run_one(cfg, *t) for t in tasks]
    if log is not None:
        for rec in runs:
            status = "ok" if rec.ok else ("diverged" if rec.diverged else "failed")
            iters = rec.trace.iterations if rec.trace is not None else 0
            log(f"{rec.label} replicate {rec.replicate}: {status} after {iters} iterations")
    result = ExperimentResult(cfg, instances, runs)
    result.table = comparison_table(runs, cfg.algorithms, cfg.target_accuracy)
    return result


def comparison_table(runs, algorithms, target):
    """
    Median iterations, broadcasts and wall ms to ``target`` per algorithm.

    Runs that diverge, fail or never reach the target count as +inf, so a
    median is finite only when most runs reach the target.
    """
    rows = []
    for spec in algorithms:
        its, bcs, wms = [], [], []
        reached = 0
        recs = [r for r in runs if r.label == spec.label]
        for rec in recs:
            hit = None
            if rec.ok and rec.trace is not None and target is not None:
                hit = rec.trace.to_target(target)
            if hit is None:
                its.append(math.inf)
                bcs.append(math.inf)
                wms.append(math.inf)
            else:
                reached += 1
                its.append(hit[0])
                bcs.append(hit[1])
                wms.append(hit[2])
        rows.append(TableRow(spec.label, spec.kind, len(recs), reached,
                             _median(its), _median(bcs), _median(wms)))
    return rows


def _median(values):
    if not values:
        return math.inf
    return float(np.median(np.asarray(values, dtype=float)))


def write_outputs(result, out_dir):
    """Write traces, the comparison table, run statuses and instance metadata."""
    cfg = result.config
    out = traceio.ensure_dir(out_dir)
    for rec in result.runs:
        if rec.trace is not None:
            stem = out / f"{traceio.slug(rec.label)}_r{rec.replicate}"
            traceio.emit_trace(rec.trace, stem, pattern=cfg.censoring_pattern)
    traceio.write_csv(out / "table.csv", TABLE_HEADER, [row.cells() for row in result.table])
    traceio.write_csv(
        out / "runs.csv",
        ["algorithm", "replicate", "status", "iterations", "final_accuracy", "message"],
        [[r.label, r.replicate,
          "ok" if r.ok else ("diverged" if r.diverged else "failed"),
          r.trace.iterations if r.trace is not None else 0,
          repr(r.trace.accuracy[-1]) if r.trace is not None else "",
          r.error or ""] for r in result.runs],
    )
    param_rows = []
    for r in result.runs:
        if r.report is not None:
            d = asdict(r.report)
            param_rows.append([r.label, r.replicate] + [d[k] for k in PARAM_FIELDS])
    traceio.write_csv(out / "params.csv", ["algorithm", "replicate", *PARAM_FIELDS], param_rows)
    traceio.write_json(out / "experiment.json", {
        "name": cfg.name,
        "config_digest": cfg.digest(),
        "config": cfg.raw,
        "instances": [inst.summary() for inst in result.instances],
    })
    return out


PARAM_FIELDS = ["thm1_ok", "thm2_ok", "schedule_summable", "delta_bound", "recommended_c",
                "recommended_rho", "thm1_lhs", "thm1_rhs", "thm2_rhs"]


def summary_lines(result):
    cfg = result.config
    lines = [f"{cfg.name}: {len(result.runs)} runs over {len(result.instances)} replicate(s), "
             f"target accuracy {cfg.target_accuracy}"]
    widths = [max(len(str(c)) for c in col) for col in
              zip(TABLE_HEADER, *[[str(x) for x in row.cells()] for row in result.table])]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines.append(fmt.format(*TABLE_HEADER))
    for row in result.table:
        lines.append(fmt.format(*[str(x) for x in row.cells()]))
    for rec in result.runs:
        if not rec.ok:
            lines.append(f"  ! {rec.label} replicate {rec.replicate}: {rec.error}")
    return lines
