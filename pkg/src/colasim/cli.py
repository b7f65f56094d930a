"""
Command-line interface.

    cola-sim run --config exp.toml [--out DIR] [--seed-override S] [--max-iter K] [--set key=value]
    cola-sim validate --config exp.toml
    cola-sim gen --topology random --n 50 --edge-fraction 0.1 --problem ls --p 3 --out DIR

Exit codes: 0 success, 1 config error, 2 a run diverged, 3 IO error.
"""

from __future__ import annotations

import argparse
import sys

from . import traceio
from .analysis import validate_params
from .censoring import ThresholdSchedule
from .config import ConfigError, echo, load_config
from .experiment import build_instance, run_experiment, summary_lines, write_outputs
from .graph import TOPOLOGIES, TopologyError, build_topology, dump_matrices, incidence_set
from .problems import ProblemError, ls_generate, lr_generate, save_problem

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_IO = 3


def _overrides(args):
    out = list(args.set or [])
    if getattr(args, "seed_override", None) is not None:
        out += [f"topology.seed={args.seed_override}", f"problem.seed={args.seed_override}"]
    if getattr(args, "max_iter", None) is not None:
        out.append(f"stop.max_iter={args.max_iter}")
    if getattr(args, "out", None) is not None:
        out.append(f"output.dir={_toml_string(args.out)}")
    return out


def _toml_string(s):
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def cmd_run(args):
    cfg = load_config(args.config, _overrides(args))
    print(echo(cfg))
    log = print if args.verbose else None
    result = run_experiment(cfg, jobs=args.jobs, log=log)
    for line in summary_lines(result):
        print(line)
    out = write_outputs(result, cfg.out_dir)
    print(f"wrote {out}")
    return EXIT_DIVERGED if result.any_diverged else EXIT_OK


def cmd_validate(args):
    cfg = load_config(args.config, _overrides(args))
    print(echo(cfg))
    for r in range(cfg.replicates):
        inst = build_instance(cfg, r)
        c = inst.constants
        s = inst.spectral
        print(f"replicate {r}: M={c.M:.6g} m={c.m:.6g} lambda_min(L_u)={s.lambda_min_Lu:.6g} "
              f"sigma_max(G_u)={s.sigma_max_Gu:.6g} sigma_min_nz(G_o)={s.sigma_min_nz_Go:.6g}")
        for spec in cfg.algorithms:
            if spec.kind not in ("cola", "dlm"):
                print(f"  {spec.label}: no linearized-update conditions to check")
                continue
            sched = spec.schedule if spec.kind == "cola" else ThresholdSchedule("zero")
            rep = validate_params(spec.params.c, spec.params.rho, c, s, sched)
            print(f"  {spec.label}:")
            for line in rep.lines():
                print(f"    {line}")
    return EXIT_OK


def cmd_gen(args):
    try:
        net = build_topology(args.topology, args.n, args.edge_fraction, args.topology_seed)
        if args.problem == "ls":
            prob = ls_generate(args.n, args.p, args.problem_seed)
        else:
            prob = lr_generate(args.n, args.p, args.problem_seed)
    except (TopologyError, ProblemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = traceio.ensure_dir(args.out)
    traceio.write_network(net, out / "edges.csv")
    save_problem(prob, out / "problem")
    if args.dump_matrices:
        dump_matrices(incidence_set(net, args.p), out / "matrices")
    print(f"wrote {args.topology} network ({len(net.edges)} edges) and {args.problem} problem to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="cola-sim", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--seed-override", type=int, help="replace topology.seed and problem.seed")
        p.add_argument("--max-iter", type=int, help="replace stop.max_iter")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. stop.target_accuracy=1e-6 "
                            "or algorithm.COLA.censor.beta=0.9 (repeatable)")

    p_run = sub.add_parser("run", help="run an experiment and write CSV traces")
    add_config_args(p_run)
    p_run.add_argument("--out", help="output directory (overrides output.dir)")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel runs (default 1)")
    p_run.add_argument("-v", "--verbose", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="check parameters against the convergence conditions")
    add_config_args(p_val)
    p_val.set_defaults(func=cmd_validate)

    p_gen = sub.add_parser("gen", help="pin a topology and problem instance to CSV files")
    p_gen.add_argument("--topology", required=True, choices=TOPOLOGIES)
    p_gen.add_argument("--n", type=int, required=True)
    p_gen.add_argument("--edge-fraction", type=float)
    p_gen.add_argument("--topology-seed", type=int, default=0)
    p_gen.add_argument("--problem", required=True, choices=("ls", "logistic"))
    p_gen.add_argument("--p", type=int, default=3)
    p_gen.add_argument("--problem-seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--dump-matrices", action="store_true",
                       help="also write A_s, A_d, G_o, G_u, L_o, L_u, D")
    p_gen.set_defaults(func=cmd_gen)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TopologyError, ProblemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
