"""
Experiment configuration.

Configs are TOML files. Algorithm entries may use dotted keys for the
censoring schedule (``censor.alpha = 0.7``). Example::

    [experiment]
    name = "ls-random"
    replicates = 3          # seeds seed, seed+1, ... for topology and problem

    [topology]
    kind = "random"
    n = 50
    edge_fraction = 0.1
    seed = 0

    [problem]
    kind = "ls"
    p = 3
    seed = 0

    [stop]
    max_iter = 4000
    target_accuracy = 1e-8

    [output]
    dir = "results"

    [[algorithm]]
    label = "COLA"
    kind = "cola"
    c = 0.45
    rho = 1.1
    censor.kind = "linear"
    censor.alpha = 0.7
    censor.beta = 0.94

Unknown keys are rejected and every domain violation is reported at once.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .algorithms import ALGORITHMS, AlgoParams
from .censoring import SCHEDULE_KINDS, ThresholdSchedule, schedule_errors
from .graph import TOPOLOGIES

PROBLEM_KINDS = ("ls", "logistic")
ACCOUNTING = ("broadcast", "edge")

_SECTION_KEYS = {
    "experiment": {"name", "replicates", "accounting"},
    "topology": {"kind", "n", "edge_fraction", "seed"},
    "problem": {"kind", "p", "seed", "tolerance", "reference_iters"},
    "stop": {"max_iter", "target_accuracy"},
    "output": {"dir", "censoring_pattern", "diagnostics"},
}
_ALGO_KEYS = {"label", "kind", "c", "rho", "etsd_step", "subproblem_tol", "censor"}
_CENSOR_KEYS = {"kind", "alpha", "beta", "r"}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors) if not isinstance(errors, str) else [errors]
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class TopologySpec:
    kind: str
    n: int
    edge_fraction: float | None = None
    seed: int = 0


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    p: int
    seed: int = 0
    tolerance: float = 1e-12
    reference_iters: int = 100_000


@dataclass(frozen=True)
class AlgorithmSpec:
    label: str
    kind: str
    params: AlgoParams
    schedule: ThresholdSchedule
    subproblem_tol: float = 1e-8


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    topology: TopologySpec
    problem: ProblemSpec
    algorithms: tuple
    max_iter: int
    target_accuracy: float | None
    out_dir: str = "results"
    censoring_pattern: bool = True
    diagnostics: bool = False
    replicates: int = 1
    accounting: str = "broadcast"
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    def digest(self):
        """SHA-256 of the canonical config, excluding the output directory."""
        body = copy.deepcopy(self.raw)
        body.get("output", {}).pop("dir", None)
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def seeds(self, replicate):
        """(topology seed, problem seed) of a replicate."""
        return self.topology.seed + replicate, self.problem.seed + replicate


def parse_value(text):
    """Interpret a command-line override value as TOML, falling back to a string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw, overrides):
    """
    Set dotted keys in a raw config mapping.

    ``section.key=value`` addresses a table; ``algorithm.<index or label>.key``
    addresses one algorithm entry (``censor.*`` nested keys allowed).
    """
    raw = copy.deepcopy(raw)
    errors = []
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep:
            errors.append(f"override {item!r} is not of the form key=value")
            continue
        parts = key.strip().split(".")
        val = parse_value(value.strip())
        if parts[0] == "algorithm":
            algos = raw.get("algorithm", [])
            if len(parts) < 3:
                errors.append(f"override {key!r} must name an algorithm: algorithm.<index|label>.<key>")
                continue
            target = _find_algorithm(algos, parts[1])
            if target is None:
                errors.append(f"override {key!r}: no algorithm {parts[1]!r}")
                continue
            node, path = target, parts[2:]
        else:
            if len(parts) != 2:
                errors.append(f"override {key!r} must be section.key")
                continue
            node, path = raw.setdefault(parts[0], {}), parts[1:]
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = val
    if errors:
        raise ConfigError(errors)
    return raw


def _find_algorithm(algos, ref):
    if ref.isdigit() and int(ref) < len(algos):
        return algos[int(ref)]
    for a in algos:
        if a.get("label", a.get("kind")) == ref:
            return a
    return None


def parse_config(text, overrides=None, source="<config>"):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # the decoder message ends with "(at line L, column C)"
        raise ConfigError(f"{source}: parse error: {exc}") from None
    return build_config(apply_overrides(raw, overrides))


def load_config(source, overrides=None):
    """
    Load a config from a file path or from inline TOML text.

    A string containing a newline is treated as inline text.
    """
    if isinstance(source, str) and "\n" in source:
        return parse_config(source, overrides)
    path = Path(source)
    text = path.read_text()  # OSError propagates to the caller
    return parse_config(text, overrides, source=str(path))


def _type_check(errors, where, value, kinds, name):
    if isinstance(value, bool) and bool not in kinds:
        errors.append(f"{where}.{name} must be {_kind_name(kinds)}, got {value!r}")
        return False
    if not isinstance(value, kinds):
        errors.append(f"{where}.{name} must be {_kind_name(kinds)}, got {value!r}")
        return False
    return True


def _kind_name(kinds):
    names = {int: "an integer", float: "a number", str: "a string", bool: "a boolean"}
    return " or ".join(names[k] for k in kinds)


def _get(errors, table, where, name, kinds, default=None, required=False):
    if name not in table:
        if required:
            errors.append(f"{where}.{name} is required")
        return default
    value = table[name]
    if not _type_check(errors, where, value, kinds, name):
        return default
    return float(value) if float in kinds and int in kinds and not isinstance(value, bool) else value


def build_config(raw):
    """Validate a raw mapping (as parsed from TOML) into an ExperimentConfig."""
    errors = []
    for key in raw:
        if key not in _SECTION_KEYS and key != "algorithm":
            errors.append(f"unknown section {key!r}")
    for sec, allowed in _SECTION_KEYS.items():
        table = raw.get(sec, {})
        if not isinstance(table, dict):
            errors.append(f"{sec} must be a table")
            continue
        for key in table:
            if key not in allowed:
                errors.append(f"unknown key {sec}.{key}")

    exp = raw.get("experiment", {}) if isinstance(raw.get("experiment"), dict) else {}
    name = _get(errors, exp, "experiment", "name", (str,), "experiment")
    replicates = _get(errors, exp, "experiment", "replicates", (int,), 1)
    if replicates is not None and replicates < 1:
        errors.append("experiment.replicates must be >= 1")
    accounting = _get(errors, exp, "experiment", "accounting", (str,), "broadcast")
    if accounting not in ACCOUNTING:
        errors.append(f"experiment.accounting must be one of {ACCOUNTING}")

    topo = raw.get("topology", {}) if isinstance(raw.get("topology"), dict) else {}
    if "topology" not in raw:
        errors.append("section [topology] is required")
    t_kind = _get(errors, topo, "topology", "kind", (str,), required="topology" in raw)
    if t_kind is not None and t_kind not in TOPOLOGIES:
        errors.append(f"topology.kind must be one of {TOPOLOGIES}, got {t_kind!r}")
    t_n = _get(errors, topo, "topology", "n", (int,), required="topology" in raw)
    if t_n is not None and t_n < 2:
        errors.append("topology.n must be >= 2")
    frac = _get(errors, topo, "topology", "edge_fraction", (int, float))
    if t_kind == "random" and frac is None and "edge_fraction" not in topo:
        errors.append("topology.edge_fraction is required for random topologies")
    if frac is not None:
        if t_kind != "random":
            errors.append("topology.edge_fraction is only valid for random topologies")
        elif not 0.0 < frac <= 1.0:
            errors.append("topology.edge_fraction must be in (0, 1]")
    t_seed = _get(errors, topo, "topology", "seed", (int,), 0)

    prob = raw.get("problem", {}) if isinstance(raw.get("problem"), dict) else {}
    if "problem" not in raw:
        errors.append("section [problem] is required")
    p_kind = _get(errors, prob, "problem", "kind", (str,), required="problem" in raw)
    if p_kind is not None and p_kind not in PROBLEM_KINDS:
        errors.append(f"problem.kind must be one of {PROBLEM_KINDS}, got {p_kind!r}")
    p_dim = _get(errors, prob, "problem", "p", (int,), required="problem" in raw)
    if p_dim is not None:
        if p_dim < 1:
            errors.append("problem.p must be >= 1")
        elif p_kind == "logistic" and p_dim < 2:
            errors.append("problem.p must be >= 2 for logistic problems")
    p_seed = _get(errors, prob, "problem", "seed", (int,), 0)
    tol = _get(errors, prob, "problem", "tolerance", (int, float), 1e-12)
    if tol is not None and not tol > 0:
        errors.append("problem.tolerance must be > 0")
    ref_iters = _get(errors, prob, "problem", "reference_iters", (int,), 100_000)
    if ref_iters is not None and ref_iters < 0:
        errors.append("problem.reference_iters must be >= 0")

    stop = raw.get("stop", {}) if isinstance(raw.get("stop"), dict) else {}
    max_iter = _get(errors, stop, "stop", "max_iter", (int,), 1000)
    if max_iter is not None and max_iter < 1:
        errors.append("stop.max_iter must be >= 1")
    target = _get(errors, stop, "stop", "target_accuracy", (int, float))
    if target is not None and not target > 0:
        errors.append("stop.target_accuracy must be > 0")

    out = raw.get("output", {}) if isinstance(raw.get("output"), dict) else {}
    out_dir = _get(errors, out, "output", "dir", (str,), "results")
    pattern = _get(errors, out, "output", "censoring_pattern", (bool,), True)
    diag = _get(errors, out, "output", "diagnostics", (bool,), False)

    algos = []
    entries = raw.get("algorithm", [])
    if not isinstance(entries, list):
        errors.append("algorithm must be an array of tables ([[algorithm]])")
        entries = []
    if not entries:
        errors.append("at least one [[algorithm]] entry is required")
    labels = set()
    for idx, entry in enumerate(entries):
        spec = _build_algorithm(errors, idx, entry)
        if spec is None:
            continue
        if spec.label in labels:
            errors.append(f"algorithm[{idx}]: duplicate label {spec.label!r}")
        labels.add(spec.label)
        algos.append(spec)

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        name=name,
        topology=TopologySpec(t_kind, t_n, frac, t_seed),
        problem=ProblemSpec(p_kind, p_dim, p_seed, tol, ref_iters),
        algorithms=tuple(algos),
        max_iter=max_iter,
        target_accuracy=target,
        out_dir=out_dir,
        censoring_pattern=pattern,
        diagnostics=diag,
        replicates=replicates,
        accounting=accounting,
        raw=copy.deepcopy(raw),
    )


def _build_algorithm(errors, idx, entry):
    where = f"algorithm[{idx}]"
    if not isinstance(entry, dict):
        errors.append(f"{where} must be a table")
        return None
    n_before = len(errors)
    for key in entry:
        if key not in _ALGO_KEYS:
            errors.append(f"unknown key {where}.{key}")
    kind = _get(errors, entry, where, "kind", (str,), required=True)
    if kind is not None and kind not in ALGORITHMS:
        errors.append(f"{where}.kind must be one of {ALGORITHMS}, got {kind!r}")
    label = _get(errors, entry, where, "label", (str,), kind)
    defaults = AlgoParams()
    params = AlgoParams(
        c=_get(errors, entry, where, "c", (int, float), defaults.c),
        rho=_get(errors, entry, where, "rho", (int, float), defaults.rho),
        etsd_step=_get(errors, entry, where, "etsd_step", (int, float), defaults.etsd_step),
    )
    if kind in ALGORITHMS:
        errors.extend(f"{where}: {e}" for e in params.errors(kind))
    sub_tol = _get(errors, entry, where, "subproblem_tol", (int, float), 1e-8)
    if sub_tol is not None and not sub_tol > 0:
        errors.append(f"{where}.subproblem_tol must be > 0")

    censor = entry.get("censor", {})
    schedule = None
    if not isinstance(censor, dict):
        errors.append(f"{where}.censor must be a table of censor.* keys")
    else:
        for key in censor:
            if key not in _CENSOR_KEYS:
                errors.append(f"unknown key {where}.censor.{key}")
        cw = f"{where}.censor"
        s_kind = _get(errors, censor, cw, "kind", (str,), "zero")
        alpha = _get(errors, censor, cw, "alpha", (int, float), 0.0)
        beta = _get(errors, censor, cw, "beta", (int, float))
        r = _get(errors, censor, cw, "r", (int, float))
        if kind in ("dlm", "admm") and s_kind != "zero":
            errors.append(f"{where}: {kind} never censors; censor.kind must be 'zero' or omitted")
        if s_kind not in SCHEDULE_KINDS:
            errors.append(f"{cw}.kind must be one of {SCHEDULE_KINDS}, got {s_kind!r}")
        else:
            sched_errs = schedule_errors(s_kind, alpha, beta, r)
            errors.extend(f"{cw}: {e}" for e in sched_errs)
            if not sched_errs and len(errors) == n_before:
                schedule = ThresholdSchedule(s_kind, alpha, beta, r)
    if len(errors) > n_before or schedule is None:
        return None
    return AlgorithmSpec(label, kind, params, schedule, sub_tol)


def echo(cfg):
    """Human-readable summary of a parsed config."""
    t, p = cfg.topology, cfg.problem
    topo = f"{t.kind} n={t.n}" + (f" edge_fraction={t.edge_fraction:g}" if t.edge_fraction else "")
    lines = [
        f"experiment {cfg.name}: {cfg.replicates} replicate(s), digest {cfg.digest()[:12]}",
        f"topology   {topo} seed={t.seed}",
        f"problem    {p.kind} p={p.p} seed={p.seed}",
        f"stop       max_iter={cfg.max_iter} target_accuracy={cfg.target_accuracy}",
    ]
    for a in cfg.algorithms:
        parts = [f"c={a.params.c:g}"]
        if a.kind in ("cola", "dlm"):
            parts.append(f"rho={a.params.rho:g}")
        if a.kind == "etsd":
            parts = [f"etsd_step={a.params.etsd_step:g}"]
        lines.append(f"algorithm  {a.label} ({a.kind}) {' '.join(parts)} censor={a.schedule.describe()}")
    return "\n".join(lines)
