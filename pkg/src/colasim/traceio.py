"""
Trace serialization.

A trace with stem ``run`` is written as

    run.csv          k, accuracy, broadcasts, cum_broadcasts, energy, r_grad,
                     r_cons, wall_ms, then tau, censor_gap, dual_sum, mu_norm
    run.pattern.csv  k, node0, ..., node{n-1}; 1 = the node broadcast in round k
    run.meta.json    algorithm, label, n, run metadata and the final state

Floats are written with ``repr`` so they re-parse to the identical double.
Missing optional columns (energy, residuals) are left empty.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .algorithms import AlgoState, RunTrace

TRACE_COLUMNS = ("k", "accuracy", "broadcasts", "cum_broadcasts", "energy", "r_grad",
                 "r_cons", "wall_ms")
EXTRA_COLUMNS = ("tau", "censor_gap", "dual_sum", "mu_norm")
_INT_COLUMNS = ("broadcasts", "cum_broadcasts")
_OPTIONAL = ("energy", "r_grad", "r_cons")


def ensure_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def slug(label):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label).strip("_") or "run"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _paths(stem):
    stem = Path(stem)
    return (stem.with_name(stem.name + ".csv"),
            stem.with_name(stem.name + ".pattern.csv"),
            stem.with_name(stem.name + ".meta.json"))


def emit_trace(trace, stem, pattern=True):
    """
    Write ``trace`` to files next to ``stem``; returns the list of paths.

    Raises OSError on IO failures.
    """
    csv_path, pat_path, meta_path = _paths(stem)
    ensure_dir(csv_path.parent)
    rows = []
    for k in range(len(trace.accuracy)):
        row = [k]
        for col in TRACE_COLUMNS[1:] + EXTRA_COLUMNS:
            seq = getattr(trace, col)
            row.append(None if seq is None else seq[k])
        rows.append(row)
    write_csv(csv_path, TRACE_COLUMNS + EXTRA_COLUMNS, rows)
    written = [csv_path]
    if pattern:
        pat = trace.pattern()
        write_csv(pat_path, ["k"] + [f"node{i}" for i in range(trace.n)],
                  [[k + 1, *map(int, row)] for k, row in enumerate(pat)])
        written.append(pat_path)
    meta = {
        "algorithm": trace.algorithm,
        "label": trace.label,
        "n": trace.n,
        "pattern": bool(pattern),
        "meta": trace.meta,
    }
    if trace.final_state is not None:
        st = trace.final_state
        meta["final_state"] = {"k": st.k, "x": st.x, "mu": st.mu, "xhat": st.xhat}
    write_json(meta_path, meta)
    written.append(meta_path)
    return written


def read_trace(stem):
    """Inverse of ``emit_trace``."""
    csv_path, pat_path, meta_path = _paths(stem)
    with open(meta_path) as fh:
        meta = json.load(fh)
    trace = RunTrace(meta["algorithm"], meta["label"], meta["n"], meta=meta["meta"])
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    for col in TRACE_COLUMNS[1:] + EXTRA_COLUMNS:
        if col in _OPTIONAL and rows and rows[0][col] == "":
            setattr(trace, col, None)
            continue
        conv = int if col in _INT_COLUMNS else float
        setattr(trace, col, [conv(r[col]) for r in rows])
    if meta.get("pattern"):
        with open(pat_path, newline="") as fh:
            data = list(csv.reader(fh))[1:]
        trace.flags = [np.array([c == "1" for c in row[1:]]) for row in data]
    if "final_state" in meta:
        fs = meta["final_state"]
        trace.final_state = AlgoState(np.array(fs["x"], dtype=float), np.array(fs["mu"], dtype=float),
                                      np.array(fs["xhat"], dtype=float), fs["k"])
    return trace


def write_network(net, path):
    """Undirected edge list of ``net`` as CSV (0-indexed nodes)."""
    write_csv(path, ["i", "j"], [[i, j] for i, j in net.edges])


def read_network(path, n=None):
    from .graph import Network

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    edges = [(int(a), int(b)) for a, b in rows]
    if n is None:
        n = 1 + max(max(e) for e in edges)
    return Network.from_edges(n, edges)
