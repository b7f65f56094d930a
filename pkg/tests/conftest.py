"""
Shared fixtures.

Every run made anywhere in the suite goes through a wrapper around
``algorithms.run`` that checks two structural invariants on the recorded
trace: the censoring gap max_i ||xhat_i - x_i|| never exceeds tau^k, and for
the dual-variable methods sum_i mu_i stays at zero up to 1e-9 (1 + ||mu||).
The patch is installed at import time, before test modules import ``run``.
"""

import numpy as np
import pytest

import colasim.algorithms as algorithms
import colasim.experiment as experiment
from colasim.graph import build_topology, incidence_set
from colasim.problems import LeastSquaresProblem

INVARIANT_LOG = []
_original_run = algorithms.run


def invariant_excess(trace):
    """(censoring-gap excess over tau, dual-sum excess over its tolerance); <= 0 means ok."""
    gap = np.asarray(trace.censor_gap) - np.asarray(trace.tau)
    dual = 0.0
    if trace.algorithm in ("cola", "dlm", "coca", "admm"):
        dual = float(np.max(np.asarray(trace.dual_sum) - 1e-9 * (1.0 + np.asarray(trace.mu_norm))))
    return float(np.max(gap)), dual


def _checked_run(*args, **kwargs):
    try:
        trace = _original_run(*args, **kwargs)
    except algorithms.DivergenceError as exc:
        if exc.trace is not None:
            INVARIANT_LOG.append((exc.trace.label, exc.trace.iterations, *invariant_excess(exc.trace)))
        raise
    INVARIANT_LOG.append((trace.label, trace.iterations, *invariant_excess(trace)))
    return trace


algorithms.run = _checked_run
experiment.run = _checked_run


@pytest.fixture(autouse=True)
def _invariants_hold():
    start = len(INVARIANT_LOG)
    yield
    bad = [e for e in INVARIANT_LOG[start:] if e[2] > 0.0 or e[3] > 0.0]
    assert not bad, f"run invariants violated: {bad}"


def well_conditioned_ls(n, p, seed):
    """LS instance with A_i = 2 I + 0.5 U[0,1]^{p x p}: strongly convex with modest kappa_f."""
    rng = np.random.default_rng(seed)
    A = 2.0 * np.eye(p) + 0.5 * rng.uniform(size=(n, p, p))
    b = rng.uniform(size=(n, p))
    return LeastSquaresProblem(A, np.einsum("nij,nj->ni", A, b), latent=b)


@pytest.fixture
def small_ls():
    """n=6, p=2 strongly convex instance on a random network."""
    net = build_topology("random", 6, 0.5, seed=1)
    prob = well_conditioned_ls(6, 2, seed=2)
    return net, incidence_set(net, 2), prob, prob.solve_centralized()


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
