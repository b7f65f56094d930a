"""
Synchronous round engines and the run loop.

All engines work on node-major arrays of shape (n, p). A round reads only the
round-k state and returns a fresh state, so every node update sees the same
snapshot, as in a synchronous network. The simulator keeps a single copy of
the broadcast states ``xhat``: lossless broadcast guarantees that node i and
all of its neighbors hold the same value of xhat_i (``protocol.py`` simulates
the per-node copies explicitly).

DLM is COLA with the zero schedule and decentralized ADMM is COCA with the
zero schedule; both are provided as aliases rather than separate engines.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .censoring import ThresholdSchedule, censor_all, distance

ALGORITHMS = ("cola", "dlm", "coca", "admm", "etsd")
DIVERGENCE_ACCURACY = 1e12
ETSD_STEP_EXPONENT = 2.0 / 3.0


class DivergenceError(RuntimeError):
    """A run produced non-finite iterates or blew past the accuracy cap."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class AlgoParams:
    """
    c : penalty parameter (COLA/DLM/COCA/ADMM).
    rho : linearization parameter (COLA/DLM).
    etsd_step : scale a of the ETSD step size a * (k+1)**(-2/3).
    """

    c: float = 1.0
    rho: float = 1.0
    etsd_step: float = 0.5

    def errors(self, algorithm):
        out = []
        if algorithm in ("cola", "dlm", "coca", "admm") and not self.c > 0:
            out.append("c must be > 0")
        if algorithm in ("cola", "dlm") and not self.rho > 0:
            out.append("rho must be > 0")
        if algorithm == "etsd" and not self.etsd_step > 0:
            out.append("etsd_step must be > 0")
        return out


@dataclass(frozen=True)
class AlgoState:
    x: np.ndarray
    mu: np.ndarray
    xhat: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, n, p):
        return cls(np.zeros((n, p)), np.zeros((n, p)), np.zeros((n, p)), 0)


@dataclass(frozen=True)
class RoundResult:
    state: AlgoState
    flags: np.ndarray

    @property
    def count(self):
        return int(np.count_nonzero(self.flags))


@lru_cache(maxsize=32)
def metropolis_weights(net):
    """Mixing matrix with w_ij = 1 / (1 + max(d_i, d_j)) on edges."""
    d = net.degrees
    W = np.zeros((net.n, net.n))
    for i, j in net.arcs:
        W[i, j] = 1.0 / (1.0 + max(d[i], d[j]))
    W[np.diag_indices(net.n)] = 1.0 - W.sum(axis=1)
    return W


def cola_round(state, inc, problem, params, tau_next):
    """One synchronous COLA round: primal step, censoring, dual step."""
    d = inc.net.degrees
    lap = inc.L_o_node
    c, rho = params.c, params.rho
    grad = problem.gradients(state.x)
    x_new = state.x - (grad + c * (lap @ state.xhat) + state.mu) / (2.0 * c * d + rho)[:, None]
    xhat_new, flags, _ = censor_all(state.xhat, x_new, tau_next)
    mu_new = state.mu + c * (lap @ xhat_new)
    return RoundResult(AlgoState(x_new, mu_new, xhat_new, state.k + 1), flags)


def solve_admm_subproblem(problem, i, linear_term, quad_coeff, tol=1e-8, x0=None):
    """Minimizer of f_i(x) + <linear_term, x> + quad_coeff * ||x||^2 for node i."""
    if not quad_coeff > 0:
        raise ValueError("quad_coeff must be > 0")
    linear = np.zeros((problem.n, problem.p))
    linear[i] = linear_term
    quad = np.ones(problem.n)
    quad[i] = quad_coeff
    start = None
    if x0 is not None:
        start = np.zeros((problem.n, problem.p))
        start[i] = x0
    # only row i matters; the other rows solve ||x||^2, whose minimizer is 0
    return problem.solve_subproblems(linear, quad, tol, start)[i]


def coca_round(state, inc, problem, params, tau_next, subproblem_tol=1e-8):
    """
    One COCA round: exact ADMM primal subproblem on the broadcast states,
    then censoring and the dual step. The inner solve is warm-started at x^k.
    """
    d = inc.net.degrees
    c = params.c
    linear = state.mu - c * (inc.L_u_node @ state.xhat)
    x_new = problem.solve_subproblems(linear, c * d, subproblem_tol, state.x)
    xhat_new, flags, _ = censor_all(state.xhat, x_new, tau_next)
    mu_new = state.mu + c * (inc.L_o_node @ xhat_new)
    return RoundResult(AlgoState(x_new, mu_new, xhat_new, state.k + 1), flags)


def etsd_step_size(params, k):
    return params.etsd_step * (k + 1.0) ** (-ETSD_STEP_EXPONENT)


def etsd_round(state, inc, problem, params, tau_next):
    """Event-triggered sub-gradient round with Metropolis mixing of the broadcast states."""
    W = metropolis_weights(inc.net)
    x_new = W @ state.xhat - etsd_step_size(params, state.k) * problem.gradients(state.x)
    xhat_new, flags, _ = censor_all(state.xhat, x_new, tau_next)
    return RoundResult(AlgoState(x_new, state.mu, xhat_new, state.k + 1), flags)


@dataclass
class RunTrace:
    """
    Per-iteration record of one run. Index k of every list refers to iterate k;
    row 0 is the initial point (accuracy 1, no broadcasts).
    """

    algorithm: str
    label: str
    n: int
    accuracy: list = field(default_factory=list)
    broadcasts: list = field(default_factory=list)
    cum_broadcasts: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    censor_gap: list = field(default_factory=list)
    dual_sum: list = field(default_factory=list)
    mu_norm: list = field(default_factory=list)
    energy: list | None = None
    r_grad: list | None = None
    r_cons: list | None = None
    flags: list = field(default_factory=list)
    final_state: AlgoState | None = None
    meta: dict = field(default_factory=dict)

    @property
    def iterations(self):
        return len(self.accuracy) - 1

    def pattern(self):
        """Broadcast flags as a (K, n) 0/1 integer array, rows k = 1..K."""
        if not self.flags:
            return np.zeros((0, self.n), dtype=int)
        return np.asarray(self.flags, dtype=int)

    def first_reaching(self, target):
        """Index of the first iterate with accuracy <= target, or None."""
        hits = np.flatnonzero(np.asarray(self.accuracy) <= target)
        return int(hits[0]) if hits.size else None

    def to_target(self, target):
        """(iterations, cumulative broadcasts, wall ms) to reach ``target``."""
        k = self.first_reaching(target)
        if k is None:
            return None
        return k, self.cum_broadcasts[k], self.wall_ms[k]


def resolve(algorithm, schedule):
    """Map an algorithm name to (engine kind, effective schedule)."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    if algorithm == "dlm":
        return "cola", ThresholdSchedule("zero")
    if algorithm == "admm":
        return "coca", ThresholdSchedule("zero")
    return algorithm, schedule if schedule is not None else ThresholdSchedule("zero")


def run(algorithm, inc, problem, params, schedule, xstar, max_iter, target_accuracy=None,
        diagnostics=None, subproblem_tol=1e-8, label=None, on_round=None,
        accounting="broadcast"):
    """
    Iterate an engine from the zero state.

    Parameters
    ----------
    algorithm : {"cola", "dlm", "coca", "admm", "etsd"}
    inc : graph.IncidenceSet
    problem : LeastSquaresProblem or LogisticProblem
    params : AlgoParams
    schedule : ThresholdSchedule or None
        Ignored for "dlm" and "admm", which always use the zero schedule.
    xstar : ndarray, shape (p,)
        Reference optimum for the accuracy metric.
    max_iter : int
    target_accuracy : float, optional
        Stop at the first iterate whose accuracy is at or below this value.
    diagnostics : analysis.Diagnostics, optional
        When given, energy and KKT residuals are recorded every iteration.
    on_round : callable, optional
        Called as ``on_round(k, state, flags)`` after every round.
    accounting : {"broadcast", "edge"}
        "broadcast" counts one message per transmitting node; "edge" counts
        one per (transmitting node, neighbor) pair.

    Returns
    -------
    RunTrace
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    kind, sched = resolve(algorithm, schedule)
    if accounting not in ("broadcast", "edge"):
        raise ValueError(f"unknown accounting {accounting!r}")
    errs = params.errors(algorithm)
    if errs:
        raise ValueError("; ".join(errs))

    n, p = problem.n, problem.p
    if inc.net.n != n:
        raise ValueError(f"network has {inc.net.n} nodes but problem has {n}")
    xs = np.broadcast_to(np.asarray(xstar, dtype=float), (n, p))
    denom = float(np.sum(xs * xs))
    if denom == 0.0:
        raise ValueError("accuracy metric undefined: x* = x^0 = 0")

    trace = RunTrace(algorithm, label or algorithm, n)
    trace.meta.update(schedule=sched.describe(), c=params.c, rho=params.rho,
                      etsd_step=params.etsd_step, accounting=accounting)
    weight = inc.net.degrees if accounting == "edge" else None
    if diagnostics is not None:
        trace.energy, trace.r_grad, trace.r_cons = [], [], []

    state = AlgoState.zeros(n, p)
    elapsed = 0.0
    cum = 0

    def record(st, count):
        err = st.x - xs
        trace.accuracy.append(float(np.sum(err * err)) / denom)
        trace.broadcasts.append(count)
        trace.cum_broadcasts.append(cum)
        trace.wall_ms.append(elapsed * 1e3)
        trace.tau.append(sched(st.k))
        trace.censor_gap.append(float(np.max(distance(st.xhat, st.x))))
        trace.dual_sum.append(float(np.linalg.norm(st.mu.sum(axis=0))))
        trace.mu_norm.append(float(np.linalg.norm(st.mu)))
        if diagnostics is not None:
            trace.energy.append(diagnostics.energy(st.x, st.mu).V)
            rg, rc = diagnostics.kkt(st.x, st.mu)
            trace.r_grad.append(rg)
            trace.r_cons.append(rc)

    record(state, 0)
    for k in range(max_iter):
        if target_accuracy is not None and trace.accuracy[-1] <= target_accuracy:
            break
        tau_next = sched(k + 1)
        t0 = time.perf_counter()
        if kind == "cola":
            res = cola_round(state, inc, problem, params, tau_next)
        elif kind == "coca":
            res = coca_round(state, inc, problem, params, tau_next, subproblem_tol)
        else:
            res = etsd_round(state, inc, problem, params, tau_next)
        elapsed += time.perf_counter() - t0
        state = res.state
        count = res.count if weight is None else int(weight[res.flags].sum())
        cum += count
        trace.flags.append(res.flags)
        if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.mu))):
            trace.final_state = state
            raise DivergenceError(f"{trace.label}: non-finite iterate at k={state.k}", trace)
        record(state, count)
        if on_round is not None:
            on_round(state.k, state, res.flags)
        if trace.accuracy[-1] > DIVERGENCE_ACCURACY:
            trace.final_state = state
            raise DivergenceError(
                f"{trace.label}: accuracy {trace.accuracy[-1]:.3g} exceeds "
                f"{DIVERGENCE_ACCURACY:g} at k={state.k}", trace)
    trace.final_state = state
    return trace
