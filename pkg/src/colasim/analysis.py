"""
Convergence diagnostics: dual recovery, energy, KKT residuals, parameter
checks and empirical rate fits.

The energy of an iterate (x, mu) is

    V = (rho/2) ||x - x*||^2 + c ||z - z*||^2 + (1/c) ||phi - phi*||^2

with z = G_u x / 2 and phi the minimum-norm solution of G_o^T phi = mu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PHI_RCOND = 1e-9
PHI_RESIDUAL_TOL = 1e-8
MIN_FIT_POINTS = 10
SUBLINEAR_Q_OFFSET = 0.75


class AssumptionViolation(RuntimeError):
    """A dual vector left the column space of G_o^T."""


def phi_operator(inc):
    """Pseudo-inverse of the node-level G_o^T (m x n), with rank cutoff 1e-9 * sigma_max."""
    return np.linalg.pinv(inc.G_o_node.T, rcond=PHI_RCOND)


def recover_phi(mu, inc, pinv=None):
    """
    Minimum-norm phi with G_o^T phi = mu.

    ``mu`` is node-major, either (n, p) or flat (n p,). The result has the
    matching arc-major shape. Raises AssumptionViolation when mu is not in
    the range of G_o^T (its blocks do not sum to zero).
    """
    mu = np.asarray(mu, dtype=float)
    flat = mu.ndim == 1
    M = mu.reshape(inc.net.n, inc.p)
    if pinv is None:
        pinv = phi_operator(inc)
    phi = pinv @ M
    resid = np.linalg.norm(inc.G_o_node.T @ phi - M)
    if resid > PHI_RESIDUAL_TOL * (1.0 + np.linalg.norm(M)):
        raise AssumptionViolation(
            f"mu is not in the column space of G_o^T (residual {resid:.3e})"
        )
    return phi.ravel() if flat else phi


@dataclass(frozen=True)
class EnergyReport:
    V: float
    primal: float
    auxiliary: float
    dual: float


def kkt_residuals(x, mu, problem, inc):
    """(||grad f(x) + mu||, ||G_o x||) for node-major x and mu."""
    X = np.asarray(x, dtype=float).reshape(problem.n, problem.p)
    M = np.asarray(mu, dtype=float).reshape(problem.n, problem.p)
    r_grad = float(np.linalg.norm(problem.gradients(X) + M))
    r_cons = float(np.linalg.norm(inc.G_o_node @ X))
    return r_grad, r_cons


class Diagnostics:
    """
    Energy and KKT evaluator bound to one problem instance.

    phi* is the minimum-norm solution of G_o^T phi* = -grad f(x*), which is
    the multiplier lying in the column space of G_o.
    """

    def __init__(self, inc, problem, xstar, c, rho):
        self.inc = inc
        self.problem = problem
        self.c = c
        self.rho = rho
        n, p = problem.n, problem.p
        self.xstar = np.broadcast_to(np.asarray(xstar, dtype=float), (n, p)).copy()
        self.pinv = phi_operator(inc)
        self.zstar = 0.5 * inc.G_u_node @ self.xstar
        self.phistar = recover_phi(-problem.gradients(self.xstar), inc, self.pinv)

    def energy(self, x, mu):
        X = np.asarray(x, dtype=float).reshape(self.xstar.shape)
        dx = X - self.xstar
        dz = 0.5 * self.inc.G_u_node @ X - self.zstar
        dphi = recover_phi(mu, self.inc, self.pinv).reshape(self.phistar.shape) - self.phistar
        primal = 0.5 * self.rho * float(np.sum(dx * dx))
        aux = self.c * float(np.sum(dz * dz))
        dual = float(np.sum(dphi * dphi)) / self.c
        return EnergyReport(primal + aux + dual, primal, aux, dual)

    def kkt(self, x, mu):
        return kkt_residuals(x, mu, self.problem, self.inc)


def energy(x, mu, xstar, inc, problem, c, rho):
    return Diagnostics(inc, problem, xstar, c, rho).energy(x, mu)


def delta_bound(kappa_f, kappa_G, beta):
    """Upper bound on the linear-rate constant delta under the recommended c and rho."""
    if not kappa_f >= 1:
        raise ValueError(f"kappa_f must be >= 1, got {kappa_f}")
    if not kappa_G > 0:
        raise ValueError(f"kappa_G must be > 0, got {kappa_G}")
    if not 0 < beta < 1:
        raise ValueError(f"beta must be in (0,1), got {beta}")
    kf, kg = kappa_f, kappa_G
    return min(
        1.0 / (8.0 * kg ** 2),
        1.0 / (2.0 * kf ** 2 + 16.0 * kf * kg),
        kf / (12.0 * kg + 6.0 * kf ** 2 * kg),
        1.0 / beta ** 2 - 1.0,
    )


@dataclass(frozen=True)
class ParamReport:
    thm1_ok: bool
    thm2_ok: bool
    schedule_summable: bool
    delta_bound: float | None
    recommended_c: float
    recommended_rho: float
    thm1_lhs: float
    thm1_rhs: float
    thm2_rhs: float

    def lines(self):
        d = "n/a" if self.delta_bound is None else f"{self.delta_bound:.6g}"
        return [
            f"convergence condition  c*lambda_min(L_u)+rho = {self.thm1_lhs:.6g} > M/2 = {self.thm1_rhs:.6g}: {self.thm1_ok}",
            f"linear-rate condition  rho > M^2/(2m) = {self.thm2_rhs:.6g}: {self.thm2_ok}",
            f"threshold summable: {self.schedule_summable}",
            f"delta bound (recommended c, rho): {d}",
            f"recommended c = {self.recommended_c:.6g}, rho = {self.recommended_rho:.6g}",
        ]


def validate_params(c, rho, constants, spec, schedule=None):
    """Check (c, rho, schedule) against the convergence and linear-rate conditions."""
    M, m = constants.M, constants.m
    lhs = c * spec.lambda_min_Lu + rho
    thm2_rhs = M ** 2 / (2.0 * m) if m > 0 else math.inf
    delta = None
    beta = getattr(schedule, "beta", None)
    if m > 0 and schedule is not None and schedule.kind == "linear" and 0 < beta < 1:
        delta = delta_bound(constants.kappa_f, spec.kappa_G, beta)
    return ParamReport(
        thm1_ok=bool(lhs > M / 2.0),
        thm2_ok=bool(m > 0 and rho > thm2_rhs),
        schedule_summable=True if schedule is None else bool(schedule.summable),
        delta_bound=delta,
        recommended_c=8.0 * M / (spec.sigma_max_Gu * spec.sigma_min_nz_Go),
        recommended_rho=M * constants.kappa_f,
        thm1_lhs=lhs,
        thm1_rhs=M / 2.0,
        thm2_rhs=thm2_rhs,
    )


def fit_rate(trace, window=None):
    """
    Least-squares fit of ln(accuracy) against k.

    Parameters
    ----------
    trace : RunTrace or sequence of float
    window : (start, stop), optional
        Half-open iteration range; defaults to the whole trace.

    Returns
    -------
    slope : float
        Nats per iteration.
    r_squared : float
        Coefficient of determination (1 for an exactly constant series).
    """
    acc = np.asarray(getattr(trace, "accuracy", trace), dtype=float)
    start, stop = window if window is not None else (0, acc.size)
    k = np.arange(start, min(stop, acc.size))
    if k.size < MIN_FIT_POINTS:
        raise ValueError(f"window has {k.size} points; need at least {MIN_FIT_POINTS}")
    y = acc[k]
    if np.any(y <= 0):
        raise ValueError("accuracy must be positive on the fit window")
    y = np.log(y)
    slope, intercept = np.polyfit(k, y, 1)
    resid = y - (slope * k + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return float(slope), r2


def theta(tau_k, tau0, c, n, sigma_max_Go):
    s2 = sigma_max_Go ** 2
    return 5.0 * c * n * s2 * tau0 * tau_k + 0.5 * c * n * s2 * tau_k ** 2


def energy_step_bound(V_k, tau_k, tau0, c, n, sigma_max_Go):
    """Upper bound on V^{k+1} from V^k: (1 + tau^k / (2 tau^0)) V^k + theta^k."""
    if tau0 == 0.0:
        # no censoring: the bound reduces to V^{k+1} <= V^k
        return V_k
    return (1.0 + tau_k / (2.0 * tau0)) * V_k + theta(tau_k, tau0, c, n, sigma_max_Go)


def energy_violations(trace, c, sigma_max_Go, slack=1e-8):
    """
    Rounds k where V^{k+1} exceeds the one-step bound by more than
    ``slack * (1 + V^k)``. Returns a list of (k, excess).
    """
    V = trace.energy
    tau = trace.tau
    bad = []
    for k in range(len(V) - 1):
        bound = energy_step_bound(V[k], tau[k], tau[0], c, trace.n, sigma_max_Go)
        excess = V[k + 1] - bound
        if excess > slack * (1.0 + V[k]):
            bad.append((k, excess))
    return bad


def linear_envelope(energies, delta, burn_in):
    """
    Calibrate V_fit = max_{k <= burn_in} V^k (1+delta)^k and report the
    largest ratio V^k / (V_fit (1+delta)^-k) over k > burn_in.
    A ratio <= 1 means the envelope holds.
    """
    V = np.asarray(energies, dtype=float)
    k = np.arange(V.size)
    scale = (1.0 + delta) ** k
    v_fit = float(np.max(V[: burn_in + 1] * scale[: burn_in + 1]))
    tail = V[burn_in + 1:] * scale[burn_in + 1:]
    worst = float(np.max(tail) / v_fit) if tail.size else 0.0
    return v_fit, worst


def sublinear_envelope(accuracy, r, k0):
    """
    Envelope accuracy^k <= C k^-q for k >= k0 with q = r - 0.75, C calibrated
    at k0. Returns (q, C, worst ratio over k > k0).
    """
    acc = np.asarray(accuracy, dtype=float)
    q = r - SUBLINEAR_Q_OFFSET
    if k0 < 1:
        raise ValueError("k0 must be >= 1")
    C = float(acc[k0] * k0 ** q)
    k = np.arange(k0 + 1, acc.size)
    worst = float(np.max(acc[k] * k ** q / C)) if k.size else 0.0
    return q, C, worst
