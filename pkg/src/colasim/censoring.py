"""Censoring thresholds and the transmit/suppress rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEDULE_KINDS = ("linear", "sublinear", "zero")


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdSchedule:
    """
    Censoring threshold sequence tau^k.

    linear: alpha * beta**k; sublinear: alpha * k**(-r) for k >= 1 and alpha
    at k = 0; zero: 0 for every k (no censoring).
    """

    kind: str = "zero"
    alpha: float = 0.0
    beta: float | None = None
    r: float | None = None

    def __post_init__(self):
        errors = schedule_errors(self.kind, self.alpha, self.beta, self.r)
        if errors:
            raise ScheduleError("; ".join(errors))

    def __call__(self, k):
        return threshold_at(self, k)

    @property
    def summable(self):
        # every admissible parameterization of the three kinds is summable
        return True

    def describe(self):
        if self.kind == "linear":
            return f"linear(alpha={self.alpha:g}, beta={self.beta:g})"
        if self.kind == "sublinear":
            return f"sublinear(alpha={self.alpha:g}, r={self.r:g})"
        return "zero"


def schedule_errors(kind, alpha, beta=None, r=None):
    """List every domain violation of a schedule parameterization."""
    errors = []
    if kind not in SCHEDULE_KINDS:
        return [f"censor.kind must be one of {SCHEDULE_KINDS}, got {kind!r}"]
    if alpha is None or not np.isfinite(alpha) or alpha < 0:
        errors.append("alpha must be a finite number >= 0")
    if kind == "linear":
        if beta is None or not 0.0 < beta < 1.0:
            errors.append("beta must be in (0,1)")
    elif beta is not None:
        errors.append(f"beta is not a parameter of the {kind} schedule")
    if kind == "sublinear":
        if r is None or not r > 1.0:
            errors.append("r must be > 1")
    elif r is not None:
        errors.append(f"r is not a parameter of the {kind} schedule")
    return errors


def threshold_at(sched, k):
    if k < 0:
        raise ScheduleError(f"iteration index must be >= 0, got {k}")
    if sched.kind == "linear":
        return sched.alpha * sched.beta ** k
    if sched.kind == "sublinear":
        return sched.alpha if k == 0 else sched.alpha * float(k) ** (-sched.r)
    return 0.0


@dataclass(frozen=True)
class CensorOutcome:
    transmit: bool
    xhat_new: np.ndarray
    xi: float


def distance(a, b):
    """
    Euclidean distance along the last axis.

    One formula for the scalar and batched rules, so both make the same
    decision at exact ties (``np.linalg.norm`` of a vector and of matrix rows
    can differ in the last bit).
    """
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return np.sqrt(np.sum(d * d, axis=-1))


def censor_decide(xhat_prev, x_candidate, tau):
    """Transmit iff ||xhat_prev - x_candidate|| >= tau; ties transmit."""
    xhat_prev = np.asarray(xhat_prev, dtype=float)
    x_candidate = np.asarray(x_candidate, dtype=float)
    if xhat_prev.shape != x_candidate.shape:
        raise ValueError(f"dimension mismatch: {xhat_prev.shape} vs {x_candidate.shape}")
    xi = float(distance(xhat_prev, x_candidate))
    transmit = xi >= tau
    return CensorOutcome(transmit, x_candidate.copy() if transmit else xhat_prev.copy(), xi)


def censor_all(xhat_prev, x_new, tau):
    """
    Apply the censoring rule to every node at once.

    Returns the new state array, the boolean transmit flags and the
    distances xi, all indexed by node (rows).
    """
    xi = distance(xhat_prev, x_new)
    flags = xi >= tau
    return np.where(flags[:, None], x_new, xhat_prev), flags, xi
