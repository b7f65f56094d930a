"""
Local cost oracles for decentralized least squares and logistic regression.

Both problem classes expose per-node oracles (``value``, ``gradient``) and
batched ones over a node-major array ``X`` of shape (n, p), which the round
engines use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

SUBPROBLEM_MAX_STEPS = 100_000
CENTRALIZED_MAX_STEPS = 10_000_000
SINGULAR_COND = 1e12


class ProblemError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """An inner iterative solve hit its step cap."""


@dataclass(frozen=True)
class ProblemConstants:
    M: float
    m: float

    @property
    def kappa_f(self):
        return self.M / self.m if self.m > 0 else math.inf


def _check_x(x, p):
    x = np.asarray(x, dtype=float)
    if x.shape != (p,):
        raise ProblemError(f"expected a vector of dimension {p}, got shape {x.shape}")
    return x


class LeastSquaresProblem:
    """
    f_i(x) = 0.5 * ||A_i x - y_i||^2.

    Parameters
    ----------
    A : ndarray, shape (n, p, p)
    y : ndarray, shape (n, p)
    latent : ndarray, shape (n, p), optional
        The vectors b_i used to generate ``y``, kept for reference.
    """

    kind = "ls"

    def __init__(self, A, y, latent=None):
        A = np.asarray(A, dtype=float)
        y = np.asarray(y, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2] or y.shape != A.shape[:2]:
            raise ProblemError(f"inconsistent shapes A{A.shape}, y{y.shape}")
        self.A = A
        self.y = y
        self.latent = latent
        self.gram = np.einsum("nki,nkj->nij", A, A)
        self.Aty = np.einsum("nki,nk->ni", A, y)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.A.shape[1]

    def value(self, i, x):
        x = _check_x(x, self.p)
        r = self.A[i] @ x - self.y[i]
        return 0.5 * float(r @ r)

    def gradient(self, i, x):
        x = _check_x(x, self.p)
        return self.A[i].T @ (self.A[i] @ x - self.y[i])

    def values(self, X):
        r = np.einsum("nij,nj->ni", self.A, X) - self.y
        return 0.5 * np.sum(r * r, axis=1)

    def gradients(self, X):
        return np.einsum("nij,nj->ni", self.gram, X) - self.Aty

    def total_gradient(self, x):
        return self.gram.sum(axis=0) @ x - self.Aty.sum(axis=0)

    def constants(self):
        eig = np.linalg.eigvalsh(self.gram)
        return ProblemConstants(M=float(eig[:, -1].max()), m=float(max(eig[:, 0].min(), 0.0)))

    def node_lipschitz(self):
        return np.linalg.eigvalsh(self.gram)[:, -1]

    def solve_subproblems(self, linear, quad, tol=1e-8, x0=None):
        """Minimize f_i(x) + <linear_i, x> + quad_i ||x||^2 for every node."""
        quad = np.broadcast_to(np.asarray(quad, dtype=float), (self.n,))
        H = self.gram + 2.0 * quad[:, None, None] * np.eye(self.p)
        return np.linalg.solve(H, (self.Aty - linear)[..., None])[..., 0]

    def solve_centralized(self, tol=1e-12, x0=None):
        H = self.gram.sum(axis=0)
        if np.linalg.cond(H) > SINGULAR_COND:
            raise ProblemError("normal matrix is singular beyond the 1e-12 conditioning cutoff")
        return np.linalg.solve(H, self.Aty.sum(axis=0))


class LogisticProblem:
    """
    f_i(x) = (1/l_i) sum_l ln(1 + exp(-y_il q_il^T x)).

    Parameters
    ----------
    Q : list of ndarray
        Per-node feature matrices of shape (p, l_i); column l is sample q_il.
    labels : list of ndarray
        Per-node label vectors with entries in {-1, +1}.
    """

    kind = "logistic"

    def __init__(self, Q, labels):
        if len(Q) != len(labels) or not Q:
            raise ProblemError("Q and labels must be non-empty and of equal length")
        self.Q = [np.asarray(q, dtype=float) for q in Q]
        self.labels = [np.asarray(lab, dtype=float) for lab in labels]
        p = self.Q[0].shape[0]
        for i, (q, lab) in enumerate(zip(self.Q, self.labels)):
            if q.ndim != 2 or q.shape[0] != p or q.shape[1] < 1:
                raise ProblemError(f"node {i}: Q must have shape ({p}, l_i) with l_i >= 1")
            if lab.shape != (q.shape[1],):
                raise ProblemError(f"node {i}: {q.shape[1]} samples but {lab.size} labels")
            if not np.all(np.isin(lab, (-1.0, 1.0))):
                raise ProblemError(f"node {i}: labels must be -1 or +1")

        counts = np.array([q.shape[1] for q in self.Q])
        lmax = counts.max()
        n = len(self.Q)
        # padded layout: zero weight on padding keeps batched sums exact
        self._S = np.zeros((n, lmax, p))
        self._Y = np.zeros((n, lmax))
        self._W = np.zeros((n, lmax))
        for i, (q, lab) in enumerate(zip(self.Q, self.labels)):
            li = q.shape[1]
            self._S[i, :li] = q.T
            self._Y[i, :li] = lab
            self._W[i, :li] = 1.0 / li
        self.counts = counts

    @property
    def n(self):
        return len(self.Q)

    @property
    def p(self):
        return self.Q[0].shape[0]

    def value(self, i, x):
        x = _check_x(x, self.p)
        t = self.labels[i] * (self.Q[i].T @ x)
        return float(np.mean(np.logaddexp(0.0, -t)))

    def gradient(self, i, x):
        x = _check_x(x, self.p)
        lab = self.labels[i]
        t = lab * (self.Q[i].T @ x)
        # exp(-t) / (1 + exp(-t)) evaluated without overflow
        return -(self.Q[i] @ (lab * expit(-t))) / lab.size

    def values(self, X):
        t = self._Y * np.einsum("nlp,np->nl", self._S, X)
        return np.sum(self._W * np.logaddexp(0.0, -t), axis=1)

    def gradients(self, X):
        t = self._Y * np.einsum("nlp,np->nl", self._S, X)
        s = self._W * self._Y * expit(-t)
        return -np.einsum("nl,nlp->np", s, self._S)

    def total_gradient(self, x):
        return self.gradients(np.broadcast_to(x, (self.n, self.p))).sum(axis=0)

    def node_lipschitz(self):
        return np.array([np.linalg.eigvalsh(q @ q.T)[-1] / (4.0 * q.shape[1]) for q in self.Q])

    def constants(self):
        return ProblemConstants(M=float(self.node_lipschitz().max()), m=0.0)

    def solve_subproblems(self, linear, quad, tol=1e-8, x0=None):
        """
        Gradient descent on f_i(x) + <linear_i, x> + quad_i ||x||^2.

        Node i uses step 1 / (M_i + 2 quad_i), M_i its own gradient Lipschitz
        constant. Iterates until every node's gradient norm is at most ``tol``.
        """
        quad = np.broadcast_to(np.asarray(quad, dtype=float), (self.n,))
        step = (1.0 / (self.node_lipschitz() + 2.0 * quad))[:, None]
        X = np.zeros_like(linear) if x0 is None else np.array(x0, dtype=float)
        for _ in range(SUBPROBLEM_MAX_STEPS):
            g = self.gradients(X) + linear + 2.0 * quad[:, None] * X
            if np.max(np.linalg.norm(g, axis=1)) <= tol:
                return X
            X = X - step * g
        raise ConvergenceError(f"subproblem gradient above {tol} after {SUBPROBLEM_MAX_STEPS} steps")

    def solve_centralized(self, tol=1e-12, x0=None):
        """Gradient descent on sum_i f_i with step 1/(n M), warm-started at ``x0``."""
        step = 1.0 / (self.n * self.constants().M)
        x = np.zeros(self.p) if x0 is None else np.array(x0, dtype=float)
        for _ in range(CENTRALIZED_MAX_STEPS):
            g = self.total_gradient(x)
            if np.linalg.norm(g) <= tol:
                return x
            x = x - step * g
        raise ConvergenceError(f"centralized gradient above {tol} after {CENTRALIZED_MAX_STEPS} steps")


def ls_generate(n, p, seed=0):
    """
    Least-squares instance with A_i and b_i entrywise uniform on [0, 1].

    ``y_i = A_i b_i``. Draws come from PCG64 (``numpy.random.default_rng``):
    all A_i first, then all b_i.
    """
    if n < 1 or p < 1:
        raise ProblemError("n and p must be positive")
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.0, 1.0, size=(n, p, p))
    b = rng.uniform(0.0, 1.0, size=(n, p))
    return LeastSquaresProblem(A, np.einsum("nij,nj->ni", A, b), latent=b)


def lr_generate(n, p, seed=0):
    """
    Logistic-regression instance.

    Node i holds l_i ~ U{1..10} samples; the first p-1 feature rows are drawn
    from {0.1, 0.2, ..., 1.0}, the last row is all ones, labels are uniform on
    {-1, +1}.
    """
    if p < 2:
        raise ProblemError("logistic problems need p >= 2 (the last feature is the constant 1)")
    rng = np.random.default_rng(seed)
    counts = rng.integers(1, 11, size=n)
    Q, labels = [], []
    for li in counts:
        feats = 0.1 * rng.integers(1, 11, size=(p - 1, li))
        Q.append(np.vstack([feats, np.ones((1, li))]))
        labels.append(rng.choice([-1.0, 1.0], size=li))
    return LogisticProblem(Q, labels)


def local_value(problem, i, x):
    return problem.value(i, x)


def local_gradient(problem, i, x):
    return problem.gradient(i, x)


def problem_constants(problem):
    return problem.constants()


def solve_centralized(problem, tolerance=1e-12, x0=None):
    """Minimizer of sum_i f_i; see the problem classes for the method used."""
    if tolerance <= 0:
        raise ProblemError("tolerance must be positive")
    return problem.solve_centralized(tolerance, x0)


def save_problem(problem, directory):
    """
    Write one CSV per node: the matrix rows (A_i or Q_i), then y_i or the labels.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(problem.n):
        if problem.kind == "ls":
            rows = np.vstack([problem.A[i], problem.y[i][None, :]])
        else:
            rows = np.vstack([problem.Q[i], problem.labels[i][None, :]])
        np.savetxt(out / f"{problem.kind}_node{i:04d}.csv", rows, delimiter=",", fmt="%.17g")


def load_problem(directory):
    src = Path(directory)
    for kind in ("ls", "logistic"):
        files = sorted(src.glob(f"{kind}_node*.csv"))
        if files:
            break
    else:
        raise ProblemError(f"no problem files in {src}")
    blocks = [np.loadtxt(f, delimiter=",", ndmin=2) for f in files]
    if kind == "ls":
        return LeastSquaresProblem([b[:-1] for b in blocks], [b[-1] for b in blocks])
    return LogisticProblem([b[:-1] for b in blocks], [b[-1] for b in blocks])
