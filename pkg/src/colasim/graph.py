"""
Network topologies, block incidence matrices and spectral constants.

Nodes are indexed from 0 internally. Every undirected edge {i, j} is stored
as the two arcs (i, j) and (j, i); arcs are kept in lexicographic order,
which fixes the row layout of every incidence matrix built from a network.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np

TOPOLOGIES = ("line", "star", "complete", "random")

MAX_CONNECT_ATTEMPTS = 10_000


class TopologyError(ValueError):
    """Raised when a requested topology cannot be built."""


@dataclass(frozen=True)
class Network:
    """
    Bidirectionally connected network.

    Attributes
    ----------
    n : int
        Number of nodes.
    arcs : tuple of (int, int)
        Directed arcs in lexicographic order, both directions of every edge.
    neighbors : tuple of tuple of int
        Sorted neighbor list of every node.
    """

    n: int
    arcs: tuple
    neighbors: tuple = field(init=False, repr=False)

    def __post_init__(self):
        nbrs = [[] for _ in range(self.n)]
        seen = set()
        for i, j in self.arcs:
            if i == j:
                raise TopologyError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"arc ({i}, {j}) out of range for n={self.n}")
            if (i, j) in seen:
                raise TopologyError(f"duplicate arc ({i}, {j})")
            seen.add((i, j))
            nbrs[i].append(j)
        for i, j in self.arcs:
            if (j, i) not in seen:
                raise TopologyError(f"arc ({i}, {j}) has no reverse arc")
        object.__setattr__(self, "neighbors", tuple(tuple(sorted(v)) for v in nbrs))
        if not is_connected(self.n, self.neighbors):
            raise TopologyError("network is not connected")

    @classmethod
    def from_edges(cls, n, edges):
        """Build a network from undirected edges given as (i, j) pairs."""
        arcs = set()
        for i, j in edges:
            arcs.add((int(i), int(j)))
            arcs.add((int(j), int(i)))
        return cls(n, tuple(sorted(arcs)))

    @property
    def m(self):
        """Number of directed arcs."""
        return len(self.arcs)

    @cached_property
    def degrees(self):
        d = np.array([len(v) for v in self.neighbors], dtype=float)
        d.setflags(write=False)
        return d

    @property
    def edges(self):
        """Undirected edges (i, j) with i < j."""
        return tuple((i, j) for i, j in self.arcs if i < j)

    def adjacency(self):
        adj = np.zeros((self.n, self.n))
        for i, j in self.arcs:
            adj[i, j] = 1.0
        return adj


def is_connected(n, neighbors):
    """Breadth-first connectivity check."""
    if n == 0:
        return False
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in neighbors[i]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == n


def random_edge_count(n, edge_fraction):
    """Number of undirected edges drawn for a random topology."""
    total = n * (n - 1) // 2
    # rounding guards against 0.1 * 1230 = 123.00000000000001 style ceilings
    return math.ceil(round(edge_fraction * total, 9))


def build_topology(kind, n, edge_fraction=None, seed=0):
    """
    Build one of the supported topologies.

    Parameters
    ----------
    kind : {"line", "star", "complete", "random"}
        Topology family. Node 0 is the hub of a star.
    n : int
        Number of nodes, at least 2.
    edge_fraction : float, optional
        Fraction of all n(n-1)/2 possible edges kept by a random topology.
        Required for (and only for) ``kind="random"``.
    seed : int
        Seed of the PCG64 generator (``numpy.random.default_rng``) used by the
        random topology. Candidate edge sets are redrawn until connected.

    Returns
    -------
    Network
    """
    if kind not in TOPOLOGIES:
        raise TopologyError(f"unknown topology {kind!r}; expected one of {TOPOLOGIES}")
    if n < 2:
        raise TopologyError(f"n must be >= 2, got {n}")
    if kind != "random" and edge_fraction is not None:
        raise TopologyError(f"edge_fraction is only valid for random topologies, not {kind!r}")

    if kind == "line":
        edges = [(i, i + 1) for i in range(n - 1)]
    elif kind == "star":
        edges = [(0, i) for i in range(1, n)]
    elif kind == "complete":
        edges = list(combinations(range(n), 2))
    else:
        edges = _random_edges(n, edge_fraction, seed)
    return Network.from_edges(n, edges)


def _random_edges(n, edge_fraction, seed):
    if edge_fraction is None:
        raise TopologyError("random topology requires edge_fraction")
    if not 0.0 < edge_fraction <= 1.0:
        raise TopologyError(f"edge_fraction must be in (0, 1], got {edge_fraction}")
    count = random_edge_count(n, edge_fraction)
    if count < n - 1:
        raise TopologyError(
            f"edge_fraction={edge_fraction} gives {count} edges for n={n}; "
            f"a connected graph needs at least {n - 1}"
        )
    pairs = list(combinations(range(n), 2))
    rng = np.random.default_rng(seed)
    for _ in range(MAX_CONNECT_ATTEMPTS):
        picked = np.sort(rng.choice(len(pairs), size=count, replace=False))
        edges = [pairs[e] for e in picked]
        nbrs = [[] for _ in range(n)]
        for i, j in edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        if is_connected(n, nbrs):
            return edges
    raise TopologyError(
        f"no connected sample with {count} edges after {MAX_CONNECT_ATTEMPTS} attempts"
    )


@dataclass(frozen=True)
class IncidenceSet:
    """
    Block arc matrices of a network for variables of dimension p.

    The ``*_node`` attributes are the p = 1 versions; the block matrices equal
    ``kron(M_node, I_p)``. Stacked vectors are node-major, so a block matrix
    applied to ``X.ravel()`` for ``X`` of shape (n, p) equals
    ``(M_node @ X).ravel()``.
    """

    net: Network
    p: int
    A_s: np.ndarray
    A_d: np.ndarray
    G_o: np.ndarray
    G_u: np.ndarray
    L_o: np.ndarray
    L_u: np.ndarray
    D: np.ndarray
    G_o_node: np.ndarray
    G_u_node: np.ndarray
    L_o_node: np.ndarray
    L_u_node: np.ndarray


def incidence_set(net, p=1):
    """Build A_s, A_d, G_o, G_u, L_o, L_u and D for ``net``."""
    src = np.zeros((net.m, net.n))
    dst = np.zeros((net.m, net.n))
    for e, (i, j) in enumerate(net.arcs):
        src[e, i] = 1.0
        dst[e, j] = 1.0
    G_o = src - dst
    G_u = src + dst
    L_o = 0.5 * G_o.T @ G_o
    L_u = 0.5 * G_u.T @ G_u

    eye = np.eye(p)
    A_s = np.kron(src, eye)
    A_d = np.kron(dst, eye)
    G_o_b = A_s - A_d
    G_u_b = A_s + A_d
    L_o_b = 0.5 * G_o_b.T @ G_o_b
    L_u_b = 0.5 * G_u_b.T @ G_u_b
    return IncidenceSet(
        net=net, p=p,
        A_s=A_s, A_d=A_d, G_o=G_o_b, G_u=G_u_b,
        L_o=L_o_b, L_u=L_u_b, D=0.5 * (L_o_b + L_u_b),
        G_o_node=G_o, G_u_node=G_u, L_o_node=L_o, L_u_node=L_u,
    )


@dataclass(frozen=True)
class SpectralInfo:
    lambda_min_Lu: float
    sigma_max_Gu: float
    sigma_max_Go: float
    sigma_min_nz_Go: float

    @property
    def kappa_G(self):
        return self.sigma_max_Gu / self.sigma_min_nz_Go


def spectral_info(inc):
    """
    Spectral constants of an incidence set.

    lambda_min(L_u) comes from a dense symmetric eigensolver; singular values
    of G_o and G_u from a dense SVD. Squaring first would put eigenvalue noise
    of order eps * sigma_max**2 on the zero singular values, i.e. about
    1e-8 * sigma_max after the square root, above the nonzero cutoff of
    1e-9 * sigma_max.
    """
    lu = np.linalg.eigvalsh(inc.L_u)
    go = np.linalg.svd(inc.G_o, compute_uv=False)
    gu = np.linalg.svd(inc.G_u, compute_uv=False)
    sigma_max_go = float(go[0])
    nz = go[go > 1e-9 * sigma_max_go]
    if sigma_max_go <= 0.0 or nz.size == 0:
        raise TopologyError("G_o has no nonzero singular value; graph is empty or disconnected")
    return SpectralInfo(
        lambda_min_Lu=max(float(lu[0]), 0.0),
        sigma_max_Gu=float(gu[0]),
        sigma_max_Go=sigma_max_go,
        sigma_min_nz_Go=float(nz[-1]),
    )


def dump_matrices(inc, directory):
    """Write every block matrix of ``inc`` as CSV into ``directory``."""
    from pathlib import Path

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("A_s", "A_d", "G_o", "G_u", "L_o", "L_u", "D"):
        np.savetxt(out / f"{name}.csv", getattr(inc, name), delimiter=",", fmt="%.17g")
