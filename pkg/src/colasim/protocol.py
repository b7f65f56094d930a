"""
Node-level message-passing simulation of COLA.

Every node keeps its own copies of the broadcast states it knows about
(its own and its neighbors'), and communicates only through per-round
inboxes. A round runs in four phases, each over all nodes in a caller-chosen
order: primal step from the round-k snapshot, censor and send, receive, dual
step. No phase reads anything written by the same phase, so the node order
has no effect on the result.

This is slower than ``algorithms.cola_round`` and exists to check it: the two
agree to rounding, and the per-node copies of every broadcast state are
verified to agree after each round.
"""

from __future__ import annotations

import numpy as np

from .censoring import censor_decide


class ProtocolError(RuntimeError):
    """Copies of a broadcast state disagree between neighbors."""


class Node:
    def __init__(self, index, neighbors, p):
        self.index = index
        self.neighbors = tuple(neighbors)
        self.x = np.zeros(p)
        self.mu = np.zeros(p)
        # known broadcast states: own and every neighbor's
        self.xhat = {j: np.zeros(p) for j in (index, *self.neighbors)}
        self.inbox = {}
        self._candidate = None

    @property
    def degree(self):
        return len(self.neighbors)

    def _disagreement(self):
        own = self.xhat[self.index]
        total = np.zeros_like(own)
        for j in self.neighbors:
            total = total + (own - self.xhat[j])
        return total

    def compute_primal(self, problem, c, rho):
        step = 1.0 / (2.0 * c * self.degree + rho)
        grad = problem.gradient(self.index, self.x)
        self._candidate = self.x - step * (grad + c * self._disagreement() + self.mu)

    def censor_and_send(self, nodes, tau):
        out = censor_decide(self.xhat[self.index], self._candidate, tau)
        self.x = self._candidate
        self._candidate = None
        if out.transmit:
            self.xhat[self.index] = out.xhat_new
            for j in self.neighbors:
                nodes[j].inbox[self.index] = out.xhat_new.copy()
        return out.transmit

    def receive(self):
        for j, value in self.inbox.items():
            self.xhat[j] = value
        self.inbox = {}

    def update_dual(self, c):
        self.mu = self.mu + c * self._disagreement()


class MessagePassingCOLA:
    """
    COLA executed node by node.

    Parameters
    ----------
    net : graph.Network
    problem : problem instance with per-node ``gradient``
    params : algorithms.AlgoParams
    schedule : censoring.ThresholdSchedule
    """

    def __init__(self, net, problem, params, schedule):
        self.net = net
        self.problem = problem
        self.params = params
        self.schedule = schedule
        self.nodes = [Node(i, net.neighbors[i], problem.p) for i in range(net.n)]
        self.k = 0

    def round(self, order=None):
        """Run one synchronous round; returns the broadcast flags by node."""
        order = range(self.net.n) if order is None else order
        c, rho = self.params.c, self.params.rho
        tau = self.schedule(self.k + 1)
        flags = np.zeros(self.net.n, dtype=bool)
        for i in order:
            self.nodes[i].compute_primal(self.problem, c, rho)
        for i in order:
            flags[i] = self.nodes[i].censor_and_send(self.nodes, tau)
        for i in order:
            self.nodes[i].receive()
        for i in order:
            self.nodes[i].update_dual(c)
        self.k += 1
        self.check_consistency()
        return flags

    def check_consistency(self):
        for node in self.nodes:
            own = node.xhat[node.index]
            for j in node.neighbors:
                if not np.array_equal(self.nodes[j].xhat[node.index], own):
                    raise ProtocolError(
                        f"node {j} holds a stale copy of node {node.index}'s state at k={self.k}"
                    )

    def stacked(self):
        """(x, mu, xhat) as node-major (n, p) arrays."""
        x = np.array([nd.x for nd in self.nodes])
        mu = np.array([nd.mu for nd in self.nodes])
        xhat = np.array([nd.xhat[nd.index] for nd in self.nodes])
        return x, mu, xhat
