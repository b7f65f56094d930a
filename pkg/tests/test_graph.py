import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colasim.graph import (
    Network,
    TopologyError,
    build_topology,
    dump_matrices,
    incidence_set,
    random_edge_count,
    spectral_info,
)


def test_line_three_nodes():
    net = build_topology("line", 3)
    assert net.arcs == ((0, 1), (1, 0), (1, 2), (2, 1))
    assert list(net.degrees) == [1, 2, 1]


def test_complete_four_nodes():
    net = build_topology("complete", 4)
    assert net.m == 12
    assert np.all(net.degrees == 3)


def test_star_hub_is_node_zero():
    net = build_topology("star", 5)
    assert net.degrees[0] == 4
    assert np.all(net.degrees[1:] == 1)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_random_fifty_nodes_ten_percent(seed):
    net = build_topology("random", 50, 0.1, seed=seed)
    assert len(net.edges) == 123
    assert net.m == 246


def test_random_edge_count_ceil():
    assert random_edge_count(50, 0.1) == 123
    assert random_edge_count(4, 0.5) == 3


def test_random_is_deterministic():
    a = build_topology("random", 30, 0.2, seed=11)
    b = build_topology("random", 30, 0.2, seed=11)
    c = build_topology("random", 30, 0.2, seed=12)
    assert a.arcs == b.arcs
    assert a.arcs != c.arcs


@pytest.mark.parametrize(
    "kwargs, match",
    [
        (dict(kind="line", n=1), "n must be"),
        (dict(kind="random", n=10, edge_fraction=0.1), "at least 9"),
        (dict(kind="random", n=10), "requires edge_fraction"),
        (dict(kind="random", n=10, edge_fraction=1.5), r"\(0, 1\]"),
        (dict(kind="line", n=4, edge_fraction=0.5), "only valid"),
        (dict(kind="ring", n=4), "unknown topology"),
    ],
)
def test_build_errors(kwargs, match):
    with pytest.raises(TopologyError, match=match):
        build_topology(**kwargs)


def test_network_validation():
    with pytest.raises(TopologyError, match="self-loop"):
        Network(2, ((0, 0),))
    with pytest.raises(TopologyError, match="reverse"):
        Network(2, ((0, 1),))
    with pytest.raises(TopologyError, match="not connected"):
        Network.from_edges(4, [(0, 1), (2, 3)])
    with pytest.raises(TopologyError, match="duplicate"):
        Network(2, ((0, 1), (0, 1), (1, 0)))


def test_three_node_line_matrices():
    # hand-built from the arcs (0,1), (1,0), (1,2), (2,1)
    inc = incidence_set(build_topology("line", 3), 1)
    src = np.array([[1, 0, 0], [0, 1, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    dst = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1], [0, 1, 0]], dtype=float)
    assert np.array_equal(inc.A_s, src)
    assert np.array_equal(inc.A_d, dst)
    assert np.array_equal(inc.L_o, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    assert np.array_equal(inc.L_u, [[1, 1, 0], [1, 2, 1], [0, 1, 1]])
    assert np.array_equal(inc.D, np.diag([1.0, 2.0, 1.0]))


def test_two_node_blocks():
    inc = incidence_set(build_topology("complete", 2), 2)
    assert inc.G_o.shape == (4, 4)
    I = np.eye(2)
    assert np.array_equal(inc.G_o, np.block([[I, -I], [-I, I]]))
    v = np.array([0.3, -1.7])
    assert np.array_equal(inc.G_o @ np.concatenate([v, v]), np.zeros(4))


@settings(max_examples=30, deadline=None)
@given(
    kind=st.sampled_from(["line", "star", "complete", "random"]),
    n=st.integers(2, 12),
    p=st.integers(1, 3),
    seed=st.integers(0, 2**32 - 1),
)
def test_matrix_identities(kind, n, p, seed):
    frac = 0.6 if kind == "random" else None
    if kind == "random" and random_edge_count(n, frac) < n - 1:
        return
    net = build_topology(kind, n, frac, seed)
    inc = incidence_set(net, p)
    assert np.abs(inc.L_o - 0.5 * inc.G_o.T @ inc.G_o).max() <= 1e-12
    assert np.abs(inc.L_u - 0.5 * inc.G_u.T @ inc.G_u).max() <= 1e-12
    assert np.abs(inc.D - 0.5 * (inc.L_o + inc.L_u)).max() <= 1e-12
    assert np.array_equal(inc.D, np.kron(np.diag(net.degrees), np.eye(p)))
    v = np.random.default_rng(seed).normal(size=p)
    assert np.abs(inc.G_o @ np.tile(v, n)).max() <= 1e-12
    for L in (inc.L_o, inc.L_u):
        assert np.array_equal(L, L.T)
        assert np.linalg.eigvalsh(L)[0] >= -1e-12
    # bidirectional, degrees match neighbor lists
    arcs = set(net.arcs)
    assert all((j, i) in arcs for i, j in arcs)
    assert [len(nb) for nb in net.neighbors] == list(net.degrees)


def test_spectral_line_and_complete():
    # P3 signless Laplacian has eigenvalues {0, 1, 3}
    s = spectral_info(incidence_set(build_topology("line", 3), 1))
    assert s.lambda_min_Lu == pytest.approx(0.0, abs=1e-12)
    # K3 signless Laplacian [[2,1,1],[1,2,1],[1,1,2]] has eigenvalues {1, 1, 4}
    s = spectral_info(incidence_set(build_topology("complete", 3), 1))
    assert s.lambda_min_Lu == pytest.approx(1.0, abs=1e-12)
    assert s.sigma_max_Gu == pytest.approx(np.sqrt(8.0), abs=1e-12)


@pytest.mark.parametrize("kind", ["line", "star", "complete"])
def test_sigma_max_go_matches_lo(kind):
    inc = incidence_set(build_topology(kind, 7), 2)
    s = spectral_info(inc)
    assert s.sigma_max_Go ** 2 == pytest.approx(2 * np.linalg.eigvalsh(inc.L_o)[-1], rel=1e-12)
    assert s.sigma_min_nz_Go > 0 and s.kappa_G > 0


def test_sigma_min_nonzero_is_algebraic_connectivity():
    # nonzero singular values of G_o are sqrt(2 * nonzero Laplacian eigenvalues)
    net = build_topology("random", 50, 0.1, seed=0)
    s = spectral_info(incidence_set(net, 3))
    lap = np.diag(net.degrees) - net.adjacency()
    fiedler = np.linalg.eigvalsh(lap)[1]
    assert s.sigma_min_nz_Go == pytest.approx(np.sqrt(2 * fiedler), rel=1e-9)


def test_dump_matrices(tmp_path):
    inc = incidence_set(build_topology("line", 3), 2)
    dump_matrices(inc, tmp_path)
    G = np.loadtxt(tmp_path / "G_o.csv", delimiter=",")
    assert np.array_equal(G, inc.G_o)
