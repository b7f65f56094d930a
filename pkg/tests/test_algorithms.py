import numpy as np
import pytest
from scipy.optimize import minimize

from colasim.algorithms import (
    AlgoParams,
    AlgoState,
    DivergenceError,
    cola_round,
    coca_round,
    etsd_round,
    metropolis_weights,
    resolve,
    run,
    solve_admm_subproblem,
)
from colasim.censoring import ThresholdSchedule
from colasim.graph import build_topology, incidence_set
from colasim.problems import LeastSquaresProblem, ls_generate, lr_generate
from colasim.protocol import MessagePassingCOLA, ProtocolError

from conftest import well_conditioned_ls

ZERO = ThresholdSchedule()


def two_node():
    net = build_topology("complete", 2)
    prob = LeastSquaresProblem([[[1.0]], [[1.0]]], [[1.0], [-1.0]])
    return net, incidence_set(net, 1), prob


def test_two_node_first_round():
    # by hand: x_1 = 0 - (-1 + 0 + 0) / (2*1*1 + 1) = 1/3, mu_1 = 1 * (1/3 - (-1/3))
    net, inc, prob = two_node()
    res = cola_round(AlgoState.zeros(2, 1), inc, prob, AlgoParams(c=1.0, rho=1.0), 0.0)
    assert np.allclose(res.state.x[:, 0], [1 / 3, -1 / 3], atol=1e-15)
    assert np.allclose(res.state.mu[:, 0], [2 / 3, -2 / 3], atol=1e-15)
    assert res.flags.all() and res.count == 2


def test_two_node_scalar_reference():
    # independent scalar transcription of the node updates
    net, inc, prob = two_node()
    y = [1.0, -1.0]
    c, rho = 0.7, 1.3
    x, mu, xh = [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]
    state = AlgoState.zeros(2, 1)
    for _ in range(30):
        xn = [x[i] - ((x[i] - y[i]) + c * (xh[i] - xh[1 - i]) + mu[i]) / (2 * c + rho) for i in range(2)]
        xh = xn[:]
        mu = [mu[i] + c * (xh[i] - xh[1 - i]) for i in range(2)]
        x = xn
        state = cola_round(state, inc, prob, AlgoParams(c=c, rho=rho), 0.0).state
        assert np.allclose(state.x[:, 0], x, atol=1e-14)
        assert np.allclose(state.mu[:, 0], mu, atol=1e-14)


def test_consensus_fixed_point(small_ls):
    net, inc, prob, xs = small_ls
    X = np.tile(xs, (net.n, 1))
    st = AlgoState(X, -prob.gradients(X), X.copy(), 5)
    for round_fn in (cola_round, coca_round):
        res = round_fn(st, inc, prob, AlgoParams(c=0.5, rho=2.0), 0.0)
        assert np.allclose(res.state.x, X, atol=1e-12)
        assert np.allclose(res.state.mu, st.mu, atol=1e-12)


def test_huge_threshold_blocks_everything(small_ls):
    net, inc, prob, xs = small_ls
    c = 0.5
    # from the zero state: no broadcast, states and duals stay at zero
    for round_fn in (cola_round, coca_round, etsd_round):
        res = round_fn(AlgoState.zeros(net.n, 2), inc, prob, AlgoParams(c=c, rho=2.0), 1e9)
        assert res.count == 0
        assert not res.state.xhat.any() and not res.state.mu.any()
    # in general the dual still moves by c L_o xhat, with xhat frozen
    rng = np.random.default_rng(0)
    xh = rng.normal(size=(net.n, 2))
    mu = inc.L_o_node @ rng.normal(size=(net.n, 2))
    st = AlgoState(rng.normal(size=(net.n, 2)), mu, xh, 3)
    for round_fn in (cola_round, coca_round):
        res = round_fn(st, inc, prob, AlgoParams(c=c, rho=2.0), 1e9)
        assert res.count == 0
        assert np.array_equal(res.state.xhat, xh)
        assert np.allclose(res.state.mu, mu + c * inc.L_o_node @ xh, atol=1e-14)


def direct_dlm(inc, prob, c, rho, rounds):
    """Block-matrix DLM: linearized primal step, then dual ascent on G_o x."""
    n, p = prob.n, prob.p
    H = np.linalg.inv(2 * c * inc.D + rho * np.eye(n * p))
    x = np.zeros(n * p)
    mu = np.zeros(n * p)
    out = []
    for _ in range(rounds):
        grad = prob.gradients(x.reshape(n, p)).ravel()
        x = x - H @ (grad + c * inc.L_o @ x + mu)
        mu = mu + c * inc.L_o @ x
        out.append((x.reshape(n, p), mu.reshape(n, p)))
    return out


def direct_admm(inc, prob, c, rounds):
    """Block-matrix decentralized ADMM for least squares."""
    n, p = prob.n, prob.p
    gram = np.zeros((n * p, n * p))
    for i in range(n):
        gram[i * p:(i + 1) * p, i * p:(i + 1) * p] = prob.gram[i]
    H = gram + 2 * c * inc.D
    aty = prob.Aty.ravel()
    x = np.zeros(n * p)
    mu = np.zeros(n * p)
    out = []
    for _ in range(rounds):
        x = np.linalg.solve(H, aty - mu + c * inc.L_u @ x)
        mu = mu + c * inc.L_o @ x
        out.append((x.reshape(n, p), mu.reshape(n, p)))
    return out


def test_zero_schedule_matches_direct_transcriptions():
    net = build_topology("random", 8, 0.4, seed=4)
    inc = incidence_set(net, 2)
    prob = well_conditioned_ls(8, 2, seed=1)
    M = prob.constants().M
    c, rho = 0.3, M
    st = AlgoState.zeros(8, 2)
    for x, mu in direct_dlm(inc, prob, c, rho, 100):
        st = cola_round(st, inc, prob, AlgoParams(c=c, rho=rho), 0.0).state
        assert np.abs(st.x - x).max() <= 1e-12 and np.abs(st.mu - mu).max() <= 1e-12
    st = AlgoState.zeros(8, 2)
    for x, mu in direct_admm(inc, prob, c, 100):
        st = coca_round(st, inc, prob, AlgoParams(c=c), 0.0).state
        assert np.abs(st.x - x).max() <= 1e-12 and np.abs(st.mu - mu).max() <= 1e-12


def test_aliases_resolve_to_zero_schedule():
    lin = ThresholdSchedule("linear", 1.0, 0.9)
    assert resolve("dlm", lin) == ("cola", ZERO)
    assert resolve("admm", lin) == ("coca", ZERO)
    assert resolve("cola", lin) == ("cola", lin)
    with pytest.raises(ValueError):
        resolve("extra", None)


def test_dlm_is_cola_without_censoring(small_ls):
    net, inc, prob, xs = small_ls
    params = AlgoParams(c=0.4, rho=3.0)
    a = run("dlm", inc, prob, params, ThresholdSchedule("linear", 5.0, 0.5), xs, 100)
    b = run("cola", inc, prob, params, ZERO, xs, 100)
    assert a.accuracy == b.accuracy
    assert np.array_equal(a.final_state.x, b.final_state.x)


def test_ls_subproblem_closed_form_vs_generic_minimizer(small_ls):
    net, inc, prob, xs = small_ls
    rng = np.random.default_rng(1)
    linear = rng.normal(size=2)
    q = 0.8
    got = solve_admm_subproblem(prob, 3, linear, q)
    obj = lambda x: prob.value(3, x) + linear @ x + q * x @ x
    ref = minimize(obj, np.zeros(2), method="BFGS", options={"gtol": 1e-12}).x
    assert np.allclose(got, ref, atol=1e-6)


def test_subproblem_examples():
    zero_cost = LeastSquaresProblem(np.zeros((1, 2, 2)), np.zeros((1, 2)))
    v = np.array([1.0, -3.0])
    assert np.allclose(solve_admm_subproblem(zero_cost, 0, v, 2.0), -v / 4.0)
    unit = LeastSquaresProblem([[[1.0]]], [[0.0]])
    assert solve_admm_subproblem(unit, 0, np.array([-2.0]), 0.5)[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        solve_admm_subproblem(unit, 0, np.array([1.0]), 0.0)


def test_logistic_coca_subproblem_accuracy():
    net = build_topology("random", 10, 0.4, seed=0)
    inc = incidence_set(net, 3)
    prob = lr_generate(10, 3, seed=0)
    c = 0.05
    st = AlgoState.zeros(10, 3)
    for _ in range(3):
        prev = st
        st = coca_round(st, inc, prob, AlgoParams(c=c), 0.0, subproblem_tol=1e-8).state
    linear = prev.mu - c * inc.L_u_node @ prev.xhat
    g = prob.gradients(st.x) + linear + 2 * c * net.degrees[:, None] * st.x
    assert np.linalg.norm(g, axis=1).max() <= 1e-8


def test_metropolis_weights():
    W = metropolis_weights(build_topology("complete", 2))
    assert np.array_equal(W, [[0.5, 0.5], [0.5, 0.5]])
    W = metropolis_weights(build_topology("random", 20, 0.2, seed=3))
    assert np.allclose(W.sum(axis=1), 1.0, atol=1e-15)
    assert np.array_equal(W, W.T)
    assert W.min() >= 0


def test_etsd_consensus_with_zero_gradient():
    net = build_topology("star", 5)
    inc = incidence_set(net, 2)
    prob = LeastSquaresProblem(np.zeros((5, 2, 2)), np.zeros((5, 2)))
    X = np.tile([1.5, -0.5], (5, 1))
    res = etsd_round(AlgoState(X, np.zeros_like(X), X.copy(), 4), inc, prob, AlgoParams(), 0.0)
    assert np.allclose(res.state.x, X, atol=1e-15)


def test_run_trace_basics(small_ls):
    net, inc, prob, xs = small_ls
    tr = run("cola", inc, prob, AlgoParams(c=0.4, rho=3.0), ThresholdSchedule("linear", 0.5, 0.9), xs, 300)
    assert tr.accuracy[0] == 1.0
    assert tr.iterations == 300
    assert np.all(np.diff(tr.cum_broadcasts) >= 0)
    assert tr.cum_broadcasts[-1] == sum(tr.broadcasts) == tr.pattern().sum()
    assert tr.pattern().shape == (300, net.n)
    assert 0 < tr.cum_broadcasts[-1] < 300 * net.n
    zero = run("dlm", inc, prob, AlgoParams(c=0.4, rho=3.0), None, xs, 50)
    assert zero.cum_broadcasts == [net.n * k for k in range(51)]
    assert zero.pattern().all()


def test_run_target_and_edge_accounting(small_ls):
    net, inc, prob, xs = small_ls
    params = AlgoParams(c=0.4, rho=3.0)
    tr = run("dlm", inc, prob, params, None, xs, 10_000, target_accuracy=1e-6)
    assert tr.accuracy[-1] <= 1e-6 < tr.accuracy[-2]
    assert tr.to_target(1e-6)[0] == tr.iterations
    edge = run("dlm", inc, prob, params, None, xs, 5, accounting="edge")
    assert edge.cum_broadcasts[-1] == 5 * net.m


def test_run_divergence():
    net = build_topology("line", 4)
    inc = incidence_set(net, 2)
    prob = well_conditioned_ls(4, 2, seed=0)
    xs = prob.solve_centralized()
    with pytest.raises(DivergenceError) as exc:
        run("cola", inc, prob, AlgoParams(c=0.01, rho=0.01), None, xs, 10_000)
    assert exc.value.trace is not None and exc.value.trace.iterations > 0


def test_run_argument_errors(small_ls):
    net, inc, prob, xs = small_ls
    with pytest.raises(ValueError, match="c must be"):
        run("cola", inc, prob, AlgoParams(c=0.0), None, xs, 10)
    with pytest.raises(ValueError, match="max_iter"):
        run("cola", inc, prob, AlgoParams(), None, xs, 0)
    with pytest.raises(ValueError, match="undefined"):
        run("cola", inc, prob, AlgoParams(), None, np.zeros(2), 10)


def test_admm_beats_dlm_in_iterations():
    net = build_topology("random", 50, 0.1, seed=1)
    inc = incidence_set(net, 3)
    prob = ls_generate(50, 3, seed=1)
    xs = prob.solve_centralized()
    admm = run("admm", inc, prob, AlgoParams(c=0.35), None, xs, 4000, 1e-8)
    dlm = run("dlm", inc, prob, AlgoParams(c=0.45, rho=1.1), None, xs, 4000, 1e-8)
    assert admm.first_reaching(1e-8) < dlm.first_reaching(1e-8)


def test_kkt_limit_strongly_convex(small_ls):
    from colasim.analysis import kkt_residuals

    net, inc, prob, xs = small_ls
    tr = run("cola", inc, prob, AlgoParams(c=0.4, rho=prob.constants().M),
             ThresholdSchedule("sublinear", 1.0, r=2.0), xs, 3000)
    rg, rc = kkt_residuals(tr.final_state.x, tr.final_state.mu, prob, inc)
    assert rg <= 1e-6 and rc <= 1e-6


# node-level protocol


def protocol_setup(seed=0):
    net = build_topology("random", 12, 0.3, seed=seed)
    prob = ls_generate(12, 3, seed=seed)
    params = AlgoParams(c=0.3, rho=prob.constants().M)
    return net, prob, params, ThresholdSchedule("linear", 0.5, 0.9)


def test_protocol_matches_vectorized_engine():
    net, prob, params, sched = protocol_setup()
    inc = incidence_set(net, 3)
    sim = MessagePassingCOLA(net, prob, params, sched)
    st = AlgoState.zeros(12, 3)
    suppressed = 0
    for k in range(150):
        flags = sim.round()
        res = cola_round(st, inc, prob, params, sched(k + 1))
        st = res.state
        x, mu, xh = sim.stacked()
        assert np.array_equal(flags, res.flags)
        assert np.abs(x - st.x).max() <= 1e-12
        assert np.abs(mu - st.mu).max() <= 1e-12
        assert np.abs(xh - st.xhat).max() <= 1e-12
        suppressed += int((~flags).sum())
    assert suppressed > 0


def test_protocol_node_order_is_irrelevant():
    net, prob, params, sched = protocol_setup(seed=2)
    a = MessagePassingCOLA(net, prob, params, sched)
    b = MessagePassingCOLA(net, prob, params, sched)
    rng = np.random.default_rng(0)
    for _ in range(80):
        fa = a.round()
        fb = b.round(order=rng.permutation(net.n))
        assert np.array_equal(fa, fb)
        for u, v in zip(a.stacked(), b.stacked()):
            assert np.array_equal(u, v)


def test_protocol_detects_stale_copy():
    net, prob, params, sched = protocol_setup()
    sim = MessagePassingCOLA(net, prob, params, sched)
    sim.round()
    j = net.neighbors[0][0]
    sim.nodes[j].xhat[0] = sim.nodes[j].xhat[0] + 1.0
    with pytest.raises(ProtocolError, match="stale"):
        sim.check_consistency()
