import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagkit.gnn import (
    ARCHITECTURES,
    GnnParameters,
    backward,
    default_num_layers,
    forward,
    init_params,
    propagate,
    subgraph_operators,
)

from conftest import brute_k_hop


def random_instance(rng, n, p=0.4):
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return edges


def randomize(params: GnnParameters, rng) -> GnnParameters:
    """Nonzero biases and eps so every gradient path is exercised."""
    out = params.copy()
    for b in out.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    out.eps[:] = rng.normal(scale=0.3, size=out.eps.shape)
    return out


def fd_gradients(params, x, ops, target, upstream, h=1e-5, activation="tanh"):
    """Central finite differences of <upstream, output> for every parameter entry."""
    grads = params.zeros_like()

    def f(p):
        return float(upstream @ propagate(p, x, ops, target, activation=activation).vector)

    for arr, garr in zip(params.arrays(), grads.arrays()):
        flat, gflat = arr.reshape(-1), garr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f(params)
            flat[i] = old - h
            down = f(params)
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
    return grads


def max_rel_error(a: GnnParameters, b: GnnParameters) -> float:
    num = max(np.max(np.abs(x - y)) for x, y in zip(a.arrays(), b.arrays()))
    den = max(max(np.max(np.abs(x)), np.max(np.abs(y))) for x, y in zip(a.arrays(), b.arrays()))
    return num / max(den, 1e-12)


def test_default_layer_rule():
    assert default_num_layers(60) == 3
    assert default_num_layers(20000) == 3
    assert default_num_layers(20001) == 2


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_init_contract(arch):
    a = init_params(arch, 3, 4, seed=1)
    b = init_params(arch, 3, 4, seed=1)
    c = init_params(arch, 3, 4, seed=2)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    assert any(not np.array_equal(x, y) for x, y in zip(a.arrays(), c.arrays()))
    assert len(a.weights) == 3
    assert all(w.shape == ((4, 8) if arch == "sage" else (4, 4)) for w in a.weights)
    bound = np.sqrt(6 / 8)
    assert all(np.all(np.abs(w) <= bound) for w in a.weights)
    assert not any(b.any() for b in a.biases) and not a.eps.any()
    with pytest.raises(ValueError):
        init_params(arch, 0, 4, seed=1)


@pytest.mark.parametrize("arch", ["gcn", "gin"])
def test_isolated_node_is_tanh_wx(arch):
    p = init_params(arch, 1, 3, seed=0)
    p.weights[0][:] = 0.1 * np.eye(3)
    x = np.array([1.0, -2.0, 0.5])
    out = forward(p, {7: x}, [], 7).vector
    assert np.allclose(out, np.tanh(p.weights[0] @ x))


def test_isolated_sage_uses_zero_neighbor_mean():
    p = init_params("sage", 1, 3, seed=0)
    x = np.array([1.0, -2.0, 0.5])
    out = forward(p, {0: x}, [], 0).vector
    assert np.allclose(out, np.tanh(p.weights[0] @ np.concatenate([x, np.zeros(3)])))


def test_forward_errors():
    p = init_params("gcn", 2, 3, seed=0)
    with pytest.raises(KeyError):
        forward(p, {0: np.zeros(3)}, [], 1)
    with pytest.raises(ValueError):
        forward(p, {0: np.zeros(4)}, [], 0)
    with pytest.raises(KeyError):
        forward(p, {0: np.zeros(3)}, [(0, 5)], 0)
    with pytest.raises(ValueError):
        forward(p, {0: np.zeros(3)}, [], 0, layers=3)


def reach_counts(n, edges, v, m):
    """Walk counts of length <= m with self loops, i.e. ((I + A)^m)[v], by repeated squaring-free BFS."""
    A = np.zeros((n, n), dtype=np.int64)
    for a, b in edges:
        A[a, b] = A[b, a] = 1
    M = np.eye(n, dtype=np.int64) + A
    return np.linalg.matrix_power(M, m)[v]


def test_gin_identity_support_is_m_hop_ball():
    rng = np.random.default_rng(4)
    n = 9
    edges = random_instance(rng, n, 0.25)
    from tagkit.graph import TextAttributedGraph

    g = TextAttributedGraph.from_edges(["t"] * n, edges)
    p = init_params("gin", 3, n, seed=0)
    for w in p.weights:
        w[:] = np.eye(n)
    feats = {i: np.eye(n)[i] for i in range(n)}
    for m in (1, 2, 3):
        for v in range(n):
            out = forward(p, feats, edges, v, layers=m, activation="identity").vector
            support = {i for i in range(n) if out[i] != 0}
            assert support == {v} | brute_k_hop(g, v, m)
            assert np.array_equal(out, reach_counts(n, edges, v, m).astype(float))


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_permutation_equivariance(arch):
    rng = np.random.default_rng(9)
    n, F = 7, 5
    edges = random_instance(rng, n)
    feats = {i: rng.normal(size=F) for i in range(n)}
    p = randomize(init_params(arch, 3, F, seed=3), rng)
    perm = rng.permutation(n) + 100
    pfeats = {int(perm[i]): f for i, f in feats.items()}
    pedges = [(int(perm[a]), int(perm[b])) for a, b in edges]
    for v in range(n):
        a = forward(p, feats, edges, v).vector
        b = forward(p, pfeats, pedges, int(perm[v])).vector
        assert np.allclose(a, b, atol=1e-12)


def test_forward_is_deterministic_bitwise():
    rng = np.random.default_rng(2)
    feats = {i: rng.normal(size=6) for i in range(8)}
    edges = random_instance(rng, 8)
    p = init_params("sage", 2, 6, seed=0, dtype=np.float32)
    a = forward(p, feats, edges, 3).vector
    b = forward(p, dict(reversed(list(feats.items()))), list(reversed(edges)), 3).vector
    assert a.dtype == np.float32 and a.tobytes() == b.tobytes()


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_zero_upstream_gives_zero_grads(arch):
    p = init_params(arch, 2, 4, seed=0)
    out = forward(p, {0: np.ones(4), 1: -np.ones(4)}, [(0, 1)], 0, keep=True)
    grads = backward(p, out.tape, np.zeros(4))
    assert not any(a.any() for a in grads.arrays())


def test_backward_requires_tape():
    p = init_params("gcn", 1, 2, seed=0)
    out = forward(p, {0: np.ones(2)}, [], 0)
    with pytest.raises(ValueError):
        backward(p, out.tape, np.ones(2))


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_gradient_small_instance(arch):
    rng = np.random.default_rng(11)
    n, F = 5, 4
    edges = random_instance(rng, n, 0.5)
    x = rng.normal(size=(n, F))
    ops = subgraph_operators(n, edges)
    p = randomize(init_params(arch, 2, F, seed=5), rng)
    up = rng.normal(size=F)
    out = propagate(p, x, ops, 1, keep=True)
    assert max_rel_error(backward(p, out.tape, up), fd_gradients(p, x, ops, 1, up)) < 1e-4


def test_gradient_squared_norm_linear_isolated():
    rng = np.random.default_rng(1)
    p = init_params("gcn", 1, 3, seed=0)
    x = rng.normal(size=(1, 3))
    ops = subgraph_operators(1, [])
    out = propagate(p, x, ops, 0, activation="identity", keep=True)
    # d(|y|^2 / 2)/dy = y
    grads = backward(p, out.tape, out.vector)
    assert np.allclose(grads.weights[0], np.outer(p.weights[0] @ x[0], x[0]))

    h = 1e-5
    fd = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            q = p.copy()
            q.weights[0][i, j] += h
            up = 0.5 * np.sum(propagate(q, x, ops, 0, activation="identity").vector ** 2)
            q.weights[0][i, j] -= 2 * h
            down = 0.5 * np.sum(propagate(q, x, ops, 0, activation="identity").vector ** 2)
            fd[i, j] = (up - down) / (2 * h)
    assert np.max(np.abs(fd - grads.weights[0])) / np.max(np.abs(fd)) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(ARCHITECTURES), st.integers(1, 8), st.integers(1, 3), st.integers(1, 8),
       st.integers(0, 2**32 - 1))
def test_gradient_random(arch, n, layers, F, seed):
    rng = np.random.default_rng(seed)
    edges = random_instance(rng, n)
    x = rng.normal(size=(n, F))
    ops = subgraph_operators(n, edges)
    p = randomize(init_params(arch, layers, F, seed=seed), rng)
    target = int(rng.integers(n))
    up = rng.normal(size=F)
    out = propagate(p, x, ops, target, keep=True)
    assert max_rel_error(backward(p, out.tape, up), fd_gradients(p, x, ops, target, up)) < 1e-4


def test_backward_accumulates():
    rng = np.random.default_rng(0)
    p = init_params("gin", 2, 3, seed=0)
    out = forward(p, {0: rng.normal(size=3), 1: rng.normal(size=3)}, [(0, 1)], 0, keep=True)
    up = rng.normal(size=3)
    once = backward(p, out.tape, up)
    twice = backward(p, out.tape, up, backward(p, out.tape, up))
    assert all(np.allclose(2 * a, b) for a, b in zip(once.arrays(), twice.arrays()))


def test_receptive_field_bitwise():
    from tagkit.graph import TextAttributedGraph

    rng = np.random.default_rng(6)
    n, F = 14, 6
    edges = random_instance(rng, n, 0.15)
    g = TextAttributedGraph.from_edges(["t"] * n, edges)
    feats = {i: rng.normal(size=F) for i in range(n)}
    for arch in ARCHITECTURES:
        p = randomize(init_params(arch, 3, F, seed=1), rng)
        for m in (1, 2, 3):
            ball = {0} | brute_k_hop(g, 0, m)
            base = forward(p, feats, edges, 0, layers=m).vector
            for u in range(n):
                changed = dict(feats)
                changed[u] = feats[u] + 1.0
                out = forward(p, changed, edges, 0, layers=m).vector
                if u in ball:
                    assert not np.array_equal(out, base)
                else:
                    assert out.tobytes() == base.tobytes()
