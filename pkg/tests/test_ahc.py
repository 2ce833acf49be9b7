import math

import numpy as np
import pytest

from hypergcn.ahc import (AhcParams, ahc_backward, ahc_forward, build_hypergraph,
                          channel_layernorm, default_embed_width, embed, pairwise_sq_distances,
                          temporal_pool, topk_incidence, topk_margin, topk_mask)
from hypergcn.errors import KOutOfRange, ShapeMismatch
from hypergcn.graph import normalize_hypergraph

import oracles


def test_temporal_pool(rng):
    F = np.repeat(rng.standard_normal((4, 1, 6)), 5, axis=1)
    np.testing.assert_allclose(temporal_pool(F), F[:, 0], rtol=1e-15)
    two = np.stack([np.zeros((2, 3)), np.full((2, 3), 2.0)], axis=1)
    np.testing.assert_array_equal(temporal_pool(two), np.ones((2, 3)))
    R = rng.standard_normal((3, 7, 4))
    loop = [[sum(R[c, t, n] for t in range(7)) / 7 for n in range(4)] for c in range(3)]
    np.testing.assert_allclose(temporal_pool(R), loop, atol=1e-7)


def test_layernorm_examples(rng):
    C = 6
    g, b = np.ones(C), np.zeros(C)
    assert not channel_layernorm(np.full((C, 3), 4.2), g, b).any()
    out = channel_layernorm(np.array([[1.0], [-1.0]]), np.ones(2), np.zeros(2))
    np.testing.assert_allclose(out[:, 0], [1 / math.sqrt(1 + 1e-5), -1 / math.sqrt(1 + 1e-5)])
    x = rng.standard_normal((C, 5)) * 3 + 1
    y = channel_layernorm(x, g, b)
    np.testing.assert_allclose(y.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=0), 1, atol=1e-4)
    gain, bias = rng.standard_normal(C), rng.standard_normal(C)
    np.testing.assert_allclose(channel_layernorm(x, gain, bias), oracles.layernorm(x, gain, bias),
                               atol=1e-12)


def test_embed(rng):
    x = rng.standard_normal((6, 5))
    phi, psi = rng.standard_normal((6, 8)), rng.standard_normal(6)
    P, w = embed(x, np.zeros((6, 8)), psi)
    assert not P.any()
    P, w = embed(x, phi, np.zeros(6))
    assert not w.any()
    P, w = embed(x, phi, psi)
    loopP = [[sum(phi[c, h] * x[c, n] for c in range(6)) for n in range(5)] for h in range(8)]
    loopw = [math.tanh(sum(psi[c] * x[c, n] for c in range(6))) for n in range(5)]
    np.testing.assert_allclose(P, loopP, atol=1e-7)
    np.testing.assert_allclose(w, loopw, atol=1e-7)
    assert np.all(np.abs(w) < 1)


def test_distances(rng):
    assert not pairwise_sq_distances(np.ones((3, 4))).any()
    np.testing.assert_array_equal(pairwise_sq_distances(np.array([[0.0, 3.0]])), [[0, 9], [9, 0]])
    P = rng.standard_normal((8, 7))
    D = pairwise_sq_distances(P)
    np.testing.assert_allclose(D, oracles.sq_distances(P), rtol=1e-6)
    np.testing.assert_array_equal(D, D.T)
    assert not np.diag(D).any()
    assert np.all(D >= 0)


def test_topk_examples():
    D = np.zeros((4, 4))
    np.testing.assert_allclose(topk_incidence(D, 4), np.full((4, 4), 0.25))
    R = np.random.default_rng(0).random((5, 5))
    D = R + R.T
    np.fill_diagonal(D, 0)
    np.testing.assert_array_equal(topk_incidence(D, 1), np.eye(5))
    row = np.array([[0, math.log(2), 10], [math.log(2), 0, 1], [10, 1, 0]])
    np.testing.assert_allclose(topk_incidence(row, 2)[0], [2 / 3, 1 / 3, 0], atol=1e-12)


def test_topk_ties_go_to_lower_index():
    D = np.array([[0.0, 1, 1, 1], [1, 0, 1, 1], [1, 1, 0, 1], [1, 1, 1, 0]])
    mask = topk_mask(D, 2)
    assert mask[0].tolist() == [True, True, False, False]
    assert mask[3].tolist() == [True, False, False, True]


def test_topk_matches_oracle(rng):
    for _ in range(30):
        N = rng.integers(2, 9)
        P = rng.standard_normal((3, N))
        D = pairwise_sq_distances(P)
        K = int(rng.integers(1, N + 1))
        np.testing.assert_allclose(topk_incidence(D, K), oracles.topk_incidence(D, K), atol=1e-12)


def test_per_batch_k(rng):
    D = pairwise_sq_distances(rng.standard_normal((2, 4, 6)))
    H = topk_incidence(D, np.array([2, 5]))
    assert (np.count_nonzero(H[0], axis=-1) == 2).all()
    assert (np.count_nonzero(H[1], axis=-1) == 5).all()


def test_k_out_of_range():
    with pytest.raises(KOutOfRange):
        topk_incidence(np.zeros((3, 3)), 0)
    with pytest.raises(KOutOfRange):
        topk_incidence(np.zeros((3, 3)), 4)


def test_margin():
    D = np.array([[0.0, 1, 3], [1, 0, 2], [3, 2, 0]])
    np.testing.assert_array_equal(topk_margin(D, 2), [2, 1, 1])
    assert np.isinf(topk_margin(D, 3)).all()


def test_phi_zero_gives_first_k(rng):
    p = AhcParams.init(6, 3, rng=rng)
    p.phi[:] = 0
    hg = build_hypergraph(rng.standard_normal((6, 4, 5)), p)
    # all distances tie, so every row keeps the three lowest indices
    np.testing.assert_allclose(hg.incidence, np.tile([1 / 3, 1 / 3, 1 / 3, 0, 0], (5, 1)))


def test_k1_gives_diagonal_propagator(rng):
    p = AhcParams.init(6, 1, rng=rng)
    hg = build_hypergraph(rng.standard_normal((6, 4, 5)), p)
    np.testing.assert_array_equal(hg.incidence, np.eye(5))
    prop = normalize_hypergraph(hg)
    np.testing.assert_array_equal(prop, np.diag(np.diag(prop)))


def test_incidence_support_follows_rank(rng):
    p = AhcParams.init(8, 3, rng=rng)
    F = rng.standard_normal((8, 4, 6))
    H, w, cache = ahc_forward(F, p.phi, p.psi, p.ln_gain, p.ln_bias, 3)
    D = cache["D"]
    for i in range(6):
        ranked = sorted(range(6), key=lambda j: (D[i, j], j))[:3]
        assert set(np.flatnonzero(H[i])) == set(ranked)


def test_build_matches_oracle(rng):
    p = AhcParams.init(8, 4, rng=rng)
    p.ln_gain[:] = rng.uniform(0.5, 1.5, 8)
    p.ln_bias[:] = rng.standard_normal(8) * 0.1
    F = rng.standard_normal((8, 5, 7))
    hg = build_hypergraph(F, p)
    H, w = oracles.ahc(F, p.phi, p.psi, p.ln_gain, p.ln_bias, 4)
    np.testing.assert_allclose(hg.incidence, H, atol=1e-10)
    np.testing.assert_allclose(hg.edge_weights, w, atol=1e-12)


def test_channel_mismatch(rng):
    with pytest.raises(ShapeMismatch):
        build_hypergraph(rng.standard_normal((5, 2, 4)), AhcParams.init(6, 2, rng=rng))


def test_default_embed_width():
    assert default_embed_width(2) == 8
    assert default_embed_width(32) == 16


def test_backward_matches_finite_differences(rng):
    C, T, N, K = 6, 3, 7, 3
    p = AhcParams.init(C, K, rng=rng)
    p.ln_gain += rng.uniform(-0.2, 0.2, C)
    p.ln_bias[:] = rng.uniform(-0.3, 0.3, C)
    F = rng.standard_normal((C, T, N))
    RH, Rw = rng.standard_normal((N, N)), rng.standard_normal(N)

    def f():
        H, w, cache = ahc_forward(F, p.phi, p.psi, p.ln_gain, p.ln_bias, K)
        return np.sum(H * RH) + np.sum(w * Rw), cache["mask"]

    _, base_mask = f()
    _, _, cache = ahc_forward(F, p.phi, p.psi, p.ln_gain, p.ln_bias, K)
    grads = dict(zip(("F", "phi", "psi", "ln_gain", "ln_bias"), ahc_backward(RH, Rw, cache)))
    tensors = {"F": F, "phi": p.phi, "psi": p.psi, "ln_gain": p.ln_gain, "ln_bias": p.ln_bias}
    h = 1e-5
    checked = 0
    for name, arr in tensors.items():
        flat, g = arr.reshape(-1), grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp, mp = f()
            flat[i] = old - h
            fm, mm = f()
            flat[i] = old
            if not ((mp == base_mask).all() and (mm == base_mask).all()):
                continue
            num = (fp - fm) / (2 * h)
            assert abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-5) < 1e-4, (name, i)
            checked += 1
    assert checked > 0.9 * sum(a.size for a in tensors.values())
