"""Invariants checked over generated inputs."""
import numpy as np
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from hypergcn.ahc import AhcParams, ahc_forward, pairwise_sq_distances, topk_incidence
from hypergcn.config import parse_text
from hypergcn.data import (NTU25, TOY5, Modality, SkeletonSequence, derive_modality,
                           load_sequence, resample_time, write_sequence)
from hypergcn.graph import Hypergraph, normalize_adjacency, normalize_hypergraph
from hypergcn.network import ModelConfig, divergence_of
from hypergcn.train import OptimConfig, TrainState, fuse_scores, lr_at, sgd_step

import oracles

finite32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)
unit = st.floats(-1, 1, allow_nan=False)
seeds = st.integers(0, 2**32 - 1)


@st.composite
def sequences(draw, V=5):
    P = draw(st.integers(1, 2))
    T = draw(st.integers(1, 6))
    coords = draw(arrays(np.float32, (P, T, V, 3), elements=finite32))
    return SkeletonSequence(coords, draw(st.integers(0, 100)))


@given(sequences())
def test_skl1_round_trip(tmp_path_factory, seq):
    path = tmp_path_factory.mktemp("rt") / "s.skl"
    write_sequence(path, seq)
    back = load_sequence(path)
    assert back.coords.tobytes() == seq.coords.tobytes() and back.label == seq.label


@given(sequences(), st.sampled_from(list(Modality)))
def test_modalities_keep_shape(seq, m):
    assert derive_modality(seq, m, TOY5).coords.shape == seq.coords.shape


@given(seeds)
def test_bone_path_sum(seed):
    rng = np.random.default_rng(seed)
    s = SkeletonSequence(rng.uniform(-1, 1, (1, 3, 25, 3)), 0)
    bones = derive_modality(s, Modality.BONE, NTU25).coords
    for v in range(25):
        rebuilt = sum(bones[..., u, :] for u in NTU25.path_to_root(v))
        assert np.max(np.abs(rebuilt - (s.coords[..., v, :] - s.coords[..., NTU25.root, :]))) <= 1e-6


@given(sequences())
def test_resample_same_length_is_identity(seq):
    out = resample_time(seq, seq.frame_count)
    assert out.coords.tobytes() == seq.coords.tobytes()


@given(seeds, st.integers(2, 8))
def test_adjacency_normalization_keeps_symmetry_and_pattern(seed, N):
    rng = np.random.default_rng(seed)
    A = (rng.random((N, N)) < 0.5) * rng.uniform(0.1, 2, (N, N))
    A = A + A.T
    np.fill_diagonal(A, 1.0)
    out = normalize_adjacency(A)
    assert np.array_equal(out, out.T)
    assert np.array_equal(out != 0, A != 0)


@st.composite
def hypergraphs(draw, binary=None):
    N = draw(st.integers(1, 8))
    M = draw(st.integers(1, 8))
    is_binary = draw(st.booleans()) if binary is None else binary
    if is_binary:
        H = draw(arrays(np.float64, (N, M), elements=st.sampled_from([0.0, 1.0])))
        w = np.ones(M)
    else:
        H = draw(arrays(np.float64, (N, M), elements=st.floats(0, 1)))
        w = draw(arrays(np.float64, M, elements=unit))
    return H, w


@given(hypergraphs())
def test_propagator_matches_triple_loop(hw):
    H, w = hw
    got = normalize_hypergraph(Hypergraph(H, w))
    ref = oracles.hypergraph_propagator(H, w)
    scale = max(1.0, np.max(np.abs(ref)))
    assert np.max(np.abs(got - ref)) <= 1e-10 * scale


@given(hypergraphs(binary=True))
def test_binary_support(hw):
    H, _ = hw
    out = normalize_hypergraph(Hypergraph.binary(H))
    assert np.all(out >= 0)
    share = (H @ H.T) > 0
    assert np.array_equal(out > 0, share)


@given(seeds, st.sampled_from([0.5, 2.0, 10.0]))
def test_weight_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    N, M = rng.integers(2, 9, 2)
    H = rng.random((N, M))
    w = rng.uniform(0.1, 1.0, M)
    a = normalize_hypergraph(Hypergraph(H, w))
    b = normalize_hypergraph(Hypergraph(H, c * w))
    # the guard perturbs each row by about eps / |d(v)| relative
    dv = H @ w
    rtol = 2e-6 / min(1.0, c) / np.min(np.abs(dv))
    np.testing.assert_allclose(a, b, rtol=rtol, atol=1e-12)


@given(seeds, st.integers(2, 9))
def test_topk_rows(seed, N):
    rng = np.random.default_rng(seed)
    D = pairwise_sq_distances(rng.standard_normal((4, N)))
    for K in range(1, N + 1):
        H = topk_incidence(D, K)
        assert np.all((H > 0).sum(axis=1) == K)
        assert np.all(np.abs(H.sum(axis=1) - 1) <= 1e-6)
        assert np.all(H >= 0)
        assert np.all(np.diag(H) == H.max(axis=1))
    assert np.array_equal(topk_incidence(D, 1), np.eye(N))


@given(seeds)
def test_joint_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    C, N, K = 6, 6, 3
    p = AhcParams.init(C, K, rng=rng)
    F = rng.standard_normal((C, 3, N))
    H, w, cache = ahc_forward(F, p.phi, p.psi, p.ln_gain, p.ln_bias, K)
    s = np.sort(cache["D"], axis=1)
    assume(np.min(s[:, K] - s[:, K - 1]) > 1e-9)
    perm = rng.permutation(N)
    Hp, wp, _ = ahc_forward(F[:, :, perm], p.phi, p.psi, p.ln_gain, p.ln_bias, K)
    np.testing.assert_allclose(Hp, H[np.ix_(perm, perm)], atol=1e-12)
    np.testing.assert_allclose(wp, w[perm], atol=1e-12)


@given(st.lists(arrays(np.float64, (4, 3), elements=st.floats(-5, 5)), min_size=1, max_size=4))
def test_divergence_nonnegative(mats):
    assert divergence_of(mats) >= 0.0


@given(seeds, st.floats(1e-3, 1e3))
def test_ensemble_weight_scaling(seed, c):
    rng = np.random.default_rng(seed)
    sets = [rng.standard_normal((12, 4)) for _ in range(3)]
    w = rng.uniform(0.1, 2, 3)
    a = fuse_scores(sets, w)
    b = fuse_scores(sets, c * w)
    top = np.sort(a, axis=1)
    clear = top[:, -1] - top[:, -2] > 1e-9
    assert np.array_equal(a.argmax(axis=1)[clear], b.argmax(axis=1)[clear])


@given(st.floats(1e-3, 1.0), st.integers(1, 10), st.integers(0, 200))
def test_lr_piecewise(base, warm, total_extra):
    total = warm + 2 + total_extra
    step = warm + 1 + total_extra // 2
    cfg = OptimConfig(base_lr=base, warmup_epochs=warm, step_epochs=(step,),
                      step_factors=(0.1,), total_epochs=total)
    values = [lr_at(e, cfg) for e in range(total)]
    assert all(v > 0 for v in values)
    assert all(a < b for a, b in zip(values[:warm], values[1:warm]))
    assert values[warm - 1] == float(f"{base:.12g}")
    assert set(values[warm:step]) <= {float(f"{base:.12g}")}
    assert set(values[step:]) == {float(f"{base * 0.1:.12g}")}


@given(arrays(np.float64, 5, elements=st.floats(-10, 10)),
       arrays(np.float64, 5, elements=st.floats(-10, 10)), st.floats(1e-4, 1.0))
def test_plain_gradient_descent(p0, g, lr):
    p = {"a": p0.copy()}
    sgd_step(p, {"a": g}, TrainState(), lr, OptimConfig(momentum=0.0, weight_decay=0.0))
    assert np.array_equal(p["a"], p0 - lr * g)


@given(st.integers(2, 200), st.integers(0, 4), st.sampled_from(["ntu25", "ucla20", "toy5"]),
       st.floats(0, 0.5), st.integers(1, 1000), st.floats(1e-4, 1.0))
def test_config_round_trip(classes, V_h, layout, smoothing, epochs, lr):
    text = (f"num_classes={classes}\nV_h={V_h}\nlayout={layout}\nk_scales=1,1,2,2,3,3,4,4\n"
            f"label_smoothing={smoothing!r}\ntotal_epochs={epochs}\nbase_lr={lr!r}\n"
            f"step_epochs=\nstep_factors=\n")
    cfg = parse_text(text, check_paths=False)
    assert parse_text(cfg.dumps(), check_paths=False) == cfg
    assert isinstance(cfg.model, ModelConfig)
