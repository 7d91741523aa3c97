import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fcac import tensor as T
from fcac.episodes import EpisodeBatch, EpisodeConfig, LabeledSet, episode_pass
from fcac.errors import InvalidInputError, ShapeError
from fcac.gradcheck import finite_diff_check
from fcac.pan import (AttentionParams, PANParams, apgm_forward, attention_block, attention_weights,
                      consolidate_prototypes, episode_loss, mean_episode_loss, pqam_forward, train_pan)


def weights(params):
    return [w.data.tolist() for w in params.weights]


def biases(params):
    return [b.data.tolist() for b in params.biases] if params.biases else None


def test_single_row_identity_block_is_layer_norm_of_doubled_row():
    x = np.array([[0.3, -1.0, 2.0]])
    out = attention_block(AttentionParams.identity(3), x).data
    np.testing.assert_allclose(out, T.layer_norm(T.Tensor(2 * x)).data, atol=1e-12)


def test_two_orthogonal_rows_identity_block():
    x = np.eye(2)
    a = attention_weights(AttentionParams.identity(2), x)
    e1, e0 = math.exp(1 / math.sqrt(2)), 1.0
    np.testing.assert_allclose(a, [[e1 / (e1 + e0), e0 / (e1 + e0)], [e0 / (e1 + e0), e1 / (e1 + e0)]], atol=1e-15)
    expected = oracles.attention([np.eye(2).tolist()] * 4, x.tolist())
    np.testing.assert_allclose(attention_block(AttentionParams.identity(2), x).data, expected, atol=1e-12)


def test_zero_output_map_reduces_to_layer_norm():
    p = AttentionParams.init(4, np.random.default_rng(0))
    p.weights[3].data[...] = 0.0
    x = np.random.default_rng(1).normal(size=(3, 4))
    np.testing.assert_allclose(attention_block(p, x).data, T.layer_norm(T.Tensor(x)).data, atol=1e-12)


def test_dimension_checks():
    p = AttentionParams.init(4, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        attention_block(p, np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        apgm_forward(p, np.zeros((5, 4)), k_shot=2)
    with pytest.raises(ShapeError):
        pqam_forward(p, np.zeros((2, 3)), None, np.zeros((1, 4)))
    with pytest.raises(ShapeError):
        pqam_forward(p, None, None, np.zeros((1, 4)))
    with pytest.raises(ShapeError):
        AttentionParams([T.Tensor(np.eye(2))] * 3 + [T.Tensor(np.eye(3))])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(2, 4), st.booleans(), st.integers(0, 2 ** 32 - 1))
def test_block_matches_scalar_oracle_and_postconditions(n, d, bias, seed):
    rng = np.random.default_rng(seed)
    p = AttentionParams.init(d, rng, bias=bias)
    x = rng.normal(size=(n, d))
    out = attention_block(p, x).data
    np.testing.assert_allclose(out, oracles.attention(weights(p), x.tolist(), biases(p)), atol=1e-10, rtol=0)
    np.testing.assert_allclose(attention_weights(p, x).sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-9)


def test_apgm_k1_and_identical_class_rows():
    p = AttentionParams.init(3, np.random.default_rng(2))
    x = np.random.default_rng(3).normal(size=(4, 3))
    np.testing.assert_allclose(apgm_forward(p, x, 1).data, attention_block(p, x).data, atol=1e-14)
    row = np.array([[0.5, -0.2, 1.1]])
    proto = apgm_forward(AttentionParams.identity(3), np.repeat(row, 3, axis=0), 3).data
    np.testing.assert_allclose(proto, T.layer_norm(T.Tensor(2 * row)).data, atol=1e-12)


def test_apgm_two_classes_two_shots_oracle():
    rng = np.random.default_rng(5)
    p = AttentionParams.init(3, rng)
    s = rng.normal(size=(4, 3))
    np.testing.assert_allclose(apgm_forward(p, s, 2).data, oracles.apgm(weights(p), s.tolist(), 2), atol=1e-10)


def test_apgm_class_block_swap_permutes_prototypes():
    rng = np.random.default_rng(6)
    p = AttentionParams.init(4, rng)
    s = rng.normal(size=(6, 4))
    swapped = np.concatenate([s[3:], s[:3]])
    np.testing.assert_allclose(apgm_forward(p, swapped, 3).data, apgm_forward(p, s, 3).data[::-1], atol=1e-12)


def test_pqam_identity_oracle_and_shapes():
    p = AttentionParams.identity(2)
    old, nov, q = np.array([[1.0, 0.2]]), np.array([[-0.3, 0.9]]), np.array([[0.4, 0.4]])
    p_upd, q_upd, scores = pqam_forward(p, old, nov, q, 10.0)
    stacks, qs, sc = oracles.pqam(weights(p), [old[0].tolist(), nov[0].tolist()], q.tolist(), 10.0)
    assert scores.shape == (1, 2) and p_upd.shape == (1, 2, 2) and q_upd.shape == (1, 2)
    np.testing.assert_allclose(p_upd.data, stacks, atol=1e-12)
    np.testing.assert_allclose(q_upd.data, qs, atol=1e-12)
    np.testing.assert_allclose(scores.data, sc, atol=1e-12)


def test_cosine_parallel_orthogonal_and_scale_invariance():
    a = T.Tensor([[1.0, 0.0], [0.0, 2.0]])
    b = T.Tensor([[3.0, 0.0]])
    np.testing.assert_allclose(T.cosine_similarity(a, b).data[:, 0] * 10.0, [10.0, 0.0], atol=1e-15)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
    np.testing.assert_allclose(T.cosine_similarity(T.Tensor(x * 7.0), T.Tensor(y * 0.1)).data,
                               T.cosine_similarity(T.Tensor(x), T.Tensor(y)).data, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(1, 3), st.integers(2, 4), st.integers(0, 2 ** 32 - 1))
def test_pqam_matches_oracle(n_old, n_nov, kq, d, seed):
    if n_old + n_nov == 0:
        n_old = 1
    rng = np.random.default_rng(seed)
    p = AttentionParams.init(d, rng)
    old, nov, q = rng.normal(size=(n_old, d)), rng.normal(size=(n_nov, d)), rng.normal(size=(kq, d))
    p_upd, q_upd, scores = pqam_forward(p, old, nov, q, 10.0)
    stacks, qs, sc = oracles.pqam(weights(p), old.tolist() + nov.tolist(), q.tolist(), 10.0)
    np.testing.assert_allclose(p_upd.data, stacks, atol=1e-10, rtol=0)
    np.testing.assert_allclose(q_upd.data, qs, atol=1e-10, rtol=0)
    np.testing.assert_allclose(scores.data, sc, atol=1e-10, rtol=0)


def test_consolidation_modes():
    one = np.random.default_rng(0).normal(size=(1, 3, 2))
    np.testing.assert_array_equal(consolidate_prototypes(one), one[0])
    same = np.repeat(one, 2, axis=0)
    np.testing.assert_allclose(consolidate_prototypes(same), one[0], atol=1e-15)
    two = np.array([[[1.0, 2.0]], [[3.0, -4.0]]])
    assert consolidate_prototypes(two).tolist() == [[2.0, -1.0]]
    assert consolidate_prototypes(two, "last").tolist() == [[3.0, -4.0]]
    with pytest.raises(InvalidInputError):
        consolidate_prototypes(np.zeros((0, 2, 2)))
    with pytest.raises(InvalidInputError):
        consolidate_prototypes(two, "median")


def small_episode(n_old=2, n_nov=2, k=2, kq=2, d=4, seed=0):
    rng = np.random.default_rng(seed)
    n = n_old + n_nov
    return EpisodeBatch(list(range(n_old)), list(range(n_old, n)), rng.normal(size=(n_old, k, d)),
                        rng.normal(size=(n_nov, k, d)), rng.normal(size=(n * kq, d)),
                        np.repeat(np.arange(n), kq))


@pytest.mark.parametrize("bias", [False, True])
def test_episode_loss_gradient(bias):
    pan = PANParams.init(4, seed=3, bias=bias)
    ep = small_episode()
    assert finite_diff_check(lambda: episode_loss(pan, ep), pan.parameters()) < 1e-4


def test_apgm_and_pqam_losses_gradients_separately():
    rng = np.random.default_rng(9)
    pan = PANParams.init(3, seed=9)
    s, q = rng.normal(size=(4, 3)), rng.normal(size=(3, 3))
    old = rng.normal(size=(2, 3))
    err_a = finite_diff_check(lambda: T.cross_entropy(apgm_forward(pan.apgm, s, 2) * 3.0, [1, 0]), pan.apgm.parameters())
    err_q = finite_diff_check(lambda: T.cross_entropy(pqam_forward(pan.pqam, old, None, q)[2], [0, 1, 1]),
                              pan.pqam.parameters())
    assert err_a < 1e-4 and err_q < 1e-4


def gaussian_sets(rng, means, per_class, sigma, start):
    ids, labels, vecs = [], [], []
    for c, m in enumerate(means):
        for j in range(per_class):
            ids.append(f"{start + c}_{j}")
            labels.append(start + c)
            vecs.append(m + rng.normal(0, sigma, m.shape))
    return LabeledSet(ids, labels, np.array(vecs))


def test_zero_learning_rate_keeps_parameters():
    rng = np.random.default_rng(0)
    means = rng.normal(size=(4, 4))
    d01, d02 = gaussian_sets(rng, means[:2], 20, 0.3, 0), gaussian_sets(rng, means[2:], 20, 0.3, 2)
    pan = PANParams.init(4, seed=0)
    before = [p.data.copy() for p in pan.parameters()]
    log = train_pan(pan, d01, d02, EpisodeConfig(2, 5, 15, epochs=3, learning_rate=0.0), seed=0)
    assert len(log.episode_losses) == 3
    for a, b in zip(before, pan.parameters()):
        np.testing.assert_array_equal(a, b.data)


def test_training_is_deterministic():
    rng = np.random.default_rng(1)
    means = rng.normal(size=(4, 4))
    d01, d02 = gaussian_sets(rng, means[:2], 20, 0.3, 0), gaussian_sets(rng, means[2:], 20, 0.3, 2)
    runs = []
    for _ in range(2):
        pan = PANParams.init(4, seed=5)
        train_pan(pan, d01, d02, EpisodeConfig(2, 5, 15, epochs=4, learning_rate=1e-2), seed=5)
        runs.append([p.data.copy() for p in pan.parameters()])
    for a, b in zip(*runs):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_training_lowers_held_out_episode_loss(seed):
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(12, 16))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    sigma = 1 / 3
    d01, d02 = gaussian_sets(rng, means[:8], 20, sigma, 0), gaussian_sets(rng, means[8:], 20, sigma, 8)
    h01, h02 = gaussian_sets(rng, means[:8], 20, sigma, 0), gaussian_sets(rng, means[8:], 20, sigma, 8)
    cfg = EpisodeConfig(5, 5, 15, epochs=100, learning_rate=1e-2)
    held = [ep for s in range(5) for ep in episode_pass(h01, h02, cfg, np.random.default_rng(100 + s))]
    pan = PANParams.init(16, seed)
    before = mean_episode_loss(pan, held)
    log = train_pan(pan, d01, d02, cfg, seed)
    assert sum(log.episodes_per_epoch) >= 200
    assert mean_episode_loss(pan, held) < before
