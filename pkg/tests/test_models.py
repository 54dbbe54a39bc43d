import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regimelab.dataset import Example
from regimelab.models import (
    FeatureConfig,
    Policy,
    ReferencePolicy,
    RewardModel,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    features_and_labels,
    features_from_example,
    init_reward_model_from_policy,
    kl_categorical,
    mf_loss_and_grad,
    one_hot,
    ppo_objective_and_grad,
    rm_loss_and_grad,
    sft_loss_and_grad,
    softmax,
)

# ------------------------------------------------------------------ helpers


def numerical_grad(net, loss_fn, h=1e-5):
    theta = net.get_flat().copy()
    g = np.zeros_like(theta)
    for j in range(theta.size):
        step = np.zeros_like(theta)
        step[j] = h
        net.set_flat(theta + step)
        up = loss_fn()
        net.set_flat(theta - step)
        dn = loss_fn()
        g[j] = (up - dn) / (2 * h)
    net.set_flat(theta)
    return g


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def batch(rng, n=6, dim=5):
    X = rng.normal(0, 1, (n, dim))
    y = rng.integers(0, 3, n)
    return X, y


# ------------------------------------------------------------------ probability head


def test_softmax_rows_sum_to_one_exactly():
    rng = np.random.default_rng(0)
    p = softmax(rng.normal(0, 10, (50, 3)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.all(p >= 0)


def test_sampling_matches_probabilities():
    policy = Policy(4, arch="linear", seed=1)
    x = np.array([[0.3, -1.2, 0.7, 0.1]])
    p = policy.probs(x)[0]
    rng = np.random.default_rng(5)
    draws = policy.sample(np.repeat(x, 20_000, axis=0), rng)
    freq = np.bincount(draws, minlength=3) / draws.size
    assert np.all(np.abs(freq - p) < 0.02)


# ------------------------------------------------------------------ frozen loss values


def zero_policy(dim=5, arch="linear", hidden=0):
    p = Policy(dim, arch=arch, hidden=hidden, seed=0)
    p.net.set_flat(np.zeros(p.net.n_params))
    return p


def test_uniform_policy_sft_loss_is_log3():
    policy = zero_policy()
    X = np.random.default_rng(2).normal(0, 1, (8, 5))
    y = np.array([0, 1, 2, 0, 1, 2, 0, 1])
    loss, _ = sft_loss_and_grad(policy, X, y)
    assert loss == pytest.approx(math.log(3.0), abs=1e-12)


def test_uniform_policy_mf_loss_is_two_thirds():
    policy = zero_policy()
    X = np.random.default_rng(3).normal(0, 1, (4, 5))
    y = np.array([0, 1, 2, 1])
    loss, _ = mf_loss_and_grad(policy, X, y)
    assert loss == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_equal_scores_rm_loss_is_log2():
    rm = RewardModel(5, arch="linear", seed=0)
    rm.net.set_flat(np.zeros(rm.net.n_params))
    X = np.random.default_rng(4).normal(0, 1, (6, 5))
    loss, _ = rm_loss_and_grad(rm, X, np.zeros(6, dtype=int), np.ones(6, dtype=int))
    assert loss == pytest.approx(math.log(2.0), abs=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=30)
def test_mf_loss_bounded(seed):
    rng = np.random.default_rng(seed)
    policy = Policy(4, arch="mlp", hidden=6, seed=seed)
    policy.net.set_flat(rng.normal(0, 1.0, policy.net.n_params))
    X, y = batch(rng, dim=4)
    loss, _ = mf_loss_and_grad(policy, X, y)
    assert 0.0 <= loss <= 2.0
    hard, g = mf_loss_and_grad(policy, X, y, hard=True)
    assert hard in [pytest.approx(v) for v in np.arange(0, 2.01, 2.0 / len(y))]
    assert np.all(g == 0.0)


def test_mf_hard_counts_mistakes():
    policy = zero_policy(dim=2)
    # bias strongly toward label 0
    flat = np.zeros(policy.net.n_params)
    flat[-3] = 50.0
    policy.net.set_flat(flat)
    X = np.zeros((4, 2))
    y = np.array([0, 0, 1, 2])
    hard, _ = mf_loss_and_grad(policy, X, y, hard=True)
    assert hard == pytest.approx(2.0 * 2 / 4)


# ------------------------------------------------------------------ gradients vs finite differences


@pytest.mark.parametrize("arch,hidden", [("linear", 0), ("mlp", 7)])
def test_sft_gradient(arch, hidden):
    rng = np.random.default_rng(11)
    policy = Policy(5, arch=arch, hidden=hidden, seed=3)
    policy.net.set_flat(rng.normal(0, 0.3, policy.net.n_params))
    X, y = batch(rng)
    _, g = sft_loss_and_grad(policy, X, y)
    num = numerical_grad(policy.net, lambda: sft_loss_and_grad(policy, X, y)[0])
    assert rel_err(g, num) < 1e-6


@pytest.mark.parametrize("arch,hidden", [("linear", 0), ("mlp", 7)])
def test_mf_gradient(arch, hidden):
    rng = np.random.default_rng(12)
    policy = Policy(5, arch=arch, hidden=hidden, seed=4)
    policy.net.set_flat(rng.normal(0, 0.3, policy.net.n_params))
    X, y = batch(rng)
    _, g = mf_loss_and_grad(policy, X, y)
    num = numerical_grad(policy.net, lambda: mf_loss_and_grad(policy, X, y)[0])
    assert rel_err(g, num) < 1e-6


@pytest.mark.parametrize("arch,hidden", [("linear", 0), ("mlp", 7)])
def test_rm_gradient(arch, hidden):
    rng = np.random.default_rng(13)
    rm = RewardModel(5, arch=arch, hidden=hidden, seed=5)
    rm.net.set_flat(rng.normal(0, 0.3, rm.net.n_params))
    X = rng.normal(0, 1, (6, 5))
    chosen = rng.integers(0, 3, 6)
    rejected = (chosen + 1 + rng.integers(0, 3, 6)) % 4
    _, g = rm_loss_and_grad(rm, X, chosen, rejected)
    num = numerical_grad(rm.net, lambda: rm_loss_and_grad(rm, X, chosen, rejected)[0])
    assert rel_err(g, num) < 1e-6


@pytest.mark.parametrize("arch,hidden", [("linear", 0), ("mlp", 7)])
def test_ppo_surrogate_gradient(arch, hidden):
    rng = np.random.default_rng(14)
    policy = Policy(5, arch=arch, hidden=hidden, seed=6)
    policy.net.set_flat(rng.normal(0, 0.3, policy.net.n_params))
    X = rng.normal(0, 1, (8, 5))
    actions = rng.integers(0, 3, 8)
    behind = Policy(5, arch=arch, hidden=hidden, seed=7)
    behind.net.set_flat(policy.net.get_flat() + rng.normal(0, 0.05, policy.net.n_params))
    old_logp = behind.log_probs(X)[np.arange(8), actions]
    adv = rng.normal(0, 1, 8)

    # keep away from the clip kink so the finite difference is clean
    lp = policy.log_probs(X)[np.arange(8), actions]
    ratio = np.exp(lp - old_logp)
    assert np.all(np.abs(ratio - 1.2) > 1e-3) and np.all(np.abs(ratio - 0.8) > 1e-3)

    _, g = ppo_objective_and_grad(policy, X, actions, old_logp, adv, clip_eps=0.2)
    num = numerical_grad(
        policy.net,
        lambda: ppo_objective_and_grad(policy, X, actions, old_logp, adv, 0.2)[0],
    )
    assert rel_err(g, num) < 1e-6


def test_ppo_clip_kills_gradient_when_out_of_band():
    policy = Policy(3, arch="linear", seed=8)
    X = np.array([[1.0, 0.5, -0.3]])
    actions = np.array([1])
    lp = policy.log_probs(X)[0, 1]
    # fabricate a collection log-prob making the ratio far above 1+eps, A > 0
    old_logp = np.array([lp - 1.0])
    obj, g = ppo_objective_and_grad(policy, X, actions, old_logp, np.array([2.0]), 0.2)
    assert obj == pytest.approx(1.2 * 2.0)
    assert np.all(g == 0.0)


# ------------------------------------------------------------------ KL helper


def test_kl_categorical_identities():
    p = np.array([[0.5, 0.25, 0.25]])
    assert kl_categorical(p, p)[0] == pytest.approx(0.0, abs=1e-15)
    q = np.array([[0.25, 0.5, 0.25]])
    assert kl_categorical(p, q)[0] > 0.0
    with_zero = np.array([[1.0, 0.0, 0.0]])
    assert math.isfinite(kl_categorical(with_zero, q)[0])


# ------------------------------------------------------------------ checkpoints


@pytest.mark.parametrize("model_kind", ["policy", "reward"])
@pytest.mark.parametrize("arch,hidden", [("linear", 0), ("mlp", 5)])
def test_checkpoint_round_trip_bitexact(model_kind, arch, hidden):
    if model_kind == "policy":
        model = Policy(6, arch=arch, hidden=hidden, seed=9)
    else:
        model = RewardModel(6, arch=arch, hidden=hidden, seed=9)
    blob = checkpoint_to_bytes(model)
    back = checkpoint_from_bytes(blob)
    assert checkpoint_to_bytes(back) == blob
    assert back.content_hash() == model.content_hash()


def test_checkpoint_rejects_bad_magic_and_truncation():
    model = Policy(4, seed=0)
    blob = checkpoint_to_bytes(model)
    with pytest.raises(ValueError, match="magic"):
        checkpoint_from_bytes(b"xx" + blob)
    with pytest.raises(ValueError, match="payload"):
        checkpoint_from_bytes(blob[:-8])


def test_checkpoint_rejects_dimension_tampering():
    model = Policy(4, seed=0)
    blob = checkpoint_to_bytes(model)
    tampered = blob.replace(b"feature_dim=4", b"feature_dim=5")
    with pytest.raises(ValueError):
        checkpoint_from_bytes(tampered)


def test_reference_policy_is_immutable_snapshot():
    policy = Policy(4, arch="mlp", hidden=5, seed=10)
    ref = ReferencePolicy(policy)
    before = ref.content_hash()
    x = np.ones((1, 4))
    p_before = ref.probs(x).copy()
    policy.net.set_flat(policy.net.get_flat() + 1.0)
    assert ref.content_hash() == before
    assert ref.verify_unchanged()
    np.testing.assert_array_equal(ref.probs(x), p_before)
    assert policy.content_hash() != before


def test_rm_warm_start_copies_mlp_encoder():
    policy = Policy(6, arch="mlp", hidden=4, seed=11)
    rm = init_reward_model_from_policy(policy, seed=12)
    np.testing.assert_array_equal(rm.net.W1[:, :6], policy.net.W1)
    np.testing.assert_array_equal(rm.net.b1, policy.net.b1)
    assert rm.net.W1.shape == (4, 10)


# ------------------------------------------------------------------ feature assembly


def toy_example(n_rows=3, news=None):
    rows = []
    for i in range(n_rows):
        rows.append(
            ["2010-01-0%d" % (i + 4), 100.0, 101.0, 99.0, 100.5, 100.5, 1e6,
             0.4, 0.1, 102.0, 98.0, 55.0, 80.0, 20.0, None, None]
        )
    return Example(
        id="day-00010",
        date="2010-01-10",
        question="q",
        context=rows,
        news=None,
        news_embedding=news,
        response="Neutral",
        pct_change=0.3,
    )


def test_feature_dim_fixed_with_padding():
    cfg = FeatureConfig(depth=10, news_dim=4)
    ex = toy_example(3, news=[0.1, 0.2, 0.3, 0.4])
    f = features_from_example(ex, cfg)
    assert f.shape == (cfg.feature_dim,)
    assert np.all(f[: 7 * cfg.per_row] == 0.0)  # 7 missing rows zero-padded
    np.testing.assert_array_equal(f[-4:], [0.1, 0.2, 0.3, 0.4])


def test_feature_news_dim_mismatch():
    cfg = FeatureConfig(depth=2, news_dim=3)
    ex = toy_example(2, news=[0.1, 0.2])
    with pytest.raises(ValueError, match="news embedding"):
        features_from_example(ex, cfg)


def test_features_and_labels_shapes():
    cfg = FeatureConfig(depth=2, news_dim=0)
    exs = [toy_example(2), toy_example(1)]
    X, y = features_and_labels(exs, cfg)
    assert X.shape == (2, cfg.feature_dim)
    assert list(y) == [2, 2]
    assert np.all(np.isfinite(X))


def test_one_hot_shape():
    oh = one_hot(np.array([0, 2]), 3)
    np.testing.assert_array_equal(oh, [[1, 0, 0], [0, 0, 1]])
