import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import check_grad
from pearlplus.diffmath import DiffMathError, Tape, Tensor, backward, ops
from pearlplus.distributions import DiagGaussian, product_of_gaussians
from pearlplus.inference import (
    ContextBatch,
    context_dim,
    context_features,
    encode_factors,
    encode_grouped,
    encode_posterior,
    kl_to_prior,
    make_encoder,
    sample_prior,
)


def random_context(rng, n, ds=3, da=2):
    return ContextBatch(
        rng.normal(size=(n, ds)), rng.uniform(-1, 1, (n, da)), rng.normal(size=n), rng.normal(size=(n, ds))
    )


def test_context_features_layout_and_one_hot():
    f = context_features([[1.0, 2.0]], [3], [0.5], [[4.0, 5.0]], n_actions=5)
    assert f.tolist() == [[1.0, 2.0, 0, 0, 0, 1, 0, 0.5, 4.0, 5.0]]
    assert context_dim(2, 5) == f.shape[1]


def test_context_length_mismatch():
    with pytest.raises(ValueError):
        ContextBatch(np.zeros((2, 3)), np.zeros((1, 2)), np.zeros(2), np.zeros((2, 3)))


def test_empty_context_rejected():
    enc = make_encoder(3, 2, 4, (8,), np.random.default_rng(0))
    with pytest.raises(ValueError):
        encode_posterior(random_context(np.random.default_rng(0), 0), enc)


def test_single_transition_posterior_is_its_factor():
    rng = np.random.default_rng(1)
    enc = make_encoder(3, 2, 4, (8,), rng)
    ctx = random_context(rng, 1)
    f = encode_factors(enc, context_features(ctx.obs, ctx.actions, ctx.rewards, ctx.next_obs), track=False)
    post = encode_posterior(ctx, enc, track=False)
    # the precision round trip may move the last bit only
    assert np.allclose(post.mean.data, f.mean.data[0], rtol=1e-15, atol=0)
    assert np.allclose(post.variance.data, f.variance.data[0], rtol=1e-15, atol=0)


def test_posterior_matches_product_of_factors():
    rng = np.random.default_rng(2)
    enc = make_encoder(3, 2, 4, (8, 8), rng)
    ctx = random_context(rng, 9)
    feats = context_features(ctx.obs, ctx.actions, ctx.rewards, ctx.next_obs)
    f = encode_factors(enc, feats, track=False)
    rows = [DiagGaussian(Tensor(f.mean.data[i]), Tensor(f.variance.data[i])) for i in range(9)]
    ref = product_of_gaussians(rows)
    post = encode_posterior(ctx, enc, track=False)
    assert np.allclose(post.mean.data, ref.mean.data, rtol=1e-12, atol=1e-14)
    assert np.allclose(post.variance.data, ref.variance.data, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_posterior_permutation_invariant_bitwise(seed, n):
    rng = np.random.default_rng(seed)
    enc = make_encoder(3, 2, 4, (8,), rng)
    ctx = random_context(rng, n)
    a = encode_posterior(ctx, enc, track=False)
    b = encode_posterior(ctx.permuted(rng.permutation(n)), enc, track=False)
    assert np.array_equal(a.mean.data, b.mean.data) and np.array_equal(a.variance.data, b.variance.data)


def test_more_context_shrinks_variance_with_repeated_transition():
    rng = np.random.default_rng(3)
    enc = make_encoder(3, 2, 4, (8,), rng)
    one = random_context(rng, 1)
    rep = ContextBatch(*(np.repeat(x, 6, axis=0) for x in (one.obs, one.actions, one.rewards, one.next_obs)))
    v1 = encode_posterior(one, enc, track=False).variance.data
    v6 = encode_posterior(rep, enc, track=False).variance.data
    assert np.allclose(v6, v1 / 6, rtol=1e-12)


def test_grouped_blocks_equal_individual_posteriors():
    rng = np.random.default_rng(4)
    enc = make_encoder(3, 2, 4, (8,), rng)
    ctxs = [random_context(rng, 5) for _ in range(3)]
    feats = np.concatenate([context_features(c.obs, c.actions, c.rewards, c.next_obs) for c in ctxs])
    grouped = encode_grouped(enc, feats, 3, track=False)
    for i, c in enumerate(ctxs):
        p = encode_posterior(c, enc, track=False)
        assert np.array_equal(grouped.mean.data[i], p.mean.data)


def test_kl_to_prior_gradient_reaches_encoder():
    rng = np.random.default_rng(5)
    enc = make_encoder(3, 2, 2, (6,), rng)
    feats = context_features(*(lambda c: (c.obs, c.actions, c.rewards, c.next_obs))(random_context(rng, 4)))
    check_grad(lambda: ops.sum(kl_to_prior(encode_grouped(enc, feats, 2))), enc.parameters())


def test_kl_to_prior_zero_for_standard():
    assert kl_to_prior(DiagGaussian.standard(3)).item() == 0.0


def test_untracked_encoding_records_nothing():
    rng = np.random.default_rng(6)
    enc = make_encoder(3, 2, 2, (6,), rng)
    c = random_context(rng, 3)
    with Tape():
        post = encode_posterior(c, enc, track=False)
        with pytest.raises(DiffMathError):
            backward(ops.sum(post.mean))


def test_sample_prior_shape_and_determinism():
    a = sample_prior(np.random.default_rng(7), 5)
    assert a.shape == (5,) and np.array_equal(a, sample_prior(np.random.default_rng(7), 5))
