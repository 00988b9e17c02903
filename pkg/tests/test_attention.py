import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtbca import autograd as ag
from mtbca.attention import (
    ChannelAttentionParams,
    FrequencyAttentionParams,
    channel_attention,
    channel_weights,
    frequency_attention,
    frequency_weights,
    gaussian_smoothing_matrix,
)
from mtbca.autograd import Tensor
from mtbca.errors import ConfigError, DimensionError


def f64_freq_params(f, rng, omega=1.0, train_omega=False):
    with ag.default_dtype(np.float64):
        return FrequencyAttentionParams.create(f, rng, dtype=np.float64, omega=omega, train_omega=train_omega)


def f64_channel_params(c, rng, reduction=4):
    return ChannelAttentionParams.create(c, rng, reduction, dtype=np.float64)


# smoothing matrix


@pytest.mark.parametrize("omega", [0.3, 1.0, 2.5])
def test_smoothing_single_entry(omega):
    g = gaussian_smoothing_matrix(1, omega)
    assert g.shape == (1, 1)
    assert g[0, 0] == pytest.approx(1 / (omega * math.sqrt(2 * math.pi)))


def test_smoothing_ratio():
    g = gaussian_smoothing_matrix(3, 1.0)
    assert g[0, 1] / g[0, 0] == pytest.approx(math.exp(-0.5))
    assert g[0, 1] / g[0, 0] == pytest.approx(0.6065, abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(size=st.integers(1, 40), omega=st.floats(0.05, 20))
def test_smoothing_symmetric_and_decaying(size, omega):
    g = gaussian_smoothing_matrix(size, omega)
    np.testing.assert_array_equal(g, g.T)
    for m in range(size):
        row = g[m]
        assert row.argmax() == m
        right = row[m:]
        left = row[: m + 1][::-1]
        assert np.all(np.diff(right) <= 0) and np.all(np.diff(left) <= 0)


def test_smoothing_rejects_bad_omega():
    with pytest.raises(ConfigError):
        gaussian_smoothing_matrix(4, 0.0)


# frequency attention


def test_zero_scores_uniform_profile():
    rng = np.random.default_rng(0)
    f = 6
    params = f64_freq_params(f, rng)
    params.score_weight.data[:] = 0
    x = rng.standard_normal((2, 3, 4, f))
    beta, g = frequency_weights(Tensor(x), params)
    np.testing.assert_allclose(beta.data, 1 / f)
    expected = gaussian_smoothing_matrix(f, 1.0) @ np.full(f, 1 / f)
    np.testing.assert_allclose(g.data[0], expected, rtol=1e-12)
    out = frequency_attention(Tensor(x), params).data
    np.testing.assert_allclose(out, x * expected, rtol=1e-12)


def test_one_hot_scores_give_gaussian_bump():
    rng = np.random.default_rng(0)
    f, j = 9, 4
    params = f64_freq_params(f, rng, omega=1.5)
    params.score_weight.data[:] = 0
    params.score_bias.data[:] = 0
    params.score_bias.data[j] = 1e3
    _, g = frequency_weights(Tensor(rng.standard_normal((1, 1, 2, f))), params)
    np.testing.assert_allclose(g.data[0], gaussian_smoothing_matrix(f, 1.5)[:, j], atol=1e-12)
    assert g.data[0].argmax() == j


@pytest.mark.parametrize("seed", range(10))
def test_frequency_attention_matvec_oracle(seed):
    rng = np.random.default_rng(seed)
    f = 7
    params = f64_freq_params(f, rng, omega=0.8)
    x = rng.standard_normal((3, 2, 5, f))
    beta, g = frequency_weights(Tensor(x), params)
    prof = x.mean(axis=(1, 2))
    scores = prof @ params.score_weight.data.T + params.score_bias.data
    b_ref = np.exp(scores - scores.max(1, keepdims=True))
    b_ref /= b_ref.sum(1, keepdims=True)
    gm = gaussian_smoothing_matrix(f, 0.8)
    g_ref = np.stack([gm @ b for b in b_ref])
    np.testing.assert_allclose(beta.data, b_ref, atol=1e-6)
    np.testing.assert_allclose(g.data, g_ref, atol=1e-6)
    assert np.all(beta.data > 0)
    np.testing.assert_allclose(beta.data.sum(1), 1.0, atol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_frequency_attention_gradcheck(seed):
    rng = np.random.default_rng(seed)
    f = 5
    p = f64_freq_params(f, rng, omega=1.3, train_omega=True)
    x = rng.standard_normal((2, 2, 3, f))

    def build(x, w, b, om):
        q = FrequencyAttentionParams(w, b, om)
        return frequency_attention(x, q)

    arrays_ = [x, p.score_weight.data, p.score_bias.data, p.omega.data]
    assert ag.check_gradients(build, arrays_, seed=seed) < 1e-4


@settings(max_examples=40, deadline=None)
@given(
    b1=arrays(np.float64, 8, elements=st.floats(-5, 5)),
    b2=arrays(np.float64, 8, elements=st.floats(-5, 5)),
    a=st.floats(-3, 3),
    c=st.floats(-3, 3),
)
def test_smoothing_is_linear(b1, b2, a, c):
    g = Tensor(gaussian_smoothing_matrix(8, 1.2))
    lhs = (Tensor((a * b1 + c * b2)[None]) @ g).data
    rhs = a * (Tensor(b1[None]) @ g).data + c * (Tensor(b2[None]) @ g).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def _peak_ratios(beta, size):
    peak = beta.argmax()
    out = []
    for omega in (0.5, 1.0, 2.0, 4.0):
        g = gaussian_smoothing_matrix(size, omega) @ beta
        out.append(g[peak] / g.sum())
    return out


@pytest.mark.parametrize("j", range(12))
def test_wider_omega_spreads_one_hot(j):
    ratios = _peak_ratios(np.eye(12)[j], 12)
    assert all(r1 > r2 for r1, r2 in zip(ratios, ratios[1:]))


# A flat beta has no peak to spread and, near the edges, loses mass out of the
# window faster than the peak does; the property is stated for peaked beta.
@settings(max_examples=200, deadline=None)
@given(
    raw=arrays(np.float64, 12, elements=st.floats(0.01, 1.0)),
    peak=st.integers(0, 11),
    share=st.floats(0.3, 0.95),
)
def test_wider_omega_spreads_peaked_mass(raw, peak, share):
    beta = (1 - share) * raw / raw.sum()
    beta[peak] += share
    ratios = _peak_ratios(beta, 12)
    assert all(r1 > r2 for r1, r2 in zip(ratios, ratios[1:]))


def test_frequency_attention_shape_mismatch():
    params = f64_freq_params(4, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        frequency_attention(Tensor(np.zeros((1, 1, 2, 5))), params)


# channel attention


def test_zero_params_halve():
    rng = np.random.default_rng(0)
    params = f64_channel_params(8, rng)
    for t in params.tensors().values():
        t.data[:] = 0
    x = rng.standard_normal((2, 8, 3, 3))
    np.testing.assert_allclose(channel_weights(Tensor(x), params).data, 0.5)
    np.testing.assert_allclose(channel_attention(Tensor(x), params).data, x / 2)


def test_channel_attention_bounded_and_sign_preserving():
    rng = np.random.default_rng(1)
    params = f64_channel_params(16, rng)
    x = 5 * rng.standard_normal((4, 16, 5, 4))
    out = channel_attention(Tensor(x), params).data
    assert np.all(np.abs(out) <= np.abs(x))
    assert np.all(np.sign(out) == np.sign(x))


@pytest.mark.parametrize("seed", range(10))
def test_channel_attention_formula_oracle(seed):
    rng = np.random.default_rng(seed)
    params = f64_channel_params(8, rng)
    for t in params.tensors().values():
        t.data[:] = rng.standard_normal(t.shape)
    x = rng.standard_normal((2, 8, 4, 3))
    w1, b1 = params.fc1_weight.data, params.fc1_bias.data
    w2, b2 = params.fc2_weight.data, params.fc2_bias.data
    ref = np.empty_like(x)
    for n in range(2):
        avg = np.array([x[n, c].mean() for c in range(8)])
        mx = np.array([x[n, c].max() for c in range(8)])
        h = np.maximum(w1 @ avg + b1 + w1 @ mx + b1, 0)
        aw = 1 / (1 + np.exp(-(w2 @ h + b2)))
        ref[n] = x[n] * aw[:, None, None]
    np.testing.assert_allclose(channel_attention(Tensor(x), params).data, ref, rtol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_channel_attention_gradcheck(seed):
    rng = np.random.default_rng(seed)
    p = f64_channel_params(8, rng)
    for t in p.tensors().values():
        t.data[:] = rng.standard_normal(t.shape)
    x = rng.standard_normal((2, 8, 3, 4))

    def build(x, w1, b1, w2, b2):
        return channel_attention(x, ChannelAttentionParams(w1, b1, w2, b2))

    arrays_ = [x] + [t.data for t in p.tensors().values()]
    assert ag.check_gradients(build, arrays_, seed=seed) < 1e-4


def test_channel_hidden_size():
    assert ChannelAttentionParams.hidden_size(64, 4) == 16
    assert ChannelAttentionParams.hidden_size(2, 4) == 1
    with pytest.raises(ConfigError):
        ChannelAttentionParams.hidden_size(6, 4)


def test_channel_attention_shape_mismatch():
    params = f64_channel_params(8, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        channel_attention(Tensor(np.zeros((1, 4, 2, 2))), params)
