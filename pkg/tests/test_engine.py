import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tinyeegnet.arch import EEGNetConfig, model1_config, peak_two_buffer_bytes, standard_config
from tinyeegnet.engine import (BatchNorm, EngineError, Scratch, apply_norm, avgpool_time, batchnorm,
                               conv_temporal_same, depthwise_spatial, elu, fc_softmax, fold_batchnorm,
                               infer, infer_batch, random_weights, same_padding, scratch_plan,
                               separable_time, softmax, zero_weights)
from tinyeegnet.oracle import oracle_infer

EPS = 1e-3


# -- brute-force references (independent of the vectorized code) ------------

def brute_conv_same(x, kernels):
    n_s, n_ch = x.shape
    k = kernels.shape[1]
    left = (k - 1) // 2
    out = np.zeros((n_s, n_ch, len(kernels)))
    for t in range(n_s):
        for c in range(n_ch):
            for f in range(len(kernels)):
                out[t, c, f] = sum(kernels[f, j] * x[t + j - left, c]
                                   for j in range(k) if 0 <= t + j - left < n_s)
    return out


def brute_depthwise(x, kernels):
    n_s, n_ch, _ = x.shape
    out = np.zeros((n_s, 1, len(kernels)))
    for t in range(n_s):
        for m in range(len(kernels)):
            out[t, 0, m] = sum(kernels[m, c] * x[t, c, m // 2] for c in range(n_ch))
    return out


def brute_separable(x, dw, pw):
    L = x.shape[0]
    left = (dw.shape[1] - 1) // 2
    depth = np.zeros((L, 16))
    for t in range(L):
        for m in range(16):
            depth[t, m] = sum(dw[m, j] * x[t + j - left, 0, m]
                              for j in range(dw.shape[1]) if 0 <= t + j - left < L)
    return np.array([[pw @ depth[t]] for t in range(L)])


# -- temporal convolution ---------------------------------------------------

def test_same_padding_split():
    assert same_padding(128) == (63, 64)
    assert same_padding(43) == (21, 21)
    assert same_padding(1) == (0, 0)


@pytest.mark.parametrize("nf", [1, 4, 5, 43, 128])
def test_conv_impulse_is_identity(rng, nf):
    x = rng.normal(size=(30, 3, 1)).astype(np.float32)
    k = np.zeros((8, nf), np.float32)
    k[:, (nf - 1) // 2] = 1
    y = conv_temporal_same(x, k)
    assert y.shape == (30, 3, 8)
    np.testing.assert_array_equal(y, np.repeat(x, 8, axis=2))


def test_conv_dc_response(rng):
    k = rng.normal(size=(8, 7)).astype(np.float32)
    y = conv_temporal_same(np.full((40, 2, 1), 1.5, np.float32), k)
    np.testing.assert_allclose(y[3:-3], np.broadcast_to(1.5 * k.sum(1), (34, 2, 8)), rtol=1e-5)


def test_conv_matches_brute_force(rng):
    x = rng.normal(size=(12, 3)).astype(np.float32)
    k = rng.normal(size=(8, 4)).astype(np.float32)
    np.testing.assert_allclose(conv_temporal_same(x, k), brute_conv_same(x.astype(float), k.astype(float)),
                               atol=1e-5)


def test_conv_rejects_multimap_input():
    with pytest.raises(EngineError):
        conv_temporal_same(np.zeros((10, 2, 2)), np.zeros((8, 3)))


# -- batch norm -------------------------------------------------------------

def test_batchnorm_identity(rng):
    x = rng.normal(size=(10, 3, 8)).astype(np.float32)
    np.testing.assert_allclose(batchnorm(x, BatchNorm.identity(8, EPS), EPS), x, rtol=1e-6)


def test_batchnorm_zero_gamma_gives_beta(rng):
    x = rng.normal(size=(10, 3, 8)).astype(np.float32)
    beta = rng.normal(size=8).astype(np.float32)
    bn = BatchNorm(np.zeros(8, np.float32), beta, rng.normal(size=8), np.ones(8))
    np.testing.assert_array_equal(batchnorm(x, bn, EPS), np.broadcast_to(beta, x.shape))


def test_fold_trivial_cases():
    f = fold_batchnorm(BatchNorm.identity(4, EPS), EPS)
    np.testing.assert_allclose(f.scale, 1, rtol=1e-7)
    np.testing.assert_allclose(f.shift, 0, atol=1e-7)
    bn = BatchNorm(np.full(4, 2.0), np.full(4, 3.0), np.zeros(4), np.full(4, 1 - EPS))
    f = fold_batchnorm(bn, EPS)
    np.testing.assert_allclose(f.scale, 2, rtol=1e-7)
    np.testing.assert_allclose(f.shift, 3, rtol=1e-7)


def test_fold_matches_unfolded(rng):
    for _ in range(50):
        n = 16
        bn = BatchNorm(rng.uniform(-2, 2, n).astype(np.float32), rng.normal(size=n).astype(np.float32),
                       rng.normal(size=n).astype(np.float32), rng.uniform(0, 3, n).astype(np.float32))
        x = rng.normal(0, 3, size=(20, 1, n)).astype(np.float32)
        a = batchnorm(x, bn, EPS)
        b = apply_norm(x, fold_batchnorm(bn, EPS))
        assert np.abs(a - b).max() <= 1e-6 * np.abs(a).max()


def test_batchnorm_rejects_nonpositive_denominator():
    bn = BatchNorm(np.ones(2), np.zeros(2), np.zeros(2), np.zeros(2))
    with pytest.raises(EngineError):
        batchnorm(np.ones((3, 1, 2)), bn, eps=0.0)
    with pytest.raises(EngineError):
        BatchNorm(np.ones(2), np.zeros(2), np.zeros(2), -np.ones(2))


# -- depthwise --------------------------------------------------------------

def test_depthwise_selector(rng):
    x = rng.normal(size=(9, 5, 8)).astype(np.float32)
    k = np.zeros((16, 5), np.float32)
    k[:, 3] = 1
    y = depthwise_spatial(x, k)
    for m in range(16):
        np.testing.assert_array_equal(y[:, 0, m], x[:, 3, m // 2])


def test_depthwise_constant_channels(rng):
    x = np.repeat(rng.normal(size=(9, 1, 8)), 5, axis=1).astype(np.float32)
    k = rng.normal(size=(16, 5)).astype(np.float32)
    y = depthwise_spatial(x, k)
    np.testing.assert_allclose(y[:, 0, :], x[:, 0, np.arange(16) // 2] * k.sum(1), rtol=1e-5, atol=1e-6)


def test_depthwise_brute_force(rng):
    x = rng.normal(size=(7, 5, 8)).astype(np.float32)
    k = rng.normal(size=(16, 5)).astype(np.float32)
    np.testing.assert_allclose(depthwise_spatial(x, k), brute_depthwise(x, k), atol=1e-5)


def test_depthwise_shape_mismatch():
    with pytest.raises(EngineError):
        depthwise_spatial(np.zeros((4, 5, 8)), np.zeros((16, 4)))


# -- elu / pooling / separable / softmax ------------------------------------

def test_elu_values():
    y = elu(np.array([0.0, 1.5, -20.0]))
    assert y[0] == 0 and y[1] == np.float32(1.5)
    assert abs(float(y[2]) - (np.exp(-20.0) - 1)) < 1e-7


def test_avgpool_cases():
    ramp = np.arange(10, dtype=np.float32).reshape(10, 1, 1)
    np.testing.assert_array_equal(avgpool_time(ramp, 3, 3).ravel(), [1, 4, 7])
    np.testing.assert_array_equal(avgpool_time(ramp, 1, 1), ramp)
    const = np.full((17, 1, 4), 0.3, np.float32)
    np.testing.assert_allclose(avgpool_time(const, 8), np.full((2, 1, 4), 0.3), rtol=1e-6)
    with pytest.raises(EngineError):
        avgpool_time(ramp, 11)


def test_separable_identity_and_permutation(rng):
    x = rng.normal(size=(9, 1, 16)).astype(np.float32)
    dw = np.zeros((16, 16), np.float32)
    dw[:, 7] = 1
    np.testing.assert_array_equal(separable_time(x, dw, np.eye(16, dtype=np.float32)), x)
    perm = rng.permutation(16)
    P = np.eye(16, dtype=np.float32)[perm]
    np.testing.assert_array_equal(separable_time(x, dw, P), x[:, :, perm])


def test_separable_brute_force(rng):
    x = rng.normal(size=(9, 1, 16)).astype(np.float32)
    dw = rng.normal(size=(16, 16)).astype(np.float32)
    pw = rng.normal(size=(16, 16)).astype(np.float32)
    np.testing.assert_allclose(separable_time(x, dw, pw), brute_separable(x, dw, pw), atol=1e-4)


def test_softmax_uniform_and_oracle(rng):
    p, _ = fc_softmax(np.zeros(5), np.zeros((5, 4)), np.zeros(4))
    np.testing.assert_allclose(p, 0.25, atol=1e-7)
    z = rng.normal(size=4)
    ref = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(softmax(z), ref, atol=1e-7)


def test_fc_dimension_mismatch():
    with pytest.raises(EngineError):
        fc_softmax(np.zeros(5), np.zeros((6, 4)), np.zeros(4))


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=4), st.floats(-100, 100))
def test_softmax_simplex_and_shift(logits, c):
    p = softmax(logits)
    q = softmax(np.asarray(logits) + c)
    assert np.all(p >= 0) and abs(float(p.sum()) - 1) <= 1e-6
    np.testing.assert_allclose(p, q, atol=1e-6)
    assert np.argmax(p) == np.argmax(q) or np.isclose(np.sort(p)[-1], np.sort(p)[-2])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10).filter(lambda a: abs(a) > 1e-3))
def test_convolutions_linear(seed, alpha):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(20, 3, 1)).astype(np.float32)
    k = rng.normal(size=(8, 5)).astype(np.float32)
    a = np.float32(alpha)
    for f, args in ((conv_temporal_same, (x, k)),):
        np.testing.assert_allclose(f(a * x, *args[1:]), a * f(*args), rtol=1e-5, atol=1e-5 * abs(alpha))
    h = rng.normal(size=(20, 3, 8)).astype(np.float32)
    d = rng.normal(size=(16, 3)).astype(np.float32)
    np.testing.assert_allclose(depthwise_spatial(a * h, d), a * depthwise_spatial(h, d),
                               rtol=1e-5, atol=1e-5 * abs(alpha))
    s = rng.normal(size=(12, 1, 16)).astype(np.float32)
    dw, pw = rng.normal(size=(2, 16, 16)).astype(np.float32)
    np.testing.assert_allclose(separable_time(a * s, dw, pw), a * separable_time(s, dw, pw),
                               rtol=1e-5, atol=1e-4 * abs(alpha))


# -- full network -----------------------------------------------------------

def test_infer_zero_network_is_uniform():
    cfg = model1_config()
    p, _ = infer(np.zeros((cfg.n_samples, cfg.n_channels)), zero_weights(cfg), cfg)
    np.testing.assert_allclose(p, 0.25, atol=1e-7)


def test_infer_matches_oracle_small(rng):
    cfg = EEGNetConfig.from_ds(24, 4, 4, ds=3)
    w = random_weights(cfg, rng)
    x = rng.normal(size=(24, 4)).astype(np.float32)
    p, k = infer(x, w, cfg)
    q, j = oracle_infer(x, w, cfg)
    assert np.abs(p - q).max() <= 1e-4 and k == j


def test_infer_fixture_argmax(data_dir):
    from tinyeegnet.bundle import load_bundle
    from tinyeegnet.ingest import read_windows
    w, cfg = load_bundle(data_dir / "model1_fixture.eegw")
    x = read_windows(data_dir / "model1_windows.bin")
    got = [infer(win.T, w, cfg)[1] for win in x]
    assert got == [0, 0, 0, 0, 3, 2, 0, 0]
    np.testing.assert_allclose(infer(x[0].T, w, cfg)[0], [0.855183, 0.00241, 0.08887, 0.053537], atol=1e-5)


def test_infer_batch_consistent(rng):
    cfg = EEGNetConfig.from_ds(32, 3, 3, ds=2)
    w = random_weights(cfg, rng)
    xs = rng.normal(size=(5, 32, 3)).astype(np.float32)
    batch = infer_batch(xs, w, cfg)
    for i in range(5):
        np.testing.assert_array_equal(batch[i], infer(xs[i], w, cfg)[0])


def test_infer_errors(rng):
    cfg = model1_config()
    w = random_weights(cfg, rng)
    with pytest.raises(EngineError, match="window shape"):
        infer(np.zeros((52, 38)), w, cfg)
    bad = np.zeros((cfg.n_samples, cfg.n_channels))
    bad[0, 0] = np.nan
    with pytest.raises(EngineError, match="non-finite"):
        infer(bad, w, cfg)
    with pytest.raises(EngineError):
        infer(np.zeros((cfg.n_samples, cfg.n_channels)), random_weights(standard_config(), 0), cfg)


def test_folded_and_unfolded_weights_agree(rng):
    cfg = model1_config()
    w = random_weights(cfg, rng)
    x = rng.normal(size=(cfg.n_samples, cfg.n_channels)).astype(np.float32)
    p, _ = infer(x, w, cfg)
    q, _ = infer(x, w.fold(), cfg)
    np.testing.assert_allclose(p, q, rtol=1e-6)
    r, _ = oracle_infer(x, w.fold(), cfg)
    assert np.abs(p - r).max() <= 1e-4


def test_scratch_plan_matches_allocations(rng):
    for cfg in (standard_config(), model1_config(), EEGNetConfig.from_ds(64, 1, 2, ds=1)):
        plan = scratch_plan(cfg)
        assert plan.total_bytes >= peak_two_buffer_bytes(cfg)
        scratch = Scratch(plan)
        x = rng.normal(size=(cfg.n_samples, cfg.n_channels)).astype(np.float32)
        infer(x, random_weights(cfg, rng), cfg, scratch=scratch)
        assert scratch.used == plan.stage_elements
    # for the standard and Model 1 configs the two buffers are exactly the two-buffer peak
    for cfg in (standard_config(), model1_config()):
        assert scratch_plan(cfg).total_bytes == peak_two_buffer_bytes(cfg)


def test_flatten_lengths():
    assert standard_config().flatten == 112
    assert model1_config().flatten == 32
    assert random_weights(model1_config(), 0).fc_weights.shape == (32, 4)
