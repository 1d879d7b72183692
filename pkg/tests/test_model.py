import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlcsc.errors import ConfigError, ShapeError
from rlcsc.model import (
    LAYER_NAMES,
    ModelConfig,
    RlcscParams,
    conv_lista,
    depth,
    extract_features,
    forward,
    parameter_count,
    recover_residual,
    residual,
    restore_y,
)
from rlcsc.rng import generator
from rlcsc.tensor import Tensor, add, conv2d, relu, sub
from rlcsc.trainer import he_init

TOY = ModelConfig(n_f=4, m_f=6, K=3)


def random_params(cfg=TOY, seed=0, dtype=np.float64):
    p = he_init(cfg, generator(seed, "test"), dtype=dtype)
    theta = generator(seed, "theta").uniform(0, 0.1, p.theta.shape)
    return p.with_tensors([t.data for t in p.tensors()[:-1]] + [theta])


def image(seed=0, c=1, h=9, w=7, n=2):
    return Tensor(np.random.default_rng(seed).uniform(0, 1, (n, c, h, w)))


def unrolled(params, y):
    """conv_lista written out explicitly, one statement per recursion."""
    Wy = conv2d(y, params.W1)
    z = relu(sub(Wy, params.theta))
    if params.K >= 2:
        z = relu(sub(add(Wy, conv2d(z, params.S)), params.theta))
    if params.K >= 3:
        z = relu(sub(add(Wy, conv2d(z, params.S)), params.theta))
    if params.K >= 4:
        z = relu(sub(add(Wy, conv2d(z, params.S)), params.theta))
    if params.K >= 5:
        z = relu(sub(add(Wy, conv2d(z, params.S)), params.theta))
    if params.K >= 6:
        z = relu(sub(add(Wy, conv2d(z, params.S)), params.theta))
    if params.K >= 7:
        z = relu(sub(add(Wy, conv2d(z, params.S)), params.theta))
    assert params.K <= 7
    return z


class TestParams:
    def test_shapes_from_config(self):
        p = RlcscParams.zeros(ModelConfig())
        assert p.F0.shape == (128, 1, 3, 3)
        assert p.S.shape == (256, 256, 3, 3)
        assert p.H.shape == (1, 128, 3, 3)
        assert p.theta.shape == (1, 256, 1, 1)

    def test_broken_chain_named(self):
        p = RlcscParams.zeros(TOY)
        kw = {n: getattr(p, n) for n in LAYER_NAMES}
        kw["S"] = Tensor(np.zeros((5, 5, 3, 3)))
        with pytest.raises(ShapeError, match="W1.out=6 but S.in=5"):
            RlcscParams(K=3, **kw)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ModelConfig(s=4)
        with pytest.raises(ConfigError):
            ModelConfig(K=0)

    @pytest.mark.parametrize("K,d", [(25, 30), (48, 53), (15, 20), (20, 25)])
    def test_depth(self, K, d):
        assert depth(ModelConfig(K=K)) == d

    def test_parameter_count_independent_of_K(self):
        assert parameter_count(ModelConfig(K=5)) == parameter_count(ModelConfig(K=25))

    def test_reduced_setting_count(self):
        cfg = ModelConfig(n_f=128, m_f=128, K=15)
        assert parameter_count(cfg, include_theta=False) == 592_128
        assert abs(parameter_count(cfg) - 592_000) / 592_000 < 0.01


class TestFeatures:
    def test_zero_weights(self):
        assert not extract_features(RlcscParams.zeros(TOY), image()).data.any()

    def test_identity_kernels_reproduce_input(self):
        p = RlcscParams.zeros(TOY, dtype=np.float64)
        F0 = np.zeros(p.F0.shape)
        F0[0, 0, 1, 1] = 1
        F1 = np.zeros(p.F1.shape)
        F1[0, 0, 1, 1] = 1
        arrays = [t.data for t in p.tensors()]
        arrays[0], arrays[1] = F0, F1
        p = p.with_tensors(arrays)
        x = image()
        y = extract_features(p, x).data
        np.testing.assert_array_equal(y[:, 0], x.data[:, 0])
        assert not y[:, 1:].any()

    def test_matches_manual_composition(self):
        p, x = random_params(), image(1)
        manual = relu(conv2d(relu(conv2d(x, p.F0)), p.F1))
        np.testing.assert_array_equal(extract_features(p, x).data, manual.data)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            extract_features(random_params(), image(c=2))


class TestConvLista:
    def test_single_recursion(self):
        p = random_params().with_K(1)
        y = image(2, c=4)
        expected = relu(sub(conv2d(y, p.W1), p.theta)).data
        np.testing.assert_array_equal(conv_lista(p, y).data, expected)

    def test_zero_S_makes_K_irrelevant(self):
        p = random_params()
        arrays = [t.data for t in p.tensors()]
        arrays[3] = np.zeros_like(arrays[3])
        p = p.with_tensors(arrays)
        y = image(3, c=4)
        ref = conv_lista(p.with_K(1), y).data
        for K in (2, 5, 9):
            np.testing.assert_array_equal(conv_lista(p.with_K(K), y).data, ref)

    @pytest.mark.parametrize("K", [1, 2, 3, 7])
    def test_loop_equals_unrolled(self, K):
        p = random_params().with_K(K)
        y = image(4, c=4)
        np.testing.assert_array_equal(conv_lista(p, y).data, unrolled(p, y).data)

    def test_output_channels(self):
        assert conv_lista(random_params(), image(c=4)).shape == (2, 6, 9, 7)


class TestResidual:
    def test_zero_code(self):
        p = random_params()
        assert not recover_residual(p, Tensor(np.zeros((1, 6, 5, 5)))).data.any()

    def test_zero_H(self):
        p = random_params()
        arrays = [t.data for t in p.tensors()]
        arrays[5] = np.zeros_like(arrays[5])
        p = p.with_tensors(arrays)
        assert not recover_residual(p, image(5, c=6)).data.any()

    def test_manual_composition(self):
        p, z = random_params(), image(6, c=6)
        np.testing.assert_array_equal(recover_residual(p, z).data, conv2d(relu(conv2d(z, p.W2)), p.H).data)


class TestForward:
    def test_zero_params_identity(self):
        x = image(7)
        np.testing.assert_array_equal(forward(RlcscParams.zeros(TOY, np.float64), x).data, x.data)

    def test_residual_identity(self):
        p, x = random_params(), image(8)
        r = residual(p, x)
        np.testing.assert_array_equal(forward(p, x).data, add(x, r).data)
        np.testing.assert_allclose(sub(forward(p, x), x).data, r.data, atol=1e-15)

    @settings(max_examples=10, deadline=None)
    @given(h=st.integers(3, 12), w=st.integers(3, 12), s=st.sampled_from([1, 3, 5]), seed=st.integers(0, 1000))
    def test_shape_preserved(self, h, w, s, seed):
        cfg = ModelConfig(n_f=2, m_f=3, s=s, K=2)
        x = image(seed, h=h, w=w, n=1)
        assert forward(random_params(cfg, seed), x).shape == (1, 1, h, w)


class TestRestoreY:
    def test_zero_model_is_exact_identity(self):
        I_y = np.random.default_rng(0).random((13, 11))
        np.testing.assert_array_equal(restore_y(RlcscParams.zeros(TOY), I_y), I_y)

    def test_matches_forward(self):
        p = random_params()
        I_y = np.random.default_rng(1).random((9, 10))
        out = restore_y(p, I_y)
        np.testing.assert_allclose(out, forward(p, Tensor(I_y[None, None])).data[0, 0], atol=1e-14)
