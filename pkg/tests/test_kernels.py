import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intformer.intmath import AccumulatorOverflow, overflow_policy
from intformer.kernels import (
    LayerNormParams,
    compile_exp,
    compile_gelu,
    h_gelu,
    i_erf,
    i_exp,
    i_gelu,
    i_layernorm,
    i_softmax,
    i_sqrt,
    i_sqrt_array,
    isqrt_iter,
    layernorm_affine,
    run_exp,
)
from intformer.oracles import oracle_exp, oracle_gelu, oracle_layernorm, oracle_softmax
from intformer.quant import QParams, dequantize, quantize

A_ERF, B_ERF = -0.2888, -1.769


class TestErf:
    def test_zero_is_zero(self):
        # sgn(0) = 0 keeps the kernel exactly odd
        q, s = i_erf(np.array([0]), 0.01)
        assert q[0] == 0

    def test_clip_boundary(self):
        S = 1.769 / 200  # -b/S is an integer here up to float error
        q, s = i_erf(np.array([10_000, -10_000]), S)
        bound = abs(A_ERF) * S * (2 * abs(B_ERF) + S)
        assert abs(q[0] * s - 1) <= bound
        assert q[1] == -q[0]

    @settings(max_examples=100, deadline=None)
    @given(S=st.floats(1e-3, 0.1))
    def test_odd_and_bounded(self, S):
        q = np.arange(0, int(4 / S))
        pos, s = i_erf(q, S)
        neg, _ = i_erf(-q, S)
        np.testing.assert_array_equal(neg, -pos)
        assert np.all(np.abs(pos * s) <= 1 + abs(A_ERF) * S * (2 * abs(B_ERF) + S))

    def test_tracks_erf(self):
        from scipy.special import erf

        S = 1e-3
        q = np.arange(-3000, 3001)
        out, s = i_erf(q, S)
        # polynomial error (0.0962 at 0+) plus floor slack
        assert np.max(np.abs(out * s - erf(q * S))) < 0.0962 + 1e-3


class TestGelu:
    def test_zero(self):
        q, _ = i_gelu(np.array([0]), 0.05)
        assert q[0] == 0

    @pytest.mark.parametrize("S", [3 / 127, 3 / 511, 3 / 1023])
    def test_at_three(self, S):
        q = np.array([round(3 / S)])
        out, s = i_gelu(q, S)
        assert oracle_gelu(3.0) == pytest.approx(2.9960, abs=5e-5)
        assert abs(out[0] * s - oracle_gelu(q * S)[0]) <= 0.018

    def test_eleven_bit_input_overflows(self):
        # q * (q_erf + q_1) grows like 1/S**3
        with pytest.raises(AccumulatorOverflow):
            i_gelu(np.array([2047]), 3 / 2047)

    def test_positive_output_scale(self):
        _, s = i_gelu(np.array([5]), 0.1)
        assert s > 0

    def test_overflow(self):
        with pytest.raises(AccumulatorOverflow):
            compile_gelu(1e-4, q_max=40_000)
        with overflow_policy("saturate"):
            compile_gelu(1e-4, q_max=40_000)

    def test_matches_gelu_8bit(self):
        p = QParams.from_alpha(4.0, 8)
        q = np.arange(-127, 128)
        out, s = i_gelu(q, p.scale)
        err = np.abs(out * s - oracle_gelu(q * p.scale))
        assert err.max() < 0.018 + 0.02  # polynomial error + 8-bit floor slack


class TestHGelu:
    def test_real(self):
        assert h_gelu(0.0) == 0.0
        x = np.array([3 / 1.702, 2.0, 5.0])
        np.testing.assert_allclose(h_gelu(x), x)
        assert h_gelu(-3 / 1.702 - 0.1) == 0.0

    def test_integer_form(self):
        p = QParams.from_alpha(4.0, 8)
        t = quantize(np.linspace(-4, 4, 255), p)
        out = dequantize(h_gelu(t))
        ref = h_gelu(dequantize(t))
        assert np.max(np.abs(out - ref)) < 2 * p.scale
        assert h_gelu(quantize([0.0], p)).data[0] == 0


class TestExp:
    def test_at_zero(self):
        S = 1e-3
        out, s = i_exp(np.array([0]), S)
        assert 0.3585 * 1.353**2 + 0.344 == pytest.approx(1.00027, abs=1e-5)
        assert out[0] * s == pytest.approx(1.00027, abs=3e-3)

    def test_minus_ln2(self):
        S = 1e-4
        q = np.array([round(-math.log(2) / S)])
        out, s = i_exp(q, S)
        assert out[0] * s == pytest.approx(0.5, abs=2e-3)

    def test_positive_input_rejected(self):
        with pytest.raises(ValueError):
            i_exp(np.array([1]), 0.1)

    def test_shift_clamp(self):
        out, _ = i_exp(np.array([-(10**6)]), 1e-3)
        assert out[0] == 0

    def test_tracks_exp(self):
        S = 1e-4
        q = -np.arange(0, 100_001)
        out, s = i_exp(q, S)
        assert np.max(np.abs(out * s - oracle_exp(q * S))) < 2.2e-3

    @pytest.mark.parametrize("S", [10 / 127, 1 / 127, 8 / 32767, 1e-3, 1e-4])
    def test_monotone(self, S):
        # exhaustive over the input range [-20, 0]
        plan = compile_exp(S)
        q = np.arange(-int(20 / S), 1)
        out = run_exp(q, plan)
        assert np.all(np.diff(out) >= 0)


class TestSoftmax:
    @pytest.mark.parametrize("k", [1, 2, 7, 64])
    def test_uniform(self, k):
        out, s = i_softmax(np.full(k, 123), 1e-3)
        np.testing.assert_allclose(out * s, 1 / k, atol=2.0**-15 + 1e-3)

    def test_example(self):
        S = 4 / 127
        q = quantize(np.array([2.0, 1.0, 0.1]), QParams.from_alpha(4.0, 8)).data
        out, s = i_softmax(q, S)
        want = oracle_softmax(np.array([2.0, 1.0, 0.1]))
        np.testing.assert_allclose(want, [0.6590, 0.2424, 0.0986], atol=1e-4)
        assert np.max(np.abs(out * s - want)) <= 1e-2

    def test_empty(self):
        with pytest.raises(ValueError):
            i_softmax(np.array([], dtype=np.int64), 0.1)

    def test_rows(self):
        rng = np.random.default_rng(0)
        q = rng.integers(-3000, 3000, (5, 9))
        out, s = i_softmax(q, 1e-3)
        ref = oracle_softmax(q * 1e-3)
        assert np.max(np.abs(out * s - ref)) < 2e-3
        assert np.all(out >= 0)


class TestSqrt:
    def test_small(self):
        assert i_sqrt(0) == 0
        assert i_sqrt(16) == 4
        assert i_sqrt(15) == 3

    def test_int32_max(self):
        r = i_sqrt(2**31 - 1)
        assert r == 46340
        assert r * r <= 2**31 - 1 < (r + 1) ** 2

    def test_negative(self):
        with pytest.raises(ValueError):
            i_sqrt(-1)
        with pytest.raises(ValueError):
            i_sqrt_array(np.array([-1]))

    def test_updates_at_2_31(self):
        # 65536 -> 49152 -> 46421 -> 46341 -> 46340, then the stop test
        assert isqrt_iter(2**31) == (46340, 5)

    def test_array_matches_scalar(self):
        n = np.concatenate([np.arange(0, 5000),
                            np.random.default_rng(0).integers(0, 2**31, 5000)])
        r, u = i_sqrt_array(n)
        want = [isqrt_iter(int(v)) for v in n]
        np.testing.assert_array_equal(r, [w[0] for w in want])
        np.testing.assert_array_equal(u, [w[1] for w in want])
        np.testing.assert_array_equal(r, [math.isqrt(int(v)) for v in n])


class TestLayerNorm:
    def test_constant_input(self):
        out, _ = i_layernorm(np.full((2, 16), 37), 0.1, LayerNormParams.identity(16))
        assert np.all(out == 0)

    def test_pair(self):
        out, s = i_layernorm(np.array([1, -1]), 1.0, LayerNormParams.identity(2))
        # var = 1, sigma = isqrt(1 + eps) = 1
        np.testing.assert_array_equal(out * s, [1.0, -1.0])

    def test_wrong_channels(self):
        with pytest.raises(ValueError):
            i_layernorm(np.zeros(5, np.int64), 1.0, LayerNormParams.identity(4))
        with pytest.raises(ValueError):
            LayerNormParams.identity(0)

    def test_768_channels(self):
        rng = np.random.default_rng(0)
        q = np.round(rng.normal(0, 2000, (50, 768)) + rng.normal(0, 500, (50, 1))).astype(np.int64)
        out, s = i_layernorm(q, 1.0, LayerNormParams.identity(768))
        ref = oracle_layernorm(q.astype(np.float64), eps=1.0)
        assert np.max(np.abs(out * s - ref)) < 1e-2

    def test_affine(self):
        gain = np.linspace(0.5, 1.5, 8)
        bias = np.linspace(-0.2, 0.2, 8)
        params = LayerNormParams.from_real(gain, bias)
        q = np.array([100, -300, 250, 40, -80, 0, 90, 600])
        norm, _ = i_layernorm(q, 1.0, params)
        out, s = layernorm_affine(norm, params)
        ref = oracle_layernorm(q.astype(float), eps=1.0, gain=gain, bias=bias)
        assert np.max(np.abs(out * s - ref)) < 2e-2
