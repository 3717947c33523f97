import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intformer.oracles import (
    CURVES,
    curve_dump,
    erf_poly_real,
    error_report,
    h_gelu_real,
    iexp_quantized,
    iexp_real,
    igelu_quantized,
    igelu_real,
    oracle_erf,
    oracle_exp,
    oracle_gelu,
    oracle_layernorm,
    oracle_softmax,
    relu,
    sigmoid_gelu,
)


class TestReferences:
    def test_gelu_values(self):
        assert oracle_gelu(0.0) == 0.0
        assert oracle_gelu(3.0) == pytest.approx(2.99595, abs=1e-5)
        # Phi(-1) = 0.158655...
        assert oracle_gelu(-1.0) == pytest.approx(-0.158655254, abs=1e-9)

    def test_erf_odd(self):
        x = np.linspace(0, 5, 101)
        np.testing.assert_array_equal(oracle_erf(-x), -oracle_erf(x))

    def test_softmax(self):
        np.testing.assert_allclose(oracle_softmax([2.0, 1.0, 0.1]), [0.6590, 0.2424, 0.0986], atol=1e-4)
        # shift invariance and no overflow at large inputs
        np.testing.assert_allclose(oracle_softmax([1000.0, 1000.0]), [0.5, 0.5])

    def test_layernorm(self):
        out = oracle_layernorm([1.0, -1.0])
        np.testing.assert_allclose(out, [1.0, -1.0])
        np.testing.assert_allclose(oracle_layernorm([1.0, -1.0], gain=[2, 2], bias=[1, 1]), [3.0, -1.0])
        assert np.all(oracle_layernorm(np.full(4, 3.0), eps=1.0) == 0.0)


class TestApproximations:
    def test_erf_poly_clip(self):
        assert erf_poly_real(1.769) == pytest.approx(1.0)
        assert erf_poly_real(10.0) == pytest.approx(1.0)
        assert erf_poly_real(0.0) == 0.0

    def test_igelu_odd_part(self):
        # GELU(x) - GELU(-x) = x, and the approximation keeps that identity
        x = np.linspace(-4, 4, 81)
        np.testing.assert_allclose(igelu_real(x) - igelu_real(-x), x, atol=1e-12)

    def test_h_gelu_matches_kernel_form(self):
        x = np.linspace(-4, 4, 81)
        want = x * np.clip(1.702 * x + 3, 0, 6) / 6
        np.testing.assert_allclose(h_gelu_real(x), want, atol=1e-12)

    def test_sigmoid_gelu(self):
        assert sigmoid_gelu(0.0) == 0.0
        assert sigmoid_gelu(10.0) == pytest.approx(10.0, abs=1e-6)

    def test_iexp_range_reduction(self):
        # exactly -k ln2 reduces to p = 0
        for k in range(5):
            assert iexp_real(-k * math.log(2)) == pytest.approx(
                (0.3585 * 1.353**2 + 0.344) * 2.0**-k, rel=1e-9)

    def test_iexp_rejects_positive(self):
        with pytest.raises(ValueError):
            iexp_real([0.5])

    def test_quantized_variants(self):
        x = np.linspace(-4, 4, 801)
        assert np.max(np.abs(igelu_quantized(x) - oracle_gelu(x))) < 0.04
        xe = np.linspace(-10, 0, 1001)
        assert np.max(np.abs(iexp_quantized(xe) - oracle_exp(xe))) < 2.2e-3


class TestErrorReport:
    def test_identity_zero(self):
        r = error_report(oracle_gelu, oracle_gelu)
        assert r.l2 == 0.0 and r.linf == 0.0 and r.n_points == 8001

    def test_relu_gap(self):
        # max |ReLU - GELU| is attained near x = -0.75
        r = error_report(relu, oracle_gelu)
        assert r.linf == pytest.approx(0.16997, abs=1e-4)

    def test_bad_interval(self):
        with pytest.raises(ValueError):
            error_report(relu, oracle_gelu, 1.0, -1.0)
        with pytest.raises(ValueError):
            error_report(relu, oracle_gelu, n_points=1)

    def test_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            error_report(lambda x: np.where(x == 0, np.nan, x), relu, -1.0, 1.0, 3)

    @settings(max_examples=50, deadline=None)
    @given(c=st.floats(-10, 10))
    def test_constant_offset(self, c):
        r = error_report(lambda x: relu(x) + c, relu, n_points=101)
        assert r.linf == pytest.approx(abs(c), abs=1e-12)
        assert r.l2 == pytest.approx(abs(c), abs=1e-12)


class TestCurveDump:
    def test_shape_and_header(self):
        header, rows = curve_dump(["relu", "gelu"], -4, 4, 11)
        assert header == ["x", "relu", "gelu"]
        assert rows.shape == (11, 3)
        np.testing.assert_allclose(rows[:, 2], oracle_gelu(rows[:, 0]))

    def test_custom_callable(self):
        header, rows = curve_dump([("sq", np.square)], 0, 1, 3)
        assert header == ["x", "sq"]
        np.testing.assert_allclose(rows[:, 1], [0, 0.25, 1])

    def test_unknown(self):
        with pytest.raises(KeyError):
            curve_dump(["nope"], 0, 1, 3)

    def test_registry(self):
        assert {"relu", "gelu", "h_gelu", "i_gelu", "exp", "i_exp"} <= set(CURVES)
