import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wrecon.autodiff import ShapeError, Tensor, backward, sum_all
from wrecon.wavelet import (
    SubbandSet,
    dwt2_haar,
    dwt_layer,
    dwt_stack,
    iwt2_haar,
    iwt_layer,
    iwt_stack,
)
from helpers import assert_grad_match, check_param_grads, random_projection_loss

RNG = np.random.default_rng(77)


def test_hand_case_2x2():
    s = dwt2_haar(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32))
    assert s.ll[0, 0] == pytest.approx(5.0)
    assert s.lh[0, 0] == pytest.approx(-2.0)
    assert s.hl[0, 0] == pytest.approx(-1.0)
    assert s.hh[0, 0] == pytest.approx(0.0)
    # energy: 1+4+9+16 = 25+4+1+0
    assert 30.0 == pytest.approx(s.ll**2 + s.lh**2 + s.hl**2 + s.hh**2)


def test_constant_image_has_zero_detail():
    v = 0.37
    s = dwt2_haar(np.full((1, 1, 4, 4), v, dtype=np.float32))
    np.testing.assert_array_equal(s.ll, np.full((1, 1, 2, 2), 2 * v, dtype=np.float32))
    np.testing.assert_array_equal(s.lh, np.zeros((1, 1, 2, 2), dtype=np.float32))
    np.testing.assert_array_equal(s.hl, np.zeros((1, 1, 2, 2), dtype=np.float32))
    np.testing.assert_array_equal(s.hh, np.zeros((1, 1, 2, 2), dtype=np.float32))


def test_inverse_of_constant_ll():
    s = SubbandSet(ll=np.array([[2.0]], dtype=np.float32),
                   lh=np.zeros((1, 1), dtype=np.float32),
                   hl=np.zeros((1, 1), dtype=np.float32),
                   hh=np.zeros((1, 1), dtype=np.float32))
    np.testing.assert_allclose(iwt2_haar(s), np.ones((2, 2), dtype=np.float32))


def test_zero_subbands_give_zero_image():
    z = np.zeros((2, 3, 4, 4), dtype=np.float32)
    np.testing.assert_array_equal(iwt2_haar(SubbandSet(z, z, z, z)),
                                  np.zeros((2, 3, 8, 8), dtype=np.float32))


def test_round_trip_both_ways():
    x = RNG.uniform(-1, 1, (8, 8)).astype(np.float32)
    np.testing.assert_allclose(iwt2_haar(dwt2_haar(x)), x, atol=1e-5)
    y = RNG.uniform(-1, 1, (1, 8, 4, 4)).astype(np.float32)
    np.testing.assert_allclose(iwt_stack(dwt_stack(iwt_stack(y))), iwt_stack(y), atol=1e-5)
    np.testing.assert_allclose(dwt_stack(iwt_stack(y)), y, atol=1e-5)


def test_odd_dims_rejected():
    with pytest.raises(ShapeError):
        dwt2_haar(np.zeros((3, 4), dtype=np.float32))
    with pytest.raises(ShapeError):
        dwt_layer(Tensor(np.zeros((1, 1, 4, 6 + 1), dtype=np.float32)))


def test_subband_shape_mismatch_rejected():
    a = np.zeros((2, 2), dtype=np.float32)
    with pytest.raises(ShapeError):
        iwt2_haar(SubbandSet(a, a, a, np.zeros((2, 3), dtype=np.float32)))


def test_channels_not_divisible_by_four_rejected():
    with pytest.raises(ShapeError):
        iwt_layer(Tensor(np.zeros((1, 6, 4, 4), dtype=np.float32)))


@settings(max_examples=25, deadline=None)
@given(
    h=st.integers(1, 8).map(lambda k: 2 * k),
    w=st.integers(1, 8).map(lambda k: 2 * k),
    seed=st.integers(0, 2**16),
)
def test_property_round_trip_and_energy(h, w, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, (h, w)).astype(np.float32)
    s = dwt2_haar(x)
    np.testing.assert_allclose(iwt2_haar(s), x, atol=1e-5)
    e_in = float(np.sum(np.square(x, dtype=np.float64)))
    e_out = float(sum(np.sum(np.square(b, dtype=np.float64)) for b in (s.ll, s.lh, s.hl, s.hh)))
    assert e_out == pytest.approx(e_in, rel=1e-5)


def test_linearity():
    x = RNG.uniform(-1, 1, (6, 6)).astype(np.float32)
    y = RNG.uniform(-1, 1, (6, 6)).astype(np.float32)
    left = dwt2_haar(2.0 * x + 3.0 * y)
    right_ll = 2.0 * dwt2_haar(x).ll + 3.0 * dwt2_haar(y).ll
    np.testing.assert_allclose(left.ll, right_ll, atol=1e-5)


def test_adjoint_identity():
    x = RNG.uniform(-1, 1, (1, 2, 8, 8)).astype(np.float32)
    g = RNG.uniform(-1, 1, (1, 8, 4, 4)).astype(np.float32)
    lhs = float(np.vdot(dwt_stack(x).astype(np.float64), g.astype(np.float64)))
    rhs = float(np.vdot(x.astype(np.float64), iwt_stack(g).astype(np.float64)))
    assert lhs == pytest.approx(rhs, abs=1e-4)


def test_dwt_layer_constant_and_shapes():
    out = dwt_layer(Tensor(np.ones((1, 1, 2, 2), dtype=np.float32)))
    np.testing.assert_allclose(out.data[0, :, 0, 0], [2.0, 0.0, 0.0, 0.0])
    out2 = dwt_layer(Tensor(np.zeros((2, 16, 32, 32), dtype=np.float32)))
    assert out2.data.shape == (2, 64, 16, 16)
    out3 = iwt_layer(Tensor(np.zeros((1, 64, 16, 16), dtype=np.float32)))
    assert out3.data.shape == (1, 16, 32, 32)


def test_iwt_layer_round_trip_identity():
    x = RNG.uniform(-1, 1, (1, 8, 4, 4)).astype(np.float32)
    out = iwt_layer(dwt_layer(Tensor(iwt_stack(x))))
    np.testing.assert_allclose(out.data, iwt_stack(x), atol=1e-5)


def test_layer_grads_match_finite_differences():
    x = Tensor(RNG.uniform(-1, 1, (1, 2, 4, 4)).astype(np.float32), requires_grad=True)

    def make_dwt_loss():
        return random_projection_loss(dwt_layer(x), np.random.default_rng(9))

    assert_grad_match(check_param_grads(make_dwt_loss, [x]), worst_tol=1e-2)

    y = Tensor(RNG.uniform(-1, 1, (1, 4, 2, 2)).astype(np.float32), requires_grad=True)

    def make_iwt_loss():
        return random_projection_loss(iwt_layer(y), np.random.default_rng(10))

    assert_grad_match(check_param_grads(make_iwt_loss, [y]), worst_tol=1e-2)


def test_layer_gradient_flows_losslessly():
    # orthonormal map: backward of ones has unit norm per element block
    x = Tensor(RNG.uniform(-1, 1, (1, 1, 4, 4)).astype(np.float32), requires_grad=True)
    backward(sum_all(dwt_layer(x)))
    g64 = x.grad.astype(np.float64)
    assert float(np.sum(g64 * g64)) == pytest.approx(4 * 16 / 4, rel=1e-5)
