import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uvrc.errors import ShapeError
from uvrc.quantization import (
    quantize_mean_shift,
    quantize_noise,
    quantize_round,
    round_half_away,
)

finite = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)


def test_noise_within_half():
    t = torch.linspace(-5, 5, 1000)
    out = quantize_noise(t, seed=3)
    assert torch.all((out - t).abs() <= 0.5)


def test_noise_seeded():
    t = torch.zeros(100)
    assert torch.equal(quantize_noise(t, 7, step=2), quantize_noise(t, 7, step=2))
    assert not torch.equal(quantize_noise(t, 7, step=2), quantize_noise(t, 7, step=3))
    assert not torch.equal(quantize_noise(t, 7, tensor_id=0), quantize_noise(t, 7, tensor_id=1))


def test_noise_moments_monte_carlo():
    t = torch.zeros(10**6, dtype=torch.float64)
    u = (quantize_noise(t, 11) - t).numpy()
    assert abs(u.mean()) < 0.002
    assert abs(u.var() - 1 / 12) / (1 / 12) < 0.02
    assert u.min() >= -0.5 and u.max() < 0.5


@pytest.mark.parametrize("v,expected", [(0.49, 0.0), (0.5, 1.0), (-0.5, -1.0), (2.5, 3.0), (-1.49, -1.0)])
def test_round_ties_away(v, expected):
    assert quantize_round(np.array([v]))[0] == expected
    assert quantize_round(torch.tensor([v]))[0].item() == expected


def test_round_integers_fixed():
    ints = np.arange(-50, 51, dtype=np.float64)
    assert np.array_equal(quantize_round(ints), ints)


@given(arrays(np.float64, 20, elements=finite))
def test_round_bound_and_idempotent(a):
    r = quantize_round(a)
    assert np.all(np.abs(r - a) <= 0.5)
    assert np.array_equal(quantize_round(r), r)


def test_mean_shift_example():
    out = quantize_mean_shift(np.array([1.3]), np.array([0.4]))
    assert out[0] == pytest.approx(1.4)


def test_mean_shift_zero_mean_is_round():
    y = np.linspace(-3, 3, 101)
    assert np.array_equal(quantize_mean_shift(y, np.zeros_like(y)), round_half_away(y))


@given(arrays(np.float64, 20, elements=finite), arrays(np.float64, 20, elements=finite))
def test_mean_shift_properties(y, mu):
    out = quantize_mean_shift(y, mu)
    k = out - mu
    assert np.allclose(k, np.round(k), atol=1e-6 * (1 + np.abs(mu).max()))
    assert np.all(np.abs(out - y) <= 0.5 + 1e-9 * (1 + np.abs(y).max() + np.abs(mu).max()))


def test_mean_shift_shape_mismatch():
    with pytest.raises(ShapeError):
        quantize_mean_shift(np.zeros(3), np.zeros(4))
