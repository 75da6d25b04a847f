import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from uvrc.entropy import (
    LIKELIHOOD_FLOOR,
    N_SCALES,
    FactorizedDensity,
    bits_tensor,
    estimate_bits,
    gaussian_likelihood,
    gaussian_tables,
    scale_index,
    scale_table,
    support,
)

# independent oracle: mpmath at 30 digits, erf-based bin mass
P0_SIGMA1 = 0.382924922548026
BITS_P0 = 1.38486653429099


def test_gaussian_center_bin_oracle():
    assert gaussian_likelihood(np.array(0.0), 1.0) == pytest.approx(P0_SIGMA1, abs=1e-14)
    t = gaussian_likelihood(torch.tensor(0.0, dtype=torch.float64), 1.0)
    assert t.item() == pytest.approx(P0_SIGMA1, abs=1e-14)


def test_gaussian_mass_sums_to_one():
    k = np.arange(-30, 31)
    assert gaussian_likelihood(k, 1.0).sum() >= 1 - 1e-9


@given(st.floats(-50, 50), st.floats(1e-3, 100))
def test_gaussian_symmetric(k, sigma):
    a = gaussian_likelihood(np.array(k), sigma)
    b = gaussian_likelihood(np.array(-k), sigma)
    assert a == b
    assert 0 <= a <= 1


def test_sigma_bound_enforced():
    with pytest.raises(ValueError):
        gaussian_likelihood(np.zeros(3), 1e-6)
    with pytest.raises(ValueError):
        gaussian_likelihood(torch.zeros(3), torch.full((3,), 1e-6))


def test_estimate_bits_cases():
    assert estimate_bits(np.full(256, 1 / 256)) == pytest.approx(2048)
    assert estimate_bits(np.ones(10)) == 0.0
    assert estimate_bits(np.array([P0_SIGMA1])) == pytest.approx(BITS_P0, abs=1e-10)
    assert estimate_bits(torch.tensor([0.5, 0.25])) == pytest.approx(3.0)


@pytest.mark.parametrize("bad", [[0.0], [-0.1], [np.nan]])
def test_estimate_bits_rejects(bad):
    with pytest.raises(ValueError):
        estimate_bits(np.array(bad))


def test_bits_tensor_floor():
    b = bits_tensor(torch.tensor([0.0, 1.0]))
    assert b.item() == pytest.approx(-np.log2(LIKELIHOOD_FLOOR))


def test_scale_index_nearest_in_log():
    table = scale_table()
    assert table.size == N_SCALES
    rng = np.random.default_rng(0)
    sig = np.exp(rng.uniform(np.log(0.05), np.log(100), 500))
    brute = np.argmin(np.abs(np.log(sig)[:, None] - np.log(table)[None]), axis=1)
    assert np.array_equal(scale_index(sig), brute)


def test_gaussian_tables_cover_support():
    tabs = gaussian_tables()
    assert len(tabs) == N_SCALES
    s = support()
    for t in tabs[::9]:
        assert t.min_sym == s[0] and t.max_sym == s[-1] and t.escape


@pytest.fixture
def density():
    d = FactorizedDensity(4)
    d.reset_biases(torch.Generator().manual_seed(0))
    return d


def test_factorized_likelihood_range(density):
    z = torch.zeros(1, 4, 3, 3)
    z[:, :, 1, 1] = 2.0
    p = density.likelihood(z)
    assert torch.all((p > 0) & (p < 1))
    # identical symbols in one channel get identical likelihoods
    assert torch.all(p[0, :, 0, 0:1] == p[0, :, 0, :])


def test_factorized_pmf_mass(density):
    pmf = density.pmf_table()
    assert np.all(pmf >= 0)
    assert np.all(pmf.sum(axis=1) >= 1 - 1e-6)


def test_pmf_table_does_not_mutate(density):
    before = [p.detach().clone() for p in density.parameters()]
    density.pmf_table()
    assert all(torch.equal(a, b) for a, b in zip(before, density.parameters()))
    assert all(p.dtype == torch.float32 for p in density.parameters())


def test_factorized_gradients_flow(density):
    z = torch.randn(2, 4, 3, 3, generator=torch.Generator().manual_seed(1))
    bits_tensor(density.likelihood(z)).backward()
    assert all(p.grad is not None and torch.isfinite(p.grad).all() for p in density.parameters())


@given(st.floats(0.01, 50))
def test_gaussian_decreasing_in_magnitude(sigma):
    p = gaussian_likelihood(np.arange(0, 40), sigma)
    assert np.all(np.diff(p) <= 0)


def test_coder_matches_likelihood_estimate():
    from uvrc.rangecoder import range_decode, range_encode

    rng = np.random.default_rng(4)
    n = 20_000
    sigma = np.exp(rng.uniform(np.log(0.5), np.log(20), n))
    k = np.round(rng.normal(0, sigma)).astype(np.int64)
    tabs = gaussian_tables()
    tables = [tabs[i] for i in scale_index(sigma)]
    payload = range_encode(k, tables)
    assert range_decode(payload, tables, n) == k.tolist()
    est = estimate_bits(gaussian_likelihood(k, sigma))
    assert abs(8 * len(payload) / est - 1) < 0.05
