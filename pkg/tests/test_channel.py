import math

import numpy as np
import pytest
from scipy import integrate, stats

from mixsim.channel import (ChannelSet, CsiModel, InsufficientTailDataError,
                            InvalidConfigError, chi2_pdf_cdf, corrupt_csi,
                            order_stat_pdf, rng_stream, sample_channel_batch,
                            sample_channels, tail_exponent)

from oracle_values import CHI2_CDF_N2_X4


def test_sample_channels_mean_norm():
    H = sample_channel_batch(3, 1, 10 ** 6, rng_stream(1, "mean", 0))
    n2 = np.sum(np.abs(H) ** 2, axis=(1, 2))
    se = n2.std() / math.sqrt(n2.size)
    assert abs(n2.mean() - 6) < 3 * se


def test_sample_channels_real_imag_unit_variance():
    H = sample_channel_batch(2, 2, 10 ** 5, rng_stream(2, "var", 0))
    assert H.real.var() == pytest.approx(1, abs=0.01)
    assert H.imag.var() == pytest.approx(1, abs=0.01)


def test_single_antenna_cdf_is_exponential():
    H = sample_channel_batch(1, 1, 10 ** 5, rng_stream(3, "n1", 0))
    x = np.abs(H.ravel()) ** 2
    ks = stats.kstest(x, lambda t: 1 - np.exp(-t / 2))
    assert ks.pvalue > 0.01


def test_norms_follow_chi2_ks():
    H = sample_channel_batch(4, 1, 10 ** 5, rng_stream(4, "ks", 0))
    x = np.sum(np.abs(H) ** 2, axis=(1, 2))
    ks = stats.kstest(x, lambda t: chi2_pdf_cdf(t, 4)[1])
    # 1% critical value of the KS distance
    assert ks.statistic < 1.628 / math.sqrt(x.size)


def test_single_user_ordering(rng):
    cs = sample_channels(1, 1, rng)
    assert cs.H.shape == (1, 1)
    assert cs.ordering.tolist() == [0]


def test_k_greater_than_n_rejected(rng):
    with pytest.raises(InvalidConfigError):
        sample_channels(2, 3, rng)


def test_ordering_ties_by_index():
    H = np.array([[1, 2, 1], [0, 0, 0], [0, 0, 0]], dtype=complex)
    assert ChannelSet(H).ordering.tolist() == [1, 0, 2]


def test_reordering_invariance(rng):
    cs = sample_channels(4, 4, rng)
    perm = rng.permutation(4)
    cs2 = ChannelSet(cs.H[:, perm])
    assert np.allclose(cs.norms2[cs.ordering], cs2.norms2[cs2.ordering])


def test_ranks_inverse_of_ordering(rng):
    cs = sample_channels(5, 4, rng)
    assert np.array_equal(cs.ranks()[cs.ordering], np.arange(4))


def test_chi2_values():
    assert chi2_pdf_cdf(0.0, 1) == (0.5, 0.0)
    for N in (1, 3, 6):
        assert chi2_pdf_cdf(0.0, N)[1] == 0.0
    assert chi2_pdf_cdf(4.0, 2)[1] == pytest.approx(CHI2_CDF_N2_X4, rel=1e-12)
    with pytest.raises(ValueError):
        chi2_pdf_cdf(-1.0, 2)


def test_chi2_pdf_matches_scipy():
    x = np.linspace(0.01, 30, 50)
    pdf, cdf = chi2_pdf_cdf(x, 3)
    assert np.allclose(pdf, stats.chi2(6).pdf(x), rtol=1e-12)
    assert np.allclose(cdf, stats.chi2(6).cdf(x), rtol=1e-12)


def test_order_stat_single_user_is_chi2():
    for x in (0.1, 1.0, 7.5):
        assert order_stat_pdf(x, 1, 1, 3) == pytest.approx(chi2_pdf_cdf(x, 3)[0])


@pytest.mark.parametrize("k,K,N", [(1, 2, 1), (2, 2, 1), (1, 3, 2), (2, 3, 3)])
def test_order_stat_leading_exponent(k, K, N):
    # density ~ c x^(N(K-k+1)-1) near the origin
    xs = np.array([1e-7, 1e-6])
    f = [order_stat_pdf(x, k, K, N) for x in xs]
    slope = np.diff(np.log(f)) / np.diff(np.log(xs))
    assert slope[0] == pytest.approx(N * (K - k + 1) - 1, abs=1e-3)


@pytest.mark.parametrize("k,K,N", [(1, 1, 1), (1, 3, 2), (2, 3, 2), (3, 3, 2), (2, 4, 4)])
def test_order_stat_integrates_to_one(k, K, N):
    val, _ = integrate.quad(order_stat_pdf, 0, np.inf, args=(k, K, N), epsabs=1e-12)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_order_stat_matches_simulated_maximum():
    # three independent 2-antenna users (more users than antennas is fine here)
    H = np.concatenate([sample_channel_batch(2, 1, 10 ** 5, rng_stream(5, "max", i))
                        for i in range(3)], axis=2)
    top = np.sum(np.abs(H) ** 2, axis=1).max(axis=1)
    cdf = lambda t: np.asarray(chi2_pdf_cdf(t, 2)[1]) ** 3
    assert stats.kstest(top, cdf).pvalue > 0.01


def test_order_stat_bad_rank():
    with pytest.raises(InvalidConfigError):
        order_stat_pdf(1.0, 0, 3, 2)


def test_corrupt_perfect_is_identity(rng):
    cs = sample_channels(3, 2, rng)
    assert corrupt_csi(cs, CsiModel(), 100.0, rng) is cs


def test_corrupt_fixed_variance():
    cs = ChannelSet(np.zeros((4, 4), dtype=complex))
    r = rng_stream(6, "csi", 0)
    errs = np.concatenate([corrupt_csi(cs, CsiModel("fixed", 0.1), 1.0, r).H.ravel()
                           for _ in range(62_500)])
    v = np.abs(errs) ** 2
    assert abs(v.mean() - 0.1) < 3 * v.std() / math.sqrt(v.size)
    assert errs.real.var() == pytest.approx(0.05, rel=0.01)


def test_corrupt_keeps_true_ordering(rng):
    cs = sample_channels(3, 3, rng)
    est = corrupt_csi(cs, CsiModel("fixed", 5.0), 1.0, rng)
    assert np.array_equal(est.ordering, cs.ordering)


def test_power_scaled_variance():
    assert CsiModel("power_scaled").variance(99.0) == pytest.approx(0.01)
    assert CsiModel("fixed", 0.1).variance(1e6) == 0.1


def test_csi_model_validation():
    with pytest.raises(InvalidConfigError):
        CsiModel("perfect", 0.1)
    with pytest.raises(InvalidConfigError):
        CsiModel("noisy", 0.1)


def test_tail_exponent_chi2():
    H = sample_channel_batch(2, 1, 10 ** 6, rng_stream(7, "tail", 0))
    x = np.sum(np.abs(H) ** 2, axis=(1, 2))
    assert tail_exponent(x, (0.05, 0.5)) == pytest.approx(2.0, abs=0.2)


def test_tail_exponent_uniform(rng):
    x = rng.random(10 ** 5)
    assert tail_exponent(x, (0.01, 0.1)) == pytest.approx(1.0, abs=0.05)


def test_tail_exponent_needs_samples(rng):
    with pytest.raises(InsufficientTailDataError):
        tail_exponent(rng.random(10 ** 5), (1e-6, 1e-4))


def test_rng_streams_independent_of_order():
    a = rng_stream(1, "exp", 3).standard_normal(4)
    rng_stream(1, "exp", 2).standard_normal(100)
    b = rng_stream(1, "exp", 3).standard_normal(4)
    c = rng_stream(1, "other", 3).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
