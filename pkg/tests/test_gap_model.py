import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tlpsim.errors import DomainError, ParameterError, UndefinedConditionalError
from tlpsim.gap_model import (
    LogMixtureGap,
    LognormalGap,
    MixtureComponent,
    default_prob,
    expected_loss_frac,
    expected_shortfall,
    gap_cdf,
    gap_distribution_from_dict,
    gap_distribution_to_dict,
    log_moments,
    lognormal_zero_log_drift,
    sample_gaps,
)

TAU_DAY = 1.0 / 252.0
S_03 = 0.3 * math.sqrt(TAU_DAY)  # sigma*sqrt(tau) at 30% annual, one night


def mixture(*comps):
    return LogMixtureGap(tuple(MixtureComponent(*c) for c in comps))


class TestConstruction:
    def test_negative_sigma_rejected(self):
        with pytest.raises(ParameterError):
            LognormalGap(0.0, -0.1, TAU_DAY)

    def test_nonpositive_tau_rejected(self):
        with pytest.raises(ParameterError):
            LognormalGap(0.0, 0.3, 0.0)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ParameterError):
            mixture((0.5, 0.0, 0.01), (0.6, 0.0, 0.01))

    def test_weights_must_be_positive(self):
        with pytest.raises(ParameterError):
            mixture((0.0, 0.0, 0.01), (1.0, 0.0, 0.01))

    def test_empty_mixture_rejected(self):
        with pytest.raises(ParameterError):
            LogMixtureGap(())

    def test_zero_log_drift_helper(self):
        dist = lognormal_zero_log_drift(0.3, TAU_DAY)
        assert dist.mean_log == 0.0
        assert dist.sd_log == pytest.approx(S_03, rel=1e-15)

    def test_dict_round_trip(self):
        for dist in (LognormalGap(0.01, 0.3, TAU_DAY),
                     mixture((0.7, -0.001, 0.01), (0.3, -0.05, 0.04))):
            assert gap_distribution_from_dict(gap_distribution_to_dict(dist)) == dist

    def test_unknown_kind_rejected(self):
        with pytest.raises(ParameterError):
            gap_distribution_from_dict({"kind": "cauchy"})


class TestSampling:
    def test_zero_volatility_gives_exact_ones(self):
        gaps = sample_gaps(LognormalGap(0.0, 0.0, TAU_DAY), seed=123, n=5)
        assert gaps.tolist() == [1.0, 1.0, 1.0, 1.0, 1.0]

    def test_degenerate_component_is_point_mass(self):
        gaps = sample_gaps(mixture((1.0, 0.01, 0.0)), seed=9, n=3)
        assert gaps.tolist() == [math.exp(0.01)] * 3

    def test_all_draws_strictly_positive(self):
        gaps = sample_gaps(mixture((0.5, -0.3, 0.5), (0.5, 0.0, 0.01)), seed=1, n=10_000)
        assert np.all(gaps > 0.0)

    def test_same_seed_byte_identical(self):
        dist = LognormalGap(0.0, 0.3, TAU_DAY)
        a = sample_gaps(dist, seed=42, n=70_000)
        b = sample_gaps(dist, seed=42, n=70_000)
        assert a.tobytes() == b.tobytes()

    def test_different_seed_differs(self):
        dist = LognormalGap(0.0, 0.3, TAU_DAY)
        assert not np.array_equal(sample_gaps(dist, 1, 100), sample_gaps(dist, 2, 100))

    def test_worker_count_does_not_change_output(self):
        # 200k draws span several counter chunks.
        dist = mixture((0.9, -0.0001, 0.01), (0.1, -0.02, 0.05))
        serial = sample_gaps(dist, seed=7, n=200_000, workers=1)
        for workers in (2, 4):
            assert sample_gaps(dist, seed=7, n=200_000, workers=workers).tobytes() \
                == serial.tobytes()

    def test_lognormal_matches_single_component_mixture(self):
        lognormal = LognormalGap(0.0, 0.3, TAU_DAY)
        as_mixture = mixture((1.0, lognormal.mean_log, lognormal.sd_log))
        a = sample_gaps(lognormal, seed=5, n=1000)
        b = sample_gaps(as_mixture, seed=5, n=1000)
        assert a.tobytes() == b.tobytes()

    def test_law_of_large_numbers_drift_convention(self):
        # At mu=0 the log-return mean is -sigma^2*tau/2 (E[gap] = 1).
        dist = LognormalGap(0.0, 0.3, TAU_DAY)
        logs = np.log(sample_gaps(dist, seed=42, n=1_000_000))
        expected = -0.5 * 0.3 ** 2 * TAU_DAY
        assert abs(logs.mean() - expected) < 3.0 * S_03 / 1000.0

    def test_seed_validation(self):
        dist = LognormalGap(0.0, 0.3, TAU_DAY)
        with pytest.raises(ParameterError):
            sample_gaps(dist, seed=-1, n=10)
        with pytest.raises(ParameterError):
            sample_gaps(dist, seed=2 ** 64, n=10)
        with pytest.raises(ParameterError):
            sample_gaps(dist, seed=1.5, n=10)

    def test_n_validation(self):
        with pytest.raises(ParameterError):
            sample_gaps(LognormalGap(0.0, 0.3, TAU_DAY), seed=1, n=0)


class TestCdf:
    def test_median_under_zero_log_drift(self):
        assert gap_cdf(lognormal_zero_log_drift(0.3, TAU_DAY), 1.0) == 0.5

    def test_frozen_value_at_099(self):
        # Phi(ln(0.99) / (0.3 * sqrt(1/252))), fixed via an independent
        # normal-CDF evaluation.
        value = gap_cdf(lognormal_zero_log_drift(0.3, TAU_DAY), 0.99)
        assert value == pytest.approx(0.29742748707850125, abs=1e-12)

    def test_limit_at_infinity(self):
        dist = mixture((0.6, 0.0, 0.02), (0.4, -0.1, 0.1))
        assert gap_cdf(dist, math.inf) == 1.0
        assert gap_cdf(dist, 1e12) == pytest.approx(1.0, abs=1e-15)

    def test_domain_error_for_nonpositive(self):
        dist = LognormalGap(0.0, 0.3, TAU_DAY)
        for x in (0.0, -1.0):
            with pytest.raises(DomainError):
                gap_cdf(dist, x)

    def test_matches_empirical_cdf(self):
        dist = lognormal_zero_log_drift(0.3, TAU_DAY)
        gaps = np.sort(sample_gaps(dist, seed=77, n=1_000_000))
        for x in (0.98, 0.99, 1.0, 1.01):
            empirical = np.searchsorted(gaps, x, side="right") / len(gaps)
            assert abs(gap_cdf(dist, x) - empirical) < 0.002

    @pytest.mark.parametrize("dist", [
        LognormalGap(0.0, 0.3, TAU_DAY),
        lognormal_zero_log_drift(0.15, TAU_DAY),
        mixture((0.9, -0.0001, 0.01), (0.1, -0.02, 0.05)),
        mixture((0.85, -0.0002, 0.018), (0.12, -0.01, 0.045), (0.03, -0.08, 0.06)),
    ])
    def test_kolmogorov_smirnov_consistency(self, dist):
        n = 100_000
        gaps = np.sort(sample_gaps(dist, seed=31, n=n))
        cdf = np.array([gap_cdf(dist, float(x)) for x in gaps[::50]])
        ranks = np.arange(0, n, 50)
        d = np.maximum(np.abs(cdf - (ranks + 1) / n), np.abs(cdf - ranks / n)).max()
        assert d <= 0.01


class TestDefaultProb:
    def test_full_ltv_zero_log_drift_is_half(self):
        assert abs(default_prob(lognormal_zero_log_drift(0.3, TAU_DAY), 1.0) - 0.5) < 1e-12

    def test_vanishes_for_tiny_ltv(self):
        assert default_prob(LognormalGap(0.0, 0.3, TAU_DAY), 1e-6) < 1e-300

    def test_frozen_value_and_monte_carlo_agreement(self):
        dist = lognormal_zero_log_drift(0.3, TAU_DAY)
        pi = default_prob(dist, 0.9)
        assert pi == pytest.approx(1.2365517507377505e-08, rel=1e-9)
        # MC cross-check at a likelier threshold where 1e6 draws resolve it.
        pi97 = default_prob(dist, 0.97)
        gaps = sample_gaps(dist, seed=13, n=1_000_000)
        hits = float(np.mean(gaps <= 0.97))
        se = math.sqrt(pi97 * (1.0 - pi97) / 1_000_000)
        assert abs(pi97 - hits) <= 3.0 * se

    def test_ltv_range_validation(self):
        dist = LognormalGap(0.0, 0.3, TAU_DAY)
        for ltv in (0.0, -0.5, 1.5):
            with pytest.raises(ParameterError):
                default_prob(dist, ltv)

    @given(st.floats(0.05, 0.999), st.floats(0.05, 0.999))
    def test_monotone_in_ltv(self, a, b):
        dist = LognormalGap(0.0, 0.3, TAU_DAY)
        lo, hi = sorted((a, b))
        assert default_prob(dist, lo) <= default_prob(dist, hi)

    @given(st.floats(0.01, 1.5), st.floats(0.01, 1.5), st.floats(0.5, 0.999))
    def test_monotone_in_sigma_at_zero_drift(self, s1, s2, ltv):
        lo, hi = sorted((s1, s2))
        assert default_prob(LognormalGap(0.0, lo, TAU_DAY), ltv) \
            <= default_prob(LognormalGap(0.0, hi, TAU_DAY), ltv) + 1e-15


class TestExpectedLoss:
    def test_no_downside_mass_is_undefined(self):
        with pytest.raises(UndefinedConditionalError):
            expected_loss_frac(LognormalGap(0.0, 0.0, TAU_DAY), 1.0)

    def test_point_mass_below_threshold(self):
        dist = mixture((1.0, math.log(0.95), 0.0))
        assert expected_loss_frac(dist, 1.0) == pytest.approx(0.05, abs=1e-12)

    def test_truncated_lognormal_oracle(self):
        # Closed form at threshold 1 under zero log drift:
        # ell = 1 - exp(s^2/2) * Phi(-s) / Phi(0).
        dist = lognormal_zero_log_drift(0.3, TAU_DAY)
        ell = expected_loss_frac(dist, 1.0)
        assert ell == pytest.approx(0.014901808703663533, rel=1e-12)

    def test_monte_carlo_agreement(self):
        dist = lognormal_zero_log_drift(0.3, TAU_DAY)
        gaps = sample_gaps(dist, seed=99, n=1_000_000)
        below = gaps[gaps < 1.0]
        losses = 1.0 - below
        se = losses.std(ddof=1) / math.sqrt(len(losses))
        assert abs(expected_loss_frac(dist, 1.0) - losses.mean()) <= 3.0 * se

    def test_shortfall_is_pi_times_ell(self):
        dist = mixture((0.8, -0.001, 0.015), (0.2, -0.03, 0.05))
        t = 0.98
        pi_strict = gap_cdf(dist, t)  # continuous: strict and weak agree
        assert expected_shortfall(dist, t) == pytest.approx(
            pi_strict * expected_loss_frac(dist, t), rel=1e-12)

    @given(st.floats(0.5, 1.0), st.floats(0.05, 0.8))
    def test_bounded_by_threshold(self, t, sigma):
        dist = LognormalGap(0.0, sigma, TAU_DAY)
        try:
            ell = expected_loss_frac(dist, t)
        except UndefinedConditionalError:
            return
        assert 0.0 <= ell <= t

    def test_threshold_validation(self):
        dist = LognormalGap(0.0, 0.3, TAU_DAY)
        for t in (0.0, 1.2):
            with pytest.raises(ParameterError):
                expected_loss_frac(dist, t)


def test_log_moments_mixture():
    dist = mixture((0.5, -0.02, 0.01), (0.5, 0.02, 0.03))
    mean, sd = log_moments(dist)
    assert mean == pytest.approx(0.0, abs=1e-15)
    assert sd == pytest.approx(math.sqrt(0.5 * (0.01 ** 2 + 0.02 ** 2)
                                         + 0.5 * (0.03 ** 2 + 0.02 ** 2)), rel=1e-12)
