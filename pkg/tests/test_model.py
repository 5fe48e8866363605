"""Tests for the analytic photocount model and Klyshko estimator."""

import math

import numpy as np
import pytest

from photoncal.errors import InvalidParameterError, TruncationError
from photoncal.model import (
    JointDistribution,
    JointHistogram,
    TwinBeamParams,
    detect_pmf,
    joint_photocount_dist,
    klyshko_efficiency,
    multimode_thermal_pmf,
    sample_photocounts,
)


def single_arm_dist(params, arm, n_support=128):
    """Independent single-arm route: convolve photon pmfs, then detect once."""
    n = np.arange(n_support)
    pair = multimode_thermal_pmf(params.pair_modes, params.pair_mean, n)
    if arm == "s":
        noise = multimode_thermal_pmf(params.noise_modes_s, params.noise_mean_s, n)
        eta, dark = params.eta_s, params.dark_s
    else:
        noise = multimode_thermal_pmf(params.noise_modes_i, params.noise_mean_i, n)
        eta, dark = params.eta_i, params.dark_i
    return detect_pmf(np.convolve(pair, noise), eta, dark)


class TestMultimodeThermalPmf:
    def test_vacuum(self):
        assert multimode_thermal_pmf(1, 0.0, 0) == 1.0
        assert multimode_thermal_pmf(1, 0.0, 3) == 0.0

    def test_single_mode_geometric(self):
        # B^n / (1+B)^(n+1) with B = 1
        assert multimode_thermal_pmf(1, 1.0, 1) == pytest.approx(0.25, abs=1e-15)

    def test_two_mode_vacuum_probability(self):
        assert multimode_thermal_pmf(2, 0.5, 0) == pytest.approx(1.5 ** -2, abs=1e-15)

    def test_matches_direct_formula_on_grid(self):
        from math import gamma

        for modes, mean in [(0.7, 0.3), (2.5, 1.2), (3.0, 2.0)]:
            for n in range(6):
                direct = (
                    gamma(n + modes)
                    / (gamma(n + 1) * gamma(modes))
                    * (mean / (1 + mean)) ** n
                    * (1 + mean) ** -modes
                )
                assert multimode_thermal_pmf(modes, mean, n) == pytest.approx(direct, rel=1e-12)

    def test_normalizes(self):
        pmf = multimode_thermal_pmf(2.3, 1.7, np.arange(400))
        assert pmf.sum() == pytest.approx(1.0, abs=1e-12)

    def test_invalid_parameters(self):
        with pytest.raises(InvalidParameterError):
            multimode_thermal_pmf(0.0, 1.0, 0)
        with pytest.raises(InvalidParameterError):
            multimode_thermal_pmf(1.0, -0.5, 0)


class TestDetectPmf:
    def test_lossless_identity(self):
        pmf = np.array([0.0, 0.0, 0.0, 1.0])
        out = detect_pmf(pmf, 1.0, 0.0)
        assert np.array_equal(out, pmf)

    def test_single_bernoulli(self):
        out = detect_pmf(np.array([0.0, 1.0]), 0.5, 0.0)
        assert out == pytest.approx([0.5, 0.5], abs=1e-15)

    def test_binomial_expansion(self):
        out = detect_pmf(np.array([0.0, 0.0, 1.0]), 0.5, 0.0)
        assert out == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)

    def test_zero_eta_gives_poisson_darks(self):
        out = detect_pmf(np.array([0.2, 0.3, 0.5]), 0.0, 1.3)
        k = np.arange(out.size)
        expected = np.exp(-1.3) * 1.3 ** k / np.array([math.factorial(int(i)) for i in k])
        assert out == pytest.approx(expected, abs=1e-12)

    def test_tail_below_guarantee(self):
        out = detect_pmf(np.array([0.5, 0.5]), 0.9, 2.0)
        assert 1.0 - out.sum() < 1e-10

    def test_invalid_eta(self):
        with pytest.raises(InvalidParameterError):
            detect_pmf(np.array([1.0]), 1.5, 0.0)


class TestJointPhotocountDist:
    def test_vacuum(self):
        dist = joint_photocount_dist(TwinBeamParams(), c_max=4)
        assert dist.probs[0, 0] == pytest.approx(1.0, abs=1e-15)
        assert dist.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_lossless_pairs_are_diagonal_geometric(self):
        params = TwinBeamParams(pair_modes=1, pair_mean=1.0, eta_s=1.0, eta_i=1.0)
        dist = joint_photocount_dist(params, c_max=20)
        for n in range(8):
            assert dist.probs[n, n] == pytest.approx(2.0 ** (-n - 1), rel=1e-12)
        off = dist.probs - np.diag(np.diag(dist.probs))
        assert np.all(off == 0.0)
        # mass beyond the window is clamped into the boundary bin
        assert dist.probs[20, 20] == pytest.approx(2.0 ** -20, rel=1e-9)

    def test_one_arm_thinned(self):
        params = TwinBeamParams(pair_modes=1, pair_mean=1.0, eta_s=1.0, eta_i=0.5)
        dist = joint_photocount_dist(params, c_max=20)
        assert dist.probs[1, 0] == pytest.approx(0.125, rel=1e-12)
        assert dist.probs[1, 1] == pytest.approx(0.125, rel=1e-12)

    def test_truncation_error_when_support_unrepresentable(self):
        params = TwinBeamParams(pair_modes=2, pair_mean=1e7)
        with pytest.raises(TruncationError):
            joint_photocount_dist(params, c_max=4)

    def test_invalid_c_max(self):
        with pytest.raises(InvalidParameterError):
            joint_photocount_dist(TwinBeamParams(), c_max=0)

    def test_arm_swap_is_exact_transpose(self):
        params = TwinBeamParams(
            pair_modes=1.4, pair_mean=0.8,
            noise_modes_s=1.0, noise_mean_s=0.2,
            noise_modes_i=2.0, noise_mean_i=0.05,
            eta_s=0.6, eta_i=0.3, dark_s=0.1, dark_i=0.02,
        )
        a = joint_photocount_dist(params, c_max=10).probs
        b = joint_photocount_dist(params.swapped(), c_max=10).probs
        assert np.array_equal(a, b.T)

    def test_symmetric_params_give_symmetric_matrix(self):
        params = TwinBeamParams(pair_mean=0.7, noise_mean_s=0.1, noise_mean_i=0.1,
                                eta_s=0.4, eta_i=0.4, dark_s=0.05, dark_i=0.05)
        probs = joint_photocount_dist(params, c_max=8).probs
        assert np.array_equal(probs, probs.T)

    @pytest.mark.parametrize("eta_s,eta_i,noise", [(0.9, 0.4, 0.0), (0.5, 0.5, 0.3), (0.2, 0.8, 0.1)])
    def test_marginals_match_single_arm_route(self, eta_s, eta_i, noise):
        params = TwinBeamParams(
            pair_modes=1.5, pair_mean=0.9,
            noise_mean_s=noise, noise_mean_i=noise / 2,
            eta_s=eta_s, eta_i=eta_i, dark_s=0.04, dark_i=0.01,
        )
        dist = joint_photocount_dist(params, c_max=16)
        for arm, marginal in [("s", dist.signal_marginal), ("i", dist.idler_marginal)]:
            full = single_arm_dist(params, arm)
            ref = np.concatenate([full[:16], [full[16:].sum()]])
            assert np.max(np.abs(marginal - ref)) < 1e-12

    def test_normalization_across_grid(self):
        for mean in (0.0, 0.3, 1.5):
            for eta in (0.0, 0.35, 1.0):
                params = TwinBeamParams(pair_mean=mean, eta_s=eta, eta_i=0.7,
                                        noise_mean_s=0.2, dark_i=0.1)
                dist = joint_photocount_dist(params, c_max=24)
                assert 1.0 - dist.probs.sum() < 1e-9

    def test_mean_idler_count_increases_with_eta_i(self):
        params = TwinBeamParams(pair_mean=0.8, noise_mean_i=0.1)
        c = np.arange(21)
        means = []
        for eta_i in (0.1, 0.3, 0.5, 0.7, 0.9):
            dist = joint_photocount_dist(
                TwinBeamParams(pair_mean=0.8, noise_mean_i=0.1, eta_i=eta_i), c_max=20
            )
            means.append(dist.idler_marginal @ c)
        assert np.all(np.diff(means) > 0)

    def test_monte_carlo_oracle_small(self):
        params = TwinBeamParams(
            pair_modes=2.0, pair_mean=0.6, noise_mean_s=0.3, noise_mean_i=0.1,
            eta_s=0.55, eta_i=0.8, dark_s=0.05, dark_i=0.2,
        )
        dist = joint_photocount_dist(params, c_max=12)
        counts = sample_photocounts(params, 200_000, seed=11)
        hist = np.zeros((13, 13))
        np.add.at(hist, (np.minimum(counts[:, 0], 12), np.minimum(counts[:, 1], 12)), 1)
        assert np.max(np.abs(hist / 2e5 - dist.probs)) < 4.0 * np.sqrt(0.25 / 2e5)


class TestKlyshkoEfficiency:
    def test_perfect_pairs(self):
        h = np.zeros((2, 2), dtype=np.int64)
        h[1, 1] = 10
        eta_s, eta_i = klyshko_efficiency(JointHistogram(h, n_frames=10))
        assert (eta_s, eta_i) == (1.0, 1.0)

    def test_uniform_quarter(self):
        f = np.array([[0.25, 0.25], [0.25, 0.25]])
        assert klyshko_efficiency(f) == pytest.approx((0.5, 0.5), abs=1e-15)

    def test_vacuum_mixture_of_lossless_pairs(self):
        f = np.array([[0.5, 0.0], [0.0, 0.5]])
        assert klyshko_efficiency(f) == pytest.approx((1.0, 1.0), abs=1e-15)

    def test_can_exceed_one_for_unpaired_fields(self):
        # independent arms with mean 2 each: <cs ci> = 4, <c> = 2 -> "eta" = 2
        c = np.arange(30)
        pois = np.exp(-2.0) * 2.0 ** c / np.array([float(math.factorial(int(i))) for i in c])
        f = np.outer(pois, pois)
        eta_s, eta_i = klyshko_efficiency(f)
        assert eta_s > 1.0 and eta_i > 1.0

    def test_limit_recovers_planted_efficiencies(self):
        for eta_s in (0.2, 0.5, 0.9):
            for eta_i in (0.2, 0.5, 0.9):
                params = TwinBeamParams(pair_mean=1e-4, eta_s=eta_s, eta_i=eta_i)
                est = klyshko_efficiency(joint_photocount_dist(params, c_max=6))
                assert est[0] == pytest.approx(eta_s, abs=1e-3)
                assert est[1] == pytest.approx(eta_i, abs=1e-3)

    def test_empty_histogram_rejected(self):
        with pytest.raises(InvalidParameterError):
            klyshko_efficiency(np.zeros((3, 3)))

    def test_zero_marginal_rejected(self):
        f = np.zeros((3, 3))
        f[0, 1] = 1.0  # idler fires, signal never does
        with pytest.raises(InvalidParameterError):
            klyshko_efficiency(f)


class TestDomainTypes:
    def test_params_validation(self):
        with pytest.raises(InvalidParameterError):
            TwinBeamParams(pair_modes=0.0)
        with pytest.raises(InvalidParameterError):
            TwinBeamParams(eta_s=1.2)
        with pytest.raises(InvalidParameterError):
            TwinBeamParams(dark_i=-0.1)

    def test_histogram_mass_must_match_frames(self):
        with pytest.raises(InvalidParameterError):
            JointHistogram(np.ones((2, 2), dtype=int), n_frames=3)

    def test_histogram_frequencies_sum_to_one(self):
        h = JointHistogram(np.array([[3, 1], [0, 4]]), n_frames=8)
        assert h.frequencies.sum() == 1.0
        assert h.c_max == 1

    def test_distribution_rejects_bad_mass(self):
        with pytest.raises(InvalidParameterError):
            JointDistribution(np.full((2, 2), 0.2), c_max=1)


def test_sampler_is_deterministic():
    params = TwinBeamParams(pair_mean=0.5, eta_s=0.4, eta_i=0.6, noise_mean_s=0.1)
    a = sample_photocounts(params, 1000, seed=5)
    b = sample_photocounts(params, 1000, seed=5)
    assert np.array_equal(a, b)
