import itertools

import numpy as np
import pytest
from scipy.stats import chisquare

from pairstats.errors import DegenerateInputError, ValidationError
from pairstats.loop_detector import (
    CalibrationResult,
    ClickDistribution,
    DetectorResponse,
    PathWeights,
    apply_response,
    calibrate,
    format_calibration,
    format_response,
    parse_calibration,
    parse_response,
    response_matrix,
    simulate_clicks,
    simulate_clicks_batch,
    uniform_weights,
)
from pairstats.model import EffectiveSource, JointDistribution, joint_distribution


def enumerate_click_matrix(w, n_max):
    """Exhaustive reference: weight every photon-to-path assignment."""
    B = len(w)
    P = np.zeros((B + 1, n_max + 1))
    for n in range(n_max + 1):
        for assign in itertools.product(range(B), repeat=n):
            prob = 1.0
            for path in assign:
                prob *= w[path]
            P[len(set(assign)), n] += prob
    return P


class TestPathWeights:
    def test_sum_checked(self):
        with pytest.raises(ValidationError):
            PathWeights(np.array([0.5, 0.4]))

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            PathWeights(np.array([1.2, -0.2]))

    def test_uniform(self):
        w = uniform_weights(8)
        assert w.B == 8
        assert np.allclose(w.w, 0.125)


class TestResponseMatrix:
    def test_uniform_eight_paths(self):
        resp = response_matrix(uniform_weights(8), 4)
        assert resp.P[1, 1] == pytest.approx(1.0, abs=1e-14)
        assert resp.P[2, 2] == pytest.approx(7.0 / 8.0, abs=1e-14)
        assert resp.P[1, 2] == pytest.approx(1.0 / 8.0, abs=1e-14)

    def test_single_path_saturates(self):
        resp = response_matrix(uniform_weights(1), 5)
        assert np.all(resp.P[1, 1:] == 1.0)
        assert resp.P[0, 0] == 1.0

    def test_brute_force_uniform(self):
        w = np.full(8, 0.125)
        reference = enumerate_click_matrix(w, 4)
        resp = response_matrix(PathWeights(w), 4)
        assert np.abs(resp.P - reference).max() <= 1e-12

    def test_brute_force_nonuniform(self):
        rng = np.random.default_rng(5)
        raw = rng.random(6)
        w = raw / raw.sum()
        reference = enumerate_click_matrix(w, 4)
        resp = response_matrix(PathWeights(w), 4)
        assert np.abs(resp.P - reference).max() <= 1e-12

    def test_column_stochastic_random_weights(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            raw = rng.random(8)
            resp = response_matrix(PathWeights(raw / raw.sum()), 20)
            assert np.abs(resp.P.sum(axis=0) - 1.0).max() <= 1e-12

    def test_permutation_symmetry(self):
        rng = np.random.default_rng(3)
        raw = rng.random(8)
        w = raw / raw.sum()
        base = response_matrix(PathWeights(w), 10)
        perm = response_matrix(PathWeights(w[::-1].copy()), 10)
        assert np.abs(base.P - perm.P).max() <= 1e-13

    def test_zero_above_diagonal(self):
        resp = response_matrix(uniform_weights(4), 10)
        for k in range(1, 5):
            assert np.all(resp.P[k, :k] == 0.0)


class TestSimulateClicks:
    def test_zero_photons(self):
        rng = np.random.default_rng(0)
        assert simulate_clicks(0, uniform_weights(8), rng) == 0

    def test_one_photon(self):
        rng = np.random.default_rng(0)
        assert all(
            simulate_clicks(1, uniform_weights(8), rng) == 1 for _ in range(100)
        )

    def test_two_photons_match_P22(self):
        rng = np.random.default_rng(123)
        trials = 1_000_000
        ks = simulate_clicks_batch(np.full(trials, 2), uniform_weights(8), rng)
        phat = np.mean(ks == 2)
        sigma = np.sqrt(0.875 * 0.125 / trials)
        assert abs(phat - 0.875) <= 3.0 * sigma

    def test_chi_square_against_matrix_columns(self):
        rng = np.random.default_rng(2024)
        weights = uniform_weights(8)
        resp = response_matrix(weights, 5)
        trials = 1_000_000
        ks = simulate_clicks_batch(np.full(trials, 5), weights, rng)
        observed = np.bincount(ks, minlength=9)
        expected = resp.P[:, 5] * trials
        keep = expected > 5
        result = chisquare(observed[keep], expected[keep] * observed[keep].sum() / expected[keep].sum())
        assert result.pvalue > 0.001

    def test_batch_matches_scalar_law(self):
        rng = np.random.default_rng(8)
        ks = simulate_clicks_batch(np.array([0, 1, 1, 0]), uniform_weights(8), rng)
        assert ks.tolist() == [0, 1, 1, 0]


class TestCalibrate:
    def test_uniform_counts(self):
        cal = calibrate([100] * 8)
        assert np.allclose(cal.weights.w, 0.125)
        assert cal.total == 800

    def test_proportionality(self):
        cal = calibrate([200, 100, 100, 100, 100, 100, 100, 0])
        assert cal.weights.w[0] == pytest.approx(0.25)
        assert np.allclose(cal.weights.w[1:7], 0.125)
        assert cal.weights.w[7] == 0.0
        assert cal.stderr[7] == 0.0

    def test_all_zero_rejected(self):
        with pytest.raises(DegenerateInputError):
            calibrate([0, 0, 0, 0])

    def test_multinomial_recovery_within_4_sigma(self):
        rng = np.random.default_rng(31)
        raw = rng.random(8)
        w = raw / raw.sum()
        counts = rng.multinomial(100_000, w)
        cal = calibrate(counts)
        for i in range(8):
            sigma = np.sqrt(w[i] * (1 - w[i]) / 100_000)
            assert abs(cal.weights.w[i] - w[i]) <= 4.0 * sigma

    def test_non_integer_rejected(self):
        with pytest.raises(ValidationError):
            calibrate([1.5, 2.0])


class TestApplyResponse:
    def test_vacuum(self):
        rho = JointDistribution(np.eye(1), 0, 0.0)
        resp = response_matrix(uniform_weights(8), 0)
        clicks = apply_response(rho, resp, resp)
        assert clicks.p[0, 0] == pytest.approx(1.0, abs=1e-14)

    def test_single_pair_lossless(self):
        probs = np.zeros((2, 2))
        probs[1, 1] = 1.0
        rho = JointDistribution(probs, 1, 0.0)
        resp = response_matrix(uniform_weights(8), 1)
        clicks = apply_response(rho, resp, resp)
        assert clicks.p[1, 1] == pytest.approx(1.0, abs=1e-12)

    def test_closed_form_p22(self):
        # p[2,2] = sum_n 2^-(n+1) P[2,n]^2 for the diagonal geometric source
        src = EffectiveSource(N=1.0, eta=1.0, eta_prime=1.0, M=1.0)
        n_max = 40
        rho = joint_distribution(src, n_max)
        resp = response_matrix(uniform_weights(8), n_max)
        clicks = apply_response(rho, resp, resp)
        n = np.arange(n_max + 1)
        direct = float(np.sum(0.5 ** (n + 1) * resp.P[2] ** 2))
        assert clicks.p[2, 2] == pytest.approx(direct, rel=1e-12)

    def test_mass_preserved_up_to_tail(self):
        src = EffectiveSource(N=0.8, eta=0.4, eta_prime=0.9, M=3.0)
        rho = joint_distribution(src, 15)
        resp = response_matrix(uniform_weights(8), 15)
        clicks = apply_response(rho, resp, resp)
        assert clicks.p.sum() == pytest.approx(1.0 - rho.tail_mass, abs=1e-12)
        assert clicks.deficit == rho.tail_mass

    def test_dimension_mismatch(self):
        src = EffectiveSource(N=0.8, eta=0.4, eta_prime=0.9, M=3.0)
        rho = joint_distribution(src, 15)
        resp = response_matrix(uniform_weights(8), 10)
        with pytest.raises(ValidationError):
            apply_response(rho, resp, resp)


class TestResponseValidation:
    def test_p11_enforced(self):
        weights = uniform_weights(2)
        bad = np.array([[1.0, 0.2, 0.0], [0.0, 0.8, 0.5], [0.0, 0.0, 0.5]])
        with pytest.raises(ValidationError):
            DetectorResponse(P=bad, weights=weights)

    def test_column_sum_enforced(self):
        weights = uniform_weights(1)
        bad = np.array([[1.0, 0.0], [0.0, 0.9]])
        with pytest.raises(ValidationError):
            DetectorResponse(P=bad, weights=weights)


class TestSerialization:
    def test_response_round_trip(self):
        rng = np.random.default_rng(17)
        raw = rng.random(8)
        resp = response_matrix(PathWeights(raw / raw.sum()), 12)
        again = parse_response(format_response(resp))
        assert np.array_equal(again.P, resp.P)
        assert np.array_equal(again.weights.w, resp.weights.w)

    def test_calibration_round_trip(self):
        cal = calibrate([120, 80, 95, 110, 140, 77, 101, 99])
        again = parse_calibration(format_calibration(cal))
        assert np.array_equal(again.weights.w, cal.weights.w)
        assert np.array_equal(again.stderr, cal.stderr)
        assert again.total == cal.total

    def test_click_distribution_validation(self):
        with pytest.raises(ValidationError):
            ClickDistribution(p=np.array([[0.5, 0.2], [0.2, 0.2]]), deficit=0.0)
