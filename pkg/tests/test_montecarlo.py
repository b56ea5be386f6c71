"""Tests for synthesis, the reference oracles and ROC evaluation."""

import math

import numpy as np
import pytest
from scipy import special as sps

from eigensense import (
    BayesDetector,
    DomainError,
    EigenSpectrum,
    EnergyDetector,
    ExactCount,
    ExactNoise,
    InputError,
    NumericError,
    PriorConfig,
    RocCurve,
    Scenario,
    detection_log_ratio,
    exact_n1_likelihood_oracle,
    log_simo_signal_likelihood,
    mc_signal_likelihood_oracle,
    roc_metrics,
    run_roc,
    synthesize_observation,
)
from eigensense import montecarlo as mc
from eigensense.montecarlo import _exact_n1_log, _gaussian_loglikes, _synthesize_block
from eigensense.spectra import SampleMatrix, _gram_eigenvalues_batch, gram_eigenvalues


def _prior(sigma2=1.0, m=1):
    return PriorConfig(ExactCount(m), ExactNoise(sigma2))


class TestScenario:
    def test_sigma2_from_snr(self):
        assert Scenario(2, 4, 1, 0.0, 10, 1).sigma2 == pytest.approx(1.0)
        assert Scenario(2, 4, 1, -3.0, 10, 1).sigma2 == pytest.approx(10 ** 0.3, rel=1e-12)
        assert Scenario(2, 4, 1, 10.0, 10, 1).sigma2 == pytest.approx(0.1, rel=1e-12)

    def test_validation(self):
        with pytest.raises(DomainError):
            Scenario(0, 4, 1, 0.0, 10, 1)
        with pytest.raises(DomainError):
            Scenario(2, 4, 0, 0.0, 10, 1)
        with pytest.raises(DomainError):
            Scenario(2, 4, 1, 0.0, 0, 1)
        with pytest.raises(DomainError):
            Scenario(2, 4, 1, math.nan, 10, 1)
        with pytest.raises(DomainError):
            Scenario(2, 4, 1, 0.0, 10, -1)


class TestSynthesis:
    def test_deterministic(self):
        s = Scenario(3, 6, 1, 0.0, 100, 42)
        a = synthesize_observation(s, "H1", 7)
        b = synthesize_observation(s, "H1", 7)
        assert np.array_equal(a.entries, b.entries)

    def test_trials_and_hypotheses_are_independent_streams(self):
        s = Scenario(3, 6, 1, 0.0, 100, 42)
        y0 = synthesize_observation(s, "H0", 3).entries
        y1 = synthesize_observation(s, "H1", 3).entries
        y0b = synthesize_observation(s, "H0", 4).entries
        assert not np.array_equal(y0, y1)
        assert not np.array_equal(y0, y0b)

    def test_block_matches_scalar_bit_exact(self):
        s = Scenario(2, 5, 2, -2.0, 64, 9)
        block = _synthesize_block(s, 1, 10, 20)
        for i in range(20):
            single = synthesize_observation(s, "H1", 10 + i)
            assert np.array_equal(block[i], single.entries)

    def test_shape_and_bounds(self):
        s = Scenario(4, 8, 1, 0.0, 10, 5)
        y = synthesize_observation(s, "H0", 0)
        assert y.entries.shape == (4, 8)
        with pytest.raises(InputError):
            synthesize_observation(s, "H2", 0)
        with pytest.raises(InputError):
            synthesize_observation(s, "H0", 10)
        with pytest.raises(InputError):
            synthesize_observation(s, "H0", -1)

    def test_noise_power_calibration(self):
        # Under H0 the mean per-entry energy estimates sigma2.
        s = Scenario(2, 4, 1, -3.0, 4000, 2718)
        block = _synthesize_block(s, 0, 0, s.n_trials)
        per_trial = (np.abs(block) ** 2).mean(axis=(1, 2))
        mean = per_trial.mean()
        se = per_trial.std(ddof=1) / math.sqrt(s.n_trials)
        assert abs(mean - s.sigma2) < 3 * se

    def test_signal_power_calibration(self):
        # Under H1 with unit-power sources the per-entry energy is sigma2 + 1
        # regardless of the source count (the channel is scaled by 1/sqrt(m)).
        for m in (1, 2):
            s = Scenario(3, 6, m, 0.0, 4000, 99)
            block = _synthesize_block(s, 1, 0, s.n_trials)
            per_trial = (np.abs(block) ** 2).mean(axis=(1, 2))
            mean = per_trial.mean()
            se = per_trial.std(ddof=1) / math.sqrt(s.n_trials)
            assert abs(mean - (s.sigma2 + 1.0)) < 4 * se


class TestGaussianLoglikes:
    def test_rank1_matches_eig_path(self):
        rng = np.random.default_rng(17)
        n, L, b = 4, 7, 50
        y = rng.standard_normal((n, L)) + 1j * rng.standard_normal((n, L))
        w = y @ y.conj().T
        h = (rng.standard_normal((b, n, 1)) + 1j * rng.standard_normal((b, n, 1))) / np.sqrt(2)
        fast = _gaussian_loglikes(w, L, 0.7, h, use_rank1=True)
        general = _gaussian_loglikes(w, L, 0.7, h, use_rank1=False)
        assert fast == pytest.approx(general, rel=1e-11)

    def test_rank1_requires_single_column(self):
        w = np.eye(2, dtype=complex)
        h = np.zeros((3, 2, 2), dtype=complex)
        with pytest.raises(DomainError):
            _gaussian_loglikes(w, 4, 1.0, h, use_rank1=True)


class TestMcOracle:
    def _observation(self):
        s = Scenario(2, 4, 1, 0.0, 10, 314)
        return synthesize_observation(s, "H1", 2)

    def test_deterministic(self):
        y = self._observation()
        a, se_a = mc_signal_likelihood_oracle(y, 1, 1.0, 2000, seed=5)
        b, se_b = mc_signal_likelihood_oracle(y, 1, 1.0, 2000, seed=5)
        assert a.log_magnitude == b.log_magnitude
        assert se_a == se_b

    def test_error_scales_as_inverse_sqrt(self):
        y = self._observation()
        _, se_small = mc_signal_likelihood_oracle(y, 1, 1.0, 10_000, seed=8)
        _, se_big = mc_signal_likelihood_oracle(y, 1, 1.0, 1_000_000, seed=8)
        assert se_small / se_big == pytest.approx(10.0, rel=0.2)

    def test_agrees_with_closed_form(self):
        y = self._observation()
        spec = gram_eigenvalues(y)
        closed = log_simo_signal_likelihood(spec, 1.0).log_magnitude
        est, se = mc_signal_likelihood_oracle(y, 1, 1.0, 200_000, seed=21)
        assert abs(closed - est.log_magnitude) < 3 * se

    def test_validation(self):
        y = self._observation()
        with pytest.raises(DomainError):
            mc_signal_likelihood_oracle(y, 0, 1.0, 2000, seed=1)
        with pytest.raises(DomainError):
            mc_signal_likelihood_oracle(y, 1, 1.0, 10, seed=1)
        with pytest.raises(DomainError):
            mc_signal_likelihood_oracle(y, 1, -1.0, 2000, seed=1)


class TestExactSingleSensorOracle:
    def test_known_value_at_origin(self):
        # With L=1, sigma2=1, x=0 the integral reduces to (e/pi) E1(1).
        expected = math.log(math.e / math.pi * sps.exp1(1.0))
        assert _exact_n1_log(0.0, 1.0, 1) == pytest.approx(expected, abs=1e-10)

    def test_matches_closed_form(self):
        for x1, sigma2, L in [(0.5, 1.0, 2), (3.0, 0.8, 4), (12.0, 1.5, 8), (0.0, 1.0, 3)]:
            spec = EigenSpectrum([x1], L)
            closed = log_simo_signal_likelihood(spec, sigma2).log_magnitude
            assert _exact_n1_log(x1, sigma2, L) == pytest.approx(closed, abs=1e-8)

    def test_linear_domain_wrapper(self):
        assert exact_n1_likelihood_oracle(1.0, 1.0, 2) == pytest.approx(
            math.exp(_exact_n1_log(1.0, 1.0, 2)), rel=1e-12)

    def test_validation(self):
        with pytest.raises(DomainError):
            _exact_n1_log(-1.0, 1.0, 2)
        with pytest.raises(DomainError):
            _exact_n1_log(1.0, 0.0, 2)
        with pytest.raises(DomainError):
            _exact_n1_log(1.0, 1.0, 0)


class TestRunRoc:
    def _scenario(self, trials=400):
        return Scenario(2, 4, 1, 0.0, trials, 7)

    def test_energy_curve_shape(self):
        curve = run_roc(self._scenario(), EnergyDetector())
        assert curve.thresholds[0] == math.inf
        assert curve.thresholds[-1] == -math.inf
        assert np.all(np.diff(curve.thresholds) <= 0)
        # thresholds descend, so both rates ascend along the arrays
        assert np.all(np.diff(curve.far) >= 0)
        assert np.all(np.diff(curve.cdr) >= 0)
        assert curve.far[0] == 0.0 and curve.cdr[0] == 0.0
        assert curve.far[-1] == 1.0 and curve.cdr[-1] == 1.0
        assert curve.n_noise_trials == 400
        assert curve.n_failed_noise == 0

    def test_curve_is_deterministic(self):
        a = run_roc(self._scenario(), EnergyDetector())
        b = run_roc(self._scenario(), EnergyDetector())
        assert np.array_equal(a.thresholds, b.thresholds)
        assert np.array_equal(a.far, b.far)
        assert np.array_equal(a.cdr, b.cdr)

    def test_detector_beats_chance(self):
        # At 0 dB this scenario is easy; both detectors must sit above the
        # diagonal in the interior of the curve.
        for det in (EnergyDetector(), BayesDetector(_prior())):
            curve = run_roc(self._scenario(), det)
            interior = (curve.far > 0.05) & (curve.far < 0.95)
            assert np.all(curve.cdr[interior] > curve.far[interior])

    def test_explicit_threshold_endpoints(self):
        curve = run_roc(self._scenario(100), EnergyDetector(),
                        thresholds=np.array([-math.inf, math.inf]))
        assert list(curve.thresholds) == [math.inf, -math.inf]
        assert list(curve.far) == [0.0, 1.0]
        assert list(curve.cdr) == [0.0, 1.0]

    def test_explicit_thresholds_match_manual_counts(self):
        s = self._scenario(200)
        blocks = _synthesize_block(s, 0, 0, 200)
        vals = _gram_eigenvalues_batch(blocks)
        stats = np.log(vals.sum(axis=1) / (s.n_snapshots * s.n_sensors * s.sigma2))
        thr = float(np.median(stats))
        curve = run_roc(s, EnergyDetector(), thresholds=np.array([thr]))
        assert curve.far[0] == pytest.approx((stats > thr).mean())

    def test_thread_count_does_not_change_results(self, monkeypatch):
        monkeypatch.setattr(mc, "_ROC_CHUNK", 64)
        s = Scenario(2, 4, 1, 0.0, 300, 13)
        det = BayesDetector(_prior())
        serial = run_roc(s, det, n_threads=1)
        threaded = run_roc(s, det, n_threads=2)
        assert np.array_equal(serial.thresholds, threaded.thresholds)
        assert np.array_equal(serial.far, threaded.far)
        assert np.array_equal(serial.cdr, threaded.cdr)

    def test_small_failure_fraction_is_excluded(self, monkeypatch):
        real_fast = mc._batch_fast_stats

        def poisoned(vals, L, prior):
            stats, bad, n_pert = real_fast(vals, L, prior)
            stats[0] = np.nan
            bad = bad.copy()
            bad[0] = True
            return stats, bad, n_pert

        def failing_retry(vals, L, prior, stats, rows, precision):
            return np.ones(len(rows), dtype=bool), 0

        monkeypatch.setattr(mc, "_batch_fast_stats", poisoned)
        monkeypatch.setattr(mc, "_retry_rows_scalar", failing_retry)
        s = Scenario(2, 4, 1, 0.0, 1000, 3)
        curve = run_roc(s, BayesDetector(_prior()))
        assert curve.n_failed_noise == 1
        assert curve.n_failed_signal == 1
        assert curve.n_noise_trials == 999
        assert curve.n_signal_trials == 999

    def test_excessive_failures_raise(self, monkeypatch):
        def all_bad(vals, L, prior):
            n = vals.shape[0]
            return np.full(n, np.nan), np.ones(n, dtype=bool), 0

        def failing_retry(vals, L, prior, stats, rows, precision):
            return np.ones(len(rows), dtype=bool), 0

        monkeypatch.setattr(mc, "_batch_fast_stats", all_bad)
        monkeypatch.setattr(mc, "_retry_rows_scalar", failing_retry)
        s = Scenario(2, 4, 1, 0.0, 50, 3)
        with pytest.raises(NumericError):
            run_roc(s, BayesDetector(_prior()))

    def test_validation(self):
        s = self._scenario(50)
        with pytest.raises(DomainError):
            run_roc(s, "energy")
        with pytest.raises(DomainError):
            run_roc(s, EnergyDetector(), n_threads=0)
        with pytest.raises(InputError):
            run_roc(s, EnergyDetector(), thresholds="all")
        with pytest.raises(InputError):
            run_roc(s, EnergyDetector(), thresholds=np.array([]))


class TestRocMetrics:
    def _hand_curve(self):
        s = Scenario(2, 4, 1, 0.0, 10, 1)
        return RocCurve(
            thresholds=np.array([2.0, 1.0]),
            far=np.array([0.1, 0.5]),
            cdr=np.array([0.7, 0.9]),
            n_noise_trials=10, n_signal_trials=10,
            n_failed_noise=0, n_failed_signal=0,
            detector_label="energy", scenario=s)

    def test_linear_interpolation(self):
        point = roc_metrics(self._hand_curve(), 0.3)
        assert point.cdr == pytest.approx(0.8)
        assert not point.clipped

    def test_nearest_point_and_stderr(self):
        point = roc_metrics(self._hand_curve(), 0.15)
        assert point.nearest_far == 0.1
        assert point.nearest_cdr == 0.7
        assert point.nearest_threshold == 2.0
        assert point.stderr == pytest.approx(math.sqrt(0.7 * 0.3 / 10))

    def test_clipping_flags(self):
        assert roc_metrics(self._hand_curve(), 0.05).clipped
        assert roc_metrics(self._hand_curve(), 0.7).clipped
        assert not roc_metrics(self._hand_curve(), 0.4).clipped

    def test_target_validation(self):
        curve = self._hand_curve()
        for bad in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(DomainError):
                roc_metrics(curve, bad)
