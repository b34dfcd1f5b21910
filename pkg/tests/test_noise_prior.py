import math

import numpy as np
import pytest

from t2vlab.errors import DegenerateSampleError, ParameterError
from t2vlab.noise_prior import NoiseSpec, gaussianity_experiment, jarque_bera, sample_noise


class TestSampleNoise:
    def test_iid_moments(self):
        spec = NoiseSpec("iid", shape=(4, 2, 16, 16), seed=1)
        draws = np.stack([sample_noise(spec, trial=i) for i in range(50)])
        n = draws.size
        assert abs(draws.mean()) < 3.0 / math.sqrt(n)
        var = draws.var()
        assert abs(var - 1.0) < 3.0 * math.sqrt(2.0 / n)

    def test_correlated_marginal_unit_variance(self):
        spec = NoiseSpec("correlated", shape=(6, 2, 16, 16), shared_weight=0.7, seed=2)
        draws = np.stack([sample_noise(spec, trial=i) for i in range(100)])
        per_frame_var = draws.var(axis=(0, 2, 3, 4))
        n = draws.size // draws.shape[1]
        assert np.all(np.abs(per_frame_var - 1.0) < 3.0 * math.sqrt(2.0 / n))

    def test_zero_weight_uncorrelated(self):
        spec = NoiseSpec("correlated", shape=(2, 1, 32, 32), shared_weight=0.0, seed=3)
        corrs = []
        for i in range(200):
            x = sample_noise(spec, trial=i)
            corrs.append(np.corrcoef(x[0].ravel(), x[1].ravel())[0, 1])
        n_elems = 32 * 32
        assert abs(np.mean(corrs)) < 3.0 / math.sqrt(len(corrs) * n_elems)

    def test_half_weight_interframe_correlation(self):
        """Closed form: corr(frame_i, frame_j) = w for the mixture construction."""
        spec = NoiseSpec("correlated", shape=(2, 1, 32, 32), shared_weight=0.5, seed=4)
        pairs = []
        for i in range(300):
            x = sample_noise(spec, trial=i)
            pairs.append(np.corrcoef(x[0].ravel(), x[1].ravel())[0, 1])
        se = 1.0 / math.sqrt(len(pairs) * 32 * 32)
        assert abs(np.mean(pairs) - 0.5) < 3.0 * se

    def test_trials_are_independent_and_reproducible(self):
        spec = NoiseSpec("iid", shape=(1, 1, 4, 4), seed=5)
        a = sample_noise(spec, trial=3)
        b = sample_noise(spec, trial=3)
        c = sample_noise(spec, trial=4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_invalid_spec_rejected(self):
        with pytest.raises(ParameterError):
            NoiseSpec("pink")
        with pytest.raises(ParameterError):
            NoiseSpec("iid", shape=(0, 1, 2, 2))
        with pytest.raises(ParameterError):
            NoiseSpec("correlated", shared_weight=1.5)


class TestJarqueBera:
    def test_two_point_sample_hand_value(self):
        """{-1, +1} repeated: skew 0, excess kurtosis -2, statistic n/6."""
        for reps in (8, 64, 500):
            sample = np.array([-1.0, 1.0] * reps)
            stat, p = jarque_bera(sample)
            assert stat == pytest.approx(len(sample) / 6.0, rel=1e-12)
            assert 0.0 <= p <= 1.0

    def test_standard_normal_calibration(self):
        """Under the null, p > 0.05 should hold for roughly 95% of trials."""
        rng = np.random.default_rng(0)
        passes = sum(jarque_bera(rng.standard_normal(20_000))[1] > 0.05 for _ in range(200))
        # Binomial(200, ~0.95): 3 sigma is about 9 trials
        assert passes >= 180

    def test_uniform_sample_rejected(self):
        """Uniform[-1, 1]: excess kurtosis -1.2, JB ~ n/6 * (1.2^2/4) -> huge at n = 1e4."""
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, 10_000)
        stat, p = jarque_bera(x)
        assert p < 0.05
        expected = len(x) / 6.0 * (1.2**2 / 4.0)
        assert stat == pytest.approx(expected, rel=0.25)

    def test_moment_formula_oracle(self):
        """Re-derive the statistic from raw moments computed independently."""
        rng = np.random.default_rng(2)
        x = rng.gamma(2.0, size=5000)
        stat, _ = jarque_bera(x)
        m = x.mean()
        m2 = ((x - m) ** 2).mean()
        m3 = ((x - m) ** 3).mean()
        m4 = ((x - m) ** 4).mean()
        skew = m3 / m2**1.5
        exk = m4 / m2**2 - 3.0
        assert stat == pytest.approx(len(x) / 6.0 * (skew**2 + exk**2 / 4.0), rel=1e-12)

    def test_p_value_is_chi2_survival(self):
        from scipy import stats as sps

        rng = np.random.default_rng(3)
        x = rng.standard_normal(1000)
        stat, p = jarque_bera(x)
        assert p == pytest.approx(float(sps.chi2.sf(stat, 2)), rel=1e-12)

    def test_short_sample_rejected(self):
        with pytest.raises(ParameterError):
            jarque_bera(np.zeros(7))

    def test_constant_sample_rejected(self):
        with pytest.raises(DegenerateSampleError):
            jarque_bera(np.ones(100))


class TestGaussianityExperiment:
    def test_single_trial_rate_is_binary(self):
        res = gaussianity_experiment(NoiseSpec("iid", shape=(2, 1, 8, 8), seed=1), 1)
        assert res.pass_rate in (0.0, 1.0)

    def test_iid_rate_near_nominal(self):
        res = gaussianity_experiment(NoiseSpec("iid", seed=0), 300)
        assert 0.90 <= res.pass_rate <= 0.99

    def test_correlated_rate_materially_lower(self):
        iid = gaussianity_experiment(NoiseSpec("iid", seed=0), 300)
        corr = gaussianity_experiment(NoiseSpec("correlated", seed=0), 300)
        assert iid.pass_rate - corr.pass_rate > 0.10

    def test_report_fields(self):
        res = gaussianity_experiment(NoiseSpec("correlated", seed=2), 5)
        report = res.report()
        assert report["schema_version"] == 1
        assert report["kind"] == "correlated"
        assert report["n_trials"] == 5
        assert report["shape"] == [8, 3, 32, 32]
        assert 0.0 <= report["pass_rate"] <= 1.0
        assert len(res.statistics) == 5 and len(res.p_values) == 5

    def test_invalid_arguments(self):
        with pytest.raises(ParameterError):
            gaussianity_experiment(NoiseSpec("iid"), 0)
        with pytest.raises(ParameterError):
            gaussianity_experiment(NoiseSpec("iid"), 5, flatten="per_frame")
