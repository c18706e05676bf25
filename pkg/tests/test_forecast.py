import numpy as np
import pytest

from plantmpc import forecast as fc
from plantmpc.plant import CHANNELS


def ar_series(coeffs, intercept, noise_std, length, seed, x0=None):
    rng = np.random.default_rng(seed)
    q = len(coeffs)
    x = np.zeros(length + q)
    if x0 is not None:
        x[:q] = x0
    for t in range(q, length + q):
        x[t] = (
            np.dot(coeffs, x[t - q : t][::-1])
            + intercept
            + rng.normal(0.0, noise_std)
        )
    return x[q:]


class TestFitAr:
    def test_noiseless_ar1_recovered_exactly(self):
        x = ar_series([0.5], 1.0, 0.0, 50, seed=0, x0=[0.0])
        model = fc.fit_ar(x, 1)
        assert model.coefficients[0] == pytest.approx(0.5, abs=1e-9)
        assert model.intercept == pytest.approx(1.0, abs=1e-9)
        assert model.noise_variance == pytest.approx(0.0, abs=1e-9)

    def test_constant_series_uses_ridge_and_predicts_level(self):
        x = np.full(40, 5.0)
        model = fc.fit_ar(x, 1)
        prediction = model.coefficients[0] * 5.0 + model.intercept
        assert prediction == pytest.approx(5.0, abs=1e-6)

    def test_ar3_monte_carlo_consistency(self):
        true = np.array([0.4, 0.3, 0.1])
        x = ar_series(true, 0.5, 1.0, 10_000, seed=42)
        model = fc.fit_ar(x, 3)
        assert np.all(np.abs(model.coefficients - true) < 0.05)

    def test_too_short_history_rejected(self):
        with pytest.raises(ValueError, match="short"):
            fc.fit_ar(np.zeros(6), 3)

    def test_non_finite_rejected(self):
        x = np.ones(30)
        x[5] = np.nan
        with pytest.raises(ValueError, match="finite"):
            fc.fit_ar(x, 2)


class TestForecast:
    def test_ar1_variance_growth_matches_analytic(self):
        # Independent oracle: Var_h = sigma^2 (1 - phi^(2h)) / (1 - phi^2).
        model = fc.ArModel(np.array([0.5]), 0.0, 1.0)
        _, cov = fc.forecast(model, np.array([2.0]), 24)
        phi = 0.5
        for h in range(1, 25):
            expected = (1 - phi ** (2 * h)) / (1 - phi**2)
            assert cov[h - 1, h - 1] == pytest.approx(expected, abs=1e-9)
        assert cov[0, 0] == pytest.approx(1.0)
        assert cov[1, 1] == pytest.approx(1.25)
        assert cov[2, 2] == pytest.approx(1.3125)

    def test_ar2_covariance_matches_independent_recursion(self):
        coeffs = np.array([0.6, -0.2])
        model = fc.ArModel(coeffs, 0.3, 2.0)
        n = 12
        _, cov = fc.forecast(model, np.array([1.0, 0.5]), n)
        # Re-derive the moving-average weights directly in the test.
        psi = [1.0]
        for k in range(1, n):
            upto = min(k, 2)
            psi.append(sum(coeffs[m] * psi[k - 1 - m] for m in range(upto)))
        for i in range(n):
            for j in range(n):
                lag = abs(i - j)
                expected = 2.0 * sum(
                    psi[k] * psi[k + lag] for k in range(min(i, j) + 1)
                )
                assert cov[i, j] == pytest.approx(expected, abs=1e-9)

    def test_zero_noise_deterministic(self):
        model = fc.ArModel(np.array([0.5]), 1.0, 0.0)
        mean, cov = fc.forecast(model, np.array([2.0]), 5)
        assert np.all(cov == 0.0)
        assert mean == pytest.approx(np.full(5, 2.0))

    def test_fixed_point_mean(self):
        model = fc.ArModel(np.array([0.5]), 1.0, 0.0)
        mean, _ = fc.forecast(model, np.array([2.0]), 3)
        assert mean[0] == pytest.approx(2.0 * 0.5 + 1.0)
        assert np.allclose(mean, 2.0)

    def test_noiseless_fit_reproduces_continuation(self):
        true = np.array([0.7, -0.1])
        x = ar_series(true, 0.4, 0.0, 80, seed=1, x0=[1.0, 2.0])
        model = fc.fit_ar(x, 2)
        mean, _ = fc.forecast(model, x[-2:], 24)
        continuation = ar_series(true, 0.4, 0.0, 24, seed=2, x0=x[-2:])
        assert np.allclose(mean, continuation, atol=1e-6)

    def test_variance_nondecreasing(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            q = int(rng.integers(1, 4))
            coeffs = rng.uniform(-0.5, 0.5, q)
            coeffs *= 0.9 / max(np.abs(coeffs).sum(), 1.0)
            model = fc.ArModel(coeffs, 0.0, rng.uniform(0.1, 2.0))
            _, cov = fc.forecast(model, np.zeros(q), 20)
            diag = np.diag(cov)
            assert np.all(np.diff(diag) >= -1e-12)

    def test_bad_horizon(self):
        model = fc.ArModel(np.array([0.5]), 0.0, 1.0)
        with pytest.raises(ValueError):
            fc.forecast(model, np.array([1.0]), 0)


def small_distribution(n=6, sigma=1.0):
    means = np.tile(np.linspace(50.0, 60.0, n), (4, 1))
    base = sigma * np.exp(-0.5 * np.abs(np.subtract.outer(range(n), range(n))))
    covs = np.stack([base] * 4)
    return fc.ForecastDistribution(means, covs)


class TestSampleScenarios:
    def test_zero_covariance_returns_mean(self):
        n = 8
        means = np.tile(np.arange(n, dtype=float) + 5.0, (4, 1))
        dist = fc.ForecastDistribution(means, np.zeros((4, n, n)))
        scen = fc.sample_scenarios(dist, 10, seed=0)
        assert np.array_equal(scen.values, np.tile(means, (10, 1, 1)))

    def test_seed_determinism(self):
        dist = small_distribution()
        a = fc.sample_scenarios(dist, 50, seed=123)
        b = fc.sample_scenarios(dist, 50, seed=123)
        assert np.array_equal(a.values, b.values)
        c = fc.sample_scenarios(dist, 50, seed=124)
        assert not np.array_equal(a.values, c.values)

    def test_empirical_mean_clt_bound(self):
        dist = small_distribution()
        s = 100_000
        scen = fc.sample_scenarios(dist, s, seed=5)
        std = np.sqrt(np.diagonal(dist.covariances, axis1=1, axis2=2))
        bound = 3.0 * std / np.sqrt(s)
        err = np.abs(scen.unclamped.mean(axis=0) - dist.means)
        assert np.all(err <= bound + 1e-12)

    def test_empirical_covariance_frobenius(self):
        dist = small_distribution()
        s = 100_000
        scen = fc.sample_scenarios(dist, s, seed=6)
        for ch in range(4):
            sample_cov = np.cov(scen.unclamped[:, ch, :].T)
            target = dist.covariances[ch]
            dist_f = np.linalg.norm(sample_cov - target) / np.linalg.norm(target)
            assert dist_f < 0.10

    def test_clamping_never_raises_loads(self):
        means = np.zeros((4, 5))
        covs = np.stack([np.eye(5)] * 4)
        scen = fc.sample_scenarios(fc.ForecastDistribution(means, covs), 500, seed=1)
        assert np.all(scen.values[:, :3, :] >= 0.0)
        assert np.all(scen.values[:, :3, :] >= scen.unclamped[:, :3, :])
        # price channel is never clamped
        assert np.array_equal(scen.values[:, 3, :], scen.unclamped[:, 3, :])

    def test_non_psd_rejected(self):
        n = 3
        bad = np.stack([-np.eye(n)] * 4)
        dist = fc.ForecastDistribution(np.zeros((4, n)), bad)
        with pytest.raises(ValueError, match="PSD"):
            fc.sample_scenarios(dist, 5, seed=0)


def flat_profile(**kwargs):
    channel = fc.ChannelProfile(
        base=100.0, daily_amp=20.0, annual_amp=0.0, weekend_factor=0.7,
        noise_std=0.0, **kwargs,
    )
    return fc.SeasonalProfile(
        load_elec=channel, load_cw=channel, load_hw=channel,
        price_elec=fc.ChannelProfile(base=0.05, floor=None),
    )


class TestSyntheticCampus:
    def test_noiseless_weekly_periodicity(self):
        traj = fc.generate_synthetic_campus(0, days=28, profile=flat_profile())
        values = traj.values[0]
        assert np.allclose(values[:168], values[168:336], atol=1e-12)

    def test_weekend_ratio(self):
        profile = flat_profile()
        traj = fc.generate_synthetic_campus(1, days=364, profile=profile)
        day = np.arange(len(traj)) // 24
        weekend = (day % 7) >= 5
        ratio = traj.values[0][weekend].mean() / traj.values[0][~weekend].mean()
        assert ratio == pytest.approx(0.7, abs=0.02)

    def test_seed_determinism(self):
        a = fc.generate_synthetic_campus(3, days=10)
        b = fc.generate_synthetic_campus(3, days=10)
        assert np.array_equal(a.values, b.values)

    def test_loads_nonnegative(self):
        traj = fc.generate_synthetic_campus(4, days=60)
        assert np.all(traj.values[:3] >= 0.0)

    def test_bad_days(self):
        with pytest.raises(ValueError):
            fc.generate_synthetic_campus(0, days=0)


class TestZohNoise:
    def test_flat_load_zero_variance(self):
        rng = np.random.default_rng(0)
        assert fc.zoh_noise(100.0, 100.0, 0.0, 0.0, rng) == 0.0

    def test_rising_load_negative_mean(self):
        rng = np.random.default_rng(0)
        assert fc.zoh_noise(100.0, 110.0, 0.0, 0.0, rng) == pytest.approx(-5.0)

    def test_monte_carlo_variance(self):
        rng = np.random.default_rng(1)
        draws = np.array(
            [fc.zoh_noise(50.0, 50.0, 4.0, 1.0, rng) for _ in range(100_000)]
        )
        assert draws.var() == pytest.approx(2.0, rel=0.05)

    def test_negative_variance_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            fc.zoh_noise(0.0, 0.0, -1.0, 0.0, rng)


class TestZohVarianceEstimation:
    def test_constant_history(self):
        var_err, var_int = fc.estimate_zoh_variances(np.full(50, 7.0), 2)
        assert var_err == pytest.approx(0.0, abs=1e-9)
        assert var_int == pytest.approx(0.0, abs=1e-9)

    def test_sawtooth_integral_variance(self):
        d = 3.0
        x = np.where(np.arange(200) % 2 == 0, d, -d)
        # Direct oracle: differences alternate +-2d with zero mean.
        diffs = np.diff(x)
        expected = diffs.var() / 12.0
        _, var_int = fc.estimate_zoh_variances(x, 2)
        assert var_int == pytest.approx(expected)
        # closed form up to the odd-length mean offset of the differences
        assert var_int == pytest.approx((2 * d) ** 2 / 12.0, rel=1e-3)

    def test_ar1_prediction_error_variance(self):
        x = ar_series([0.6], 0.0, 1.0, 20_000, seed=11)
        var_err, _ = fc.estimate_zoh_variances(x, 1)
        assert var_err == pytest.approx(1.0, rel=0.10)

    def test_divisor_override(self):
        x = ar_series([0.3], 0.0, 1.0, 500, seed=3)
        v12 = fc.estimate_zoh_variances(x, 1)[1]
        v6 = fc.estimate_zoh_variances(x, 1, interpolation_divisor=6.0)[1]
        assert v6 == pytest.approx(2.0 * v12)


class TestCsvInterchange:
    def test_round_trip(self, tmp_path):
        traj = fc.generate_synthetic_campus(5, days=3)
        path = tmp_path / "data.csv"
        fc.write_trajectory_csv(path, traj)
        again = fc.read_trajectory_csv(path)
        assert np.array_equal(traj.values, again.values)

    def test_header_is_documented_format(self, tmp_path):
        traj = fc.generate_synthetic_campus(5, days=1)
        path = tmp_path / "data.csv"
        fc.write_trajectory_csv(path, traj)
        header = path.read_text().splitlines()[0]
        assert header == "hour,load_elec_kw,load_cw_kw,load_hw_kw,price_elec_usd_per_kwh"

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,a,b,c,d\n0,1,2,3,4\n")
        with pytest.raises(ValueError, match="header"):
            fc.read_trajectory_csv(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("hour,load_elec_kw,load_cw_kw,load_hw_kw,price_elec_usd_per_kwh\n")
        with pytest.raises(ValueError, match="no data"):
            fc.read_trajectory_csv(path)
