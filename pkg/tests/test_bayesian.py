import hashlib
import math

import numpy as np
import pytest
from scipy import stats

from qtraj.bayesian import (
    CalibrationSeries,
    EffectiveCalibration,
    EfficiencyModel,
    FitFailureError,
    MeasurementRecord,
    _meas_z,
    estimate_T1,
    estimate_efficiency,
    fit_gaussian_current,
    generate_records,
    preparation_uncertainty,
    preprocess_calibration,
    reconstruct_ensemble,
    reconstruct_trajectory,
    update_measurement,
    update_relaxation,
)
from qtraj.core import Z_CAP, CalibrationParams, ModelParams, QubitState, to_logodds
from qtraj.rng import STREAM_BRANCH, STREAM_NOISE, SeedSpec, counter_normal, counter_uniform
from qtraj.sde import _diffusion_z

CAL_SYM = CalibrationParams(I0=1.0, I1=-1.0, sigma=1.0, dt=0.5)
CAL_WEAK = CalibrationParams(I0=128.443, I1=127.856, sigma=5.56, dt=0.5)


def make_params(cal, x0, n_steps, T1=math.inf):
    return ModelParams(g=cal.kappa / cal.dt, T1=T1, dt=cal.dt, x0=x0, n_steps=n_steps)


class TestUpdateMeasurement:
    def test_symmetric_likelihoods_cancel(self):
        s = QubitState.from_rho00(0.5)
        out = update_measurement(s, 0.0, CAL_SYM)
        assert out.rho00 == 0.5

    def test_two_hypothesis_bayes(self):
        # brute-force posterior: rho' = rho L0 / (rho L0 + (1-rho) L1)
        s = QubitState.from_rho00(0.5)
        out = update_measurement(s, 1.0, CAL_SYM)
        l0 = math.exp(-0.0)
        l1 = math.exp(-(1.0 - -1.0) ** 2 / 2.0)
        expected = 0.5 * l0 / (0.5 * l0 + 0.5 * l1)
        assert math.isclose(expected, math.exp(2) / (1 + math.exp(2)), rel_tol=1e-14)
        assert math.isclose(out.rho00, expected, rel_tol=1e-12)
        assert math.isclose(out.rho00, 0.8807970779778823, rel_tol=1e-12)

    def test_eigenstate_fixed(self):
        s = QubitState(z=Z_CAP)
        for im in (-50.0, 0.0, 127.0, 1e6):
            assert update_measurement(s, im, CAL_WEAK).rho00 == 1.0

    def test_brute_force_random_cases(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            rho = rng.uniform(0.01, 0.99)
            im = rng.normal(128.0, 6.0)
            s = QubitState.from_rho00(rho)
            out = update_measurement(s, im, CAL_WEAK)
            l0 = math.exp(-((im - CAL_WEAK.I0) ** 2) / (2 * CAL_WEAK.sigma**2))
            l1 = math.exp(-((im - CAL_WEAK.I1) ** 2) / (2 * CAL_WEAK.sigma**2))
            expected = rho * l0 / (rho * l0 + (1 - rho) * l1)
            assert math.isclose(out.rho00, expected, rel_tol=1e-10)


class TestUpdateRelaxation:
    def test_shared_contract(self):
        s = QubitState.from_rho00(0.305)
        out = update_relaxation(s, 0.5, 45.0)
        assert math.isclose(out.rho11, 0.695 * math.exp(-1.0 / 90.0), rel_tol=1e-12)

    def test_trivials(self):
        s = QubitState.from_rho00(1.0)
        assert update_relaxation(s, 0.5, 45.0).rho00 == 1.0
        s2 = QubitState.from_rho00(0.3)
        assert update_relaxation(s2, 0.0, 45.0) is s2


class TestReconstruct:
    def test_null_records_constant(self):
        n = 30
        rec = MeasurementRecord(currents=np.zeros(n), dt=0.5)
        traj = reconstruct_trajectory(rec, CAL_SYM, 0.305)
        assert traj.shape == (n + 1,)
        assert np.allclose(traj, traj[0], rtol=0, atol=1e-15)

    def test_all_i0_telescopes(self):
        # kappa = 0.25 so 40 steps stay below the absorption cap
        cal = CalibrationParams(I0=1.0, I1=-1.0, sigma=2.0, dt=0.5)
        n = 40
        rec = MeasurementRecord(currents=np.full(n, cal.I0), dt=0.5)
        traj = reconstruct_trajectory(rec, cal, 0.5)
        # z after k steps = k * kappa exactly (additivity in z)
        z = to_logodds(traj)
        expected = np.arange(n + 1) * cal.kappa
        assert np.allclose(z, expected, atol=1e-10)

    def test_all_i0_saturates_at_cap(self):
        # with kappa = 1 the walk reaches the absorption cap and stays
        n = 40
        rec = MeasurementRecord(currents=np.full(n, CAL_SYM.I0), dt=0.5)
        traj = reconstruct_trajectory(rec, CAL_SYM, 0.5)
        z = to_logodds(traj)
        # the emitted population view quantizes near 1: z reads exactly
        # only while rho00 has headroom, and saturates to the cap once
        # rho00 rounds to float 1.0 (z ~ 18.7)
        assert np.allclose(z[:11], np.arange(11.0), atol=1e-7)
        assert np.all(np.diff(traj) >= 0)
        assert np.all(traj[19:] == 1.0)
        assert np.all(z[19:] == Z_CAP)

    def test_dt_mismatch(self):
        rec = MeasurementRecord(currents=np.zeros(5), dt=1.0)
        with pytest.raises(ValueError):
            reconstruct_trajectory(rec, CAL_SYM, 0.5)

    def test_reversal_returns_initial(self):
        # zero relaxation: reversing the record and negating increments
        # walks back to the start (additivity in z)
        rng = np.random.default_rng(8)
        rec = rng.normal(0.0, 1.5, 25)
        fwd = reconstruct_trajectory(MeasurementRecord(rec, 0.5), CAL_SYM, 0.4)
        mirrored = (CAL_SYM.I0 + CAL_SYM.I1) - rec[::-1]
        z = to_logodds(fwd[-1])
        for im in mirrored:
            z = float(_meas_z(z, im, CAL_SYM))
        assert math.isclose(z, to_logodds(0.4), abs_tol=1e-12)

    def test_roundtrip_bitwise(self):
        cal = CalibrationParams(I0=128.44, I1=127.68, sigma=5.50, dt=0.5, T1=45.0)
        params = make_params(cal, 0.305, 20, T1=45.0)
        recs, latent = generate_records(params, cal, 500, SeedSpec(77))
        rebuilt = reconstruct_ensemble(recs)
        assert np.array_equal(rebuilt.values, latent.values)

    def test_single_record_matches_ensemble_row(self):
        cal = CalibrationParams(I0=1.0, I1=-1.0, sigma=2.0, dt=0.5)
        params = make_params(cal, 0.4, 10)
        recs, latent = generate_records(params, cal, 20, SeedSpec(5))
        traj = reconstruct_trajectory(recs.record(3), cal, 0.4)
        assert np.array_equal(traj, latent.values[3])

    def test_determinism_across_workers(self):
        cal = CalibrationParams(I0=1.0, I1=-1.0, sigma=2.0, dt=0.5, T1=30.0)
        params = make_params(cal, 0.4, 8, T1=30.0)
        recs, _ = generate_records(params, cal, 70_000, SeedSpec(55))
        digests = {
            hashlib.sha256(
                reconstruct_ensemble(recs, n_workers=w).values.tobytes()
            ).hexdigest()
            for w in (1, 3)
        }
        assert len(digests) == 1

    def test_effective_calibration_constant_is_identity(self):
        cal = CalibrationParams(I0=1.0, I1=-1.0, sigma=2.0, dt=0.5, T1=30.0)
        params = make_params(cal, 0.4, 12, T1=30.0)
        recs, _ = generate_records(params, cal, 100, SeedSpec(60))
        t = (np.arange(12) + 0.5) * 0.5
        eff = EffectiveCalibration(
            times=t, I0=np.full(12, cal.I0), I1=np.full(12, cal.I1)
        )
        plain = reconstruct_ensemble(recs)
        with_eff = reconstruct_ensemble(recs, effective=eff)
        assert np.array_equal(plain.values, with_eff.values)

    def test_effective_calibration_per_step(self):
        # time-varying I0/I1 must be applied step by step; oracle is a
        # scalar walk with per-step calibrations
        cal = CalibrationParams(I0=1.0, I1=-1.0, sigma=2.0, dt=0.5)
        rng = np.random.default_rng(6)
        currents = rng.normal(0.0, 2.0, 10)
        rec = MeasurementRecord(currents=currents, dt=0.5)
        t = (np.arange(10) + 0.5) * 0.5
        i0_t = 1.0 + 0.1 * np.exp(-t / 0.8)
        i1_t = -1.0 - 0.05 * np.exp(-t / 1.2)
        eff = EffectiveCalibration(times=t, I0=i0_t, I1=i1_t)
        traj = reconstruct_trajectory(rec, cal, 0.5, effective=eff)
        state = QubitState.from_rho00(0.5)
        expected = [state.rho00]
        for s in range(10):
            step_cal = CalibrationParams(
                I0=float(i0_t[s]), I1=float(i1_t[s]), sigma=2.0, dt=0.5
            )
            state = update_measurement(state, float(currents[s]), step_cal)
            expected.append(state.rho00)
        assert np.allclose(traj, expected, rtol=0, atol=1e-15)

    def test_effective_calibration_too_short(self):
        cal = CalibrationParams(I0=1.0, I1=-1.0, sigma=2.0, dt=0.5)
        rec = MeasurementRecord(currents=np.zeros(10), dt=0.5)
        eff = EffectiveCalibration(
            times=np.arange(5.0), I0=np.ones(5), I1=-np.ones(5)
        )
        with pytest.raises(ValueError):
            reconstruct_trajectory(rec, cal, 0.5, effective=eff)


class TestGenerate:
    def test_consistency_enforced(self):
        params = ModelParams(g=0.9, T1=math.inf, dt=0.5, x0=0.5, n_steps=5)
        with pytest.raises(ValueError):
            generate_records(params, CAL_SYM, 10, SeedSpec(1))

    def test_pinned_state_gives_gaussian_records(self):
        # latent pinned at rho00 = 1: currents are N(I0, sigma^2); the
        # Gaussian fit recovers the calibration parameters
        params = make_params(CAL_WEAK, 1.0, 1)
        recs, _ = generate_records(params, CAL_WEAK, 1_000_000, SeedSpec(321))
        fit = fit_gaussian_current(recs.currents[:, 0])
        assert abs(fit.center - CAL_WEAK.I0) < 4 * fit.center_err
        assert abs(fit.sigma - CAL_WEAK.sigma) < 4 * fit.sigma_err

    def test_weak_records_stay_near_x0(self):
        cal = CalibrationParams(I0=1.0, I1=-1.0, sigma=5000.0, dt=0.5)
        params = make_params(cal, 0.5, 50)
        recs, latent = generate_records(params, cal, 200, SeedSpec(9))
        assert np.max(np.abs(latent.values - 0.5)) < 0.01

    def test_equivalence_with_diffusion_increments(self):
        # Delta z from a mixture record is kappa*branch + sqrt(kappa)*xi
        # exactly (algebraic identity), hence KS-indistinguishable from
        # the exact diffusion step
        cal = CAL_WEAK
        kappa = cal.kappa
        n = 20_000
        traj = np.arange(n, dtype=np.uint64)
        u = counter_uniform(42, traj, 0, STREAM_BRANCH)
        xi = counter_normal(42, traj, 0, STREAM_NOISE)
        z0 = 0.0
        center = np.where(u < 0.5, cal.I0, cal.I1)
        im = center + cal.sigma * xi
        dz_meas = _meas_z(np.full(n, z0), im, cal) - z0
        branch = np.where(u < 0.5, 1.0, -1.0)
        dz_ident = kappa * branch + math.sqrt(kappa) * xi
        assert np.allclose(dz_meas, dz_ident, atol=1e-12)
        u2 = counter_uniform(43, traj, 0, STREAM_BRANCH)
        xi2 = counter_normal(43, traj, 0, STREAM_NOISE)
        dz_diff = _diffusion_z(np.full(n, z0), kappa, u2, xi2) - z0
        assert stats.ks_2samp(dz_meas, dz_diff).pvalue > 1e-3

    def test_reconstructed_martingale(self):
        cal = CalibrationParams(I0=1.0, I1=-1.0, sigma=3.0, dt=0.5)
        params = make_params(cal, 0.305, 30)
        recs, _ = generate_records(params, cal, 20_000, SeedSpec(12))
        ens = reconstruct_ensemble(recs)
        final = ens.values[:, -1]
        se = final.std() / math.sqrt(final.size)
        assert abs(final.mean() - 0.305) < 4 * se


class TestGaussianFit:
    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            fit_gaussian_current(np.full(500, 3.3))

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            fit_gaussian_current(np.arange(50, dtype=float))

    def test_recovers_readout_parameters(self):
        rng = np.random.default_rng(101)
        s = rng.normal(128.443, 5.56, 1_000_000)
        fit = fit_gaussian_current(s)
        assert abs(fit.center - 128.443) < 4 * fit.center_err
        assert abs(fit.sigma - 5.56) < 4 * fit.sigma_err
        assert math.isclose(fit.center_err, 5.56 / 1000.0, rel_tol=0.05)

    def test_shift_equivariance(self):
        rng = np.random.default_rng(7)
        s = rng.normal(0.0, 2.0, 5000)
        a = fit_gaussian_current(s)
        b = fit_gaussian_current(s + 17.25)
        assert math.isclose(b.center, a.center + 17.25, rel_tol=1e-12, abs_tol=1e-9)
        assert math.isclose(b.sigma, a.sigma, rel_tol=1e-10)


class TestT1Estimate:
    @pytest.mark.parametrize("t1_true", [45.0, 25.0])
    def test_noiseless_round_trip(self, t1_true):
        t = (np.arange(80) + 0.5) * 0.5
        y = 128.4 + (127.7 - 128.4) * np.exp(-t / t1_true)
        est = estimate_T1(t, y)
        assert abs(est.T1 - t1_true) / t1_true < 1e-6

    def test_constant_series_fails(self):
        t = np.arange(20) * 0.5
        with pytest.raises(FitFailureError):
            estimate_T1(t, np.full(20, 128.0))

    def test_recovers_from_simulated_decay(self):
        cal = CalibrationParams(I0=1.0, I1=-1.0, sigma=4.0, dt=0.5, T1=45.0)
        params = make_params(cal, 0.0, 80, T1=45.0)  # excited state
        recs, _ = generate_records(params, cal, 50_000, SeedSpec(202))
        t = (np.arange(80) + 0.5) * 0.5
        est = estimate_T1(t, recs.currents.mean(axis=0), cal)
        assert abs(est.T1 - 45.0) < 4 * est.T1_err


class TestPreprocessCalibration:
    @staticmethod
    def series(i0, i1, times):
        return CalibrationSeries(
            times=times, I0=np.asarray(i0, float), I1=np.asarray(i1, float),
            sigma=np.full(times.size, 5.5),
        )

    def test_constant_passthrough(self):
        t = np.arange(20) * 0.5
        s = self.series(np.full(20, 128.4), np.full(20, 127.7), t)
        eff = preprocess_calibration(s)
        assert np.array_equal(eff.I0, s.I0)
        assert np.array_equal(eff.I1, s.I1)

    def test_transient_replaced_by_fit(self):
        t = np.arange(40) * 0.25
        # I0 constant with an early bump; I1 decaying
        i0 = np.full(40, 128.4)
        i0[t <= 2.0] += 0.8 * np.exp(-t[t <= 2.0] / 0.7)
        i1 = 128.4 + (127.7 - 128.4) * np.exp(-t / 45.0)
        eff = preprocess_calibration(self.series(i0, i1, t))
        tail = t > 2.0
        # fitted I0 asymptote recovered
        assert np.allclose(eff.I0[tail], 128.4, atol=1e-6)
        # fitted I1 frozen at its 2.5 us value
        expected = 128.4 + (127.7 - 128.4) * math.exp(-2.5 / 45.0)
        assert np.allclose(eff.I1[tail], expected, atol=1e-6)
        # observed values kept before the anomaly cut
        assert np.array_equal(eff.I0[~tail], i0[~tail])

    def test_short_series_rejected(self):
        t = np.arange(4) * 0.5
        with pytest.raises(ValueError):
            preprocess_calibration(self.series(np.ones(4), np.ones(4), t))


class TestEfficiency:
    def test_ideal_amplifier(self):
        # sigma_noise = 0: fitted tau equals n*kappa, eta = 1
        tau_fitted = 80 * CAL_WEAK.kappa
        assert math.isclose(estimate_efficiency(tau_fitted, CAL_WEAK, 80), 1.0)

    def test_definitional_half(self):
        tau_fitted = 2 * 80 * CAL_WEAK.kappa
        assert math.isclose(estimate_efficiency(tau_fitted, CAL_WEAK, 80), 0.5)

    def test_above_one_warns(self):
        with pytest.warns(UserWarning):
            eta = estimate_efficiency(0.5 * 80 * CAL_WEAK.kappa, CAL_WEAK, 80)
        assert math.isclose(eta, 2.0)

    def test_model_invariants(self):
        m = EfficiencyModel.from_split(sigma_ideal=3.0, sigma_noise=4.0)
        assert math.isclose(m.sigma_obs, 5.0)
        assert math.isclose(m.eta, 9.0 / 25.0)
        with pytest.raises(ValueError):
            EfficiencyModel(sigma_obs=5.0, sigma_ideal=3.0, sigma_noise=1.0, eta=0.36)

    def test_preparation_uncertainty(self):
        cal = CalibrationParams(I0=1.0, I1=-1.0, sigma=1.0, dt=0.5, T1=45.0, dts=0.5)
        assert math.isclose(preparation_uncertainty(cal), -math.expm1(-0.5 / 45.0))
        cal_inf = CalibrationParams(I0=1.0, I1=-1.0, sigma=1.0, dt=0.5)
        assert preparation_uncertainty(cal_inf) == 0.0
