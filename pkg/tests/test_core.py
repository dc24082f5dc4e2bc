import math

import numpy as np
import pytest

from qtraj.core import (
    Z_CAP,
    CalibrationParams,
    ModelParams,
    QubitState,
    TrajectoryEnsemble,
    build_histogram,
    to_logodds,
    to_rho,
)

ULP = np.spacing(1.0)


def make_ensemble(values, dt=0.5):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return TrajectoryEnsemble(
        n_traj=values.shape[0], n_steps=values.shape[1] - 1, dt=dt, values=values
    )


class TestLogOdds:
    def test_symmetry_point(self):
        assert to_logodds(0.5) == 0.0

    def test_initial_state_value(self):
        # oracle: 0.5*ln(x/(1-x)) evaluated two independent ways
        expected = 0.5 * math.log(0.305 / 0.695)
        assert math.isclose(expected, math.atanh(2 * 0.305 - 1), rel_tol=1e-14)
        assert math.isclose(to_logodds(0.305), expected, rel_tol=1e-14)
        assert math.isclose(to_logodds(0.305), -0.41180003447869024, rel_tol=1e-15)

    def test_boundary_clamp(self):
        assert to_logodds(1.0) == Z_CAP
        assert to_logodds(0.0) == -Z_CAP
        assert to_logodds(np.nextafter(1.0, 0.0)) < Z_CAP

    def test_domain_errors(self):
        for bad in (-0.1, 1.1, math.nan):
            with pytest.raises(ValueError):
                to_logodds(bad)

    def test_cap_views_exact(self):
        assert to_rho(Z_CAP) == 1.0
        assert to_rho(-Z_CAP) == 0.0
        assert to_rho(to_logodds(1.0)) == 1.0
        assert to_rho(to_logodds(0.0)) == 0.0

    def test_round_trip_property(self):
        # 1e4 random populations over (1e-12, 1-1e-12); tolerance 4 ulp
        # of unity (absolute): a float64 z cannot carry per-value
        # relative ulp accuracy near the ends
        rng = np.random.default_rng(42)
        u = rng.random(10_000)
        rho = 1e-12 + (1 - 2e-12) * u
        rho = np.concatenate([rho, [1e-12, 1 - 1e-12, 0.5, 0.305]])
        back = to_rho(to_logodds(rho))
        assert np.max(np.abs(back - rho)) <= 4 * ULP

    def test_round_trip_relative_accuracy_small(self):
        # the log-based forward map keeps good relative accuracy in the
        # lower tail as well
        for rho in (1e-12, 1e-9, 1e-6):
            back = to_rho(to_logodds(rho))
            assert math.isclose(back, rho, rel_tol=1e-12)

    def test_array_roundtrip_matches_scalar(self):
        rho = np.array([0.1, 0.5, 0.9])
        z_arr = to_logodds(rho)
        assert z_arr.shape == (3,)
        for r, z in zip(rho, z_arr):
            assert to_logodds(float(r)) == z


class TestQubitState:
    def test_views(self):
        s = QubitState.from_rho00(0.305)
        assert math.isclose(s.rho00, 0.305, rel_tol=1e-14)
        assert math.isclose(s.rho00 + s.rho11, 1.0, abs_tol=3e-16)
        assert not s.absorbed

    def test_absorbed_flag(self):
        assert QubitState(z=Z_CAP).absorbed
        assert QubitState(z=-40.0).z == -Z_CAP  # clamped on construction
        assert QubitState(z=Z_CAP).rho00 == 1.0

    def test_population_sum(self):
        rng = np.random.default_rng(7)
        for z in rng.uniform(-25, 25, 200):
            s = QubitState(z=z)
            assert abs(s.rho00 + s.rho11 - 1.0) <= 3e-16

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            QubitState(z=math.nan)


class TestParams:
    def test_model_params(self):
        p = ModelParams(g=0.03, T1=45.0, dt=0.5, x0=0.305, n_steps=80)
        assert math.isclose(p.kappa, 0.015)
        assert math.isclose(p.delta, 0.5 / 45.0)
        assert math.isclose(p.tau_total, 1.2)

    def test_model_params_infinite_t1(self):
        p = ModelParams(g=0.03, T1=math.inf, dt=0.5, x0=0.5, n_steps=10)
        assert p.delta == 0.0

    @pytest.mark.parametrize(
        "kw",
        [
            dict(g=-1.0),
            dict(T1=0.0),
            dict(T1=-2.0),
            dict(dt=0.0),
            dict(x0=1.5),
            dict(n_steps=-1),
        ],
    )
    def test_model_params_validation(self, kw):
        base = dict(g=0.03, T1=45.0, dt=0.5, x0=0.305, n_steps=80)
        base.update(kw)
        with pytest.raises(ValueError):
            ModelParams(**base)

    def test_calibration_kappa(self):
        # weak-readout calibration scale
        cal = CalibrationParams(I0=128.443, I1=127.856, sigma=5.56, dt=0.5)
        expected = (128.443 - 127.856) ** 2 / (4 * 5.56**2)
        assert math.isclose(cal.kappa, expected, rel_tol=1e-15)
        assert math.isclose(cal.kappa, 0.002787, abs_tol=5e-7)

    def test_calibration_validation(self):
        with pytest.raises(ValueError):
            CalibrationParams(I0=1.0, I1=1.0, sigma=1.0, dt=0.5)
        with pytest.raises(ValueError):
            CalibrationParams(I0=1.0, I1=-1.0, sigma=0.0, dt=0.5)


class TestHistogram:
    def test_delta_single_bin(self):
        ens = make_ensemble(np.full((50, 1), 0.305))
        snap = build_histogram(ens, 0)
        assert snap.density.max() == 1.0
        # 0.305 sits in the bin whose edges bracket it
        k = int(np.argmax(snap.density))
        edges = snap.bin_edges
        assert edges[k] <= 0.305 < edges[k + 1]
        assert snap.mass0 == 0.0 and snap.mass1 == 0.0

    def test_boundary_values_to_masses(self):
        vals = np.array([[0.0], [1.0], [1.0], [0.5]])
        snap = build_histogram(make_ensemble(vals), 0)
        assert snap.mass0 == 0.25
        assert snap.mass1 == 0.5
        assert snap.density.sum() == 0.25

    def test_conservation(self):
        rng = np.random.default_rng(3)
        vals = rng.random((10_000, 1))
        vals[:100, 0] = 0.0
        vals[100:300, 0] = 1.0
        snap = build_histogram(make_ensemble(vals), 0)
        assert abs(snap.total_mass - 1.0) <= 1e-12

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        vals = rng.random((5000, 1))
        snap_a = build_histogram(make_ensemble(vals), 0)
        snap_b = build_histogram(make_ensemble(vals[rng.permutation(5000)]), 0)
        assert np.array_equal(snap_a.density, snap_b.density)
        assert np.array_equal(snap_a.errors, snap_b.errors)
        assert snap_a.mass0 == snap_b.mass0 and snap_a.mass1 == snap_b.mass1

    def test_statistical_errors(self):
        vals = np.concatenate([np.full(9, 0.005), [0.5]])[:, None]
        snap = build_histogram(make_ensemble(vals), 0)
        n = 10
        assert snap.errors[0] == math.sqrt(9) / n
        assert snap.errors[50] == math.sqrt(1) / n
        # empty bins get the sqrt(1)/n floor
        assert snap.errors[99] == 1.0 / n

    def test_edge_convention(self):
        # edges are [k*w, (k+1)*w); a value on an edge joins the upper bin
        vals = np.array([[0.01], [0.99], [0.5]])
        snap = build_histogram(make_ensemble(vals), 0)
        edges = snap.bin_edges
        for v in (0.01, 0.99, 0.5):
            k = int(np.searchsorted(edges, v, side="right") - 1)
            assert snap.density[k] > 0

    def test_validation(self):
        ens = make_ensemble(np.full((5, 2), 0.5))
        with pytest.raises(ValueError):
            build_histogram(ens, 5)
        with pytest.raises(ValueError):
            build_histogram(ens, 0, n_bins=10, bin_width=0.01)
        with pytest.raises(ValueError):
            TrajectoryEnsemble(n_traj=0, n_steps=1, dt=0.5, values=np.empty((0, 2)))

    def test_values_frozen(self):
        ens = make_ensemble(np.full((5, 1), 0.5))
        with pytest.raises(ValueError):
            ens.values[0, 0] = 0.1

    @pytest.mark.parametrize("bad", [math.nan, 1.2, -0.1])
    def test_out_of_range_values_rejected(self, bad):
        ens = make_ensemble(np.array([[0.5], [bad]]))
        with pytest.raises(ValueError):
            build_histogram(ens, 0)
