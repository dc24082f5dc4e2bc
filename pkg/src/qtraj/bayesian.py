"""Experiment-side pipeline: records, reconstruction, calibration.

The measured observable is the step-integrated current I_m, Gaussian
around I0 or I1 (per eigenstate) with standard deviation sigma.  A
record multiplies the population ratio by the two-hypothesis Gaussian
likelihood ratio, which in log-odds form is the single addition

    z <- z + (I0 - I1) * (2*I_m - I0 - I1) / (4 sigma^2).

Interleaving that with exact relaxation half-steps (the same symmetric
Trotter layout as the simulator) turns a current record into a quantum
trajectory.  With records drawn from the honest generative mixture
``rho00*N(I0, sigma^2) + rho11*N(I1, sigma^2)`` the update is the
diffusive collapse step in disguise, with per-step strength
``kappa = (I0 - I1)^2 / (4 sigma^2)``.

Synthetic generation (:func:`generate_records`) draws the mixture weight
from the state *after* the leading relaxation half-step and advances the
latent state through the identical update kernels, so
record generation and reconstruction are exactly adjoint: reconstructing
generated records reproduces the latent trajectories bit for bit.

Calibration helpers extract (I0, I1, sigma) by closed-form Gaussian ML
fits, T1 from the decay of the ensemble-averaged current of an
excited-state ensemble, an effective I0/I1 time series that replaces the
early-time transient by exponential-fit values, and the amplifier
efficiency implied by a fitted evolution parameter.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit
from scipy.special import expit

from .core import (
    Z_CAP,
    CalibrationParams,
    ModelParams,
    QubitState,
    TrajectoryEnsemble,
    to_logodds,
    to_rho,
)
from .rng import STREAM_BRANCH, STREAM_NOISE, SeedSpec, counter_normal, counter_uniform
from .sde import CHUNK, _relax_z, step_relaxation_exact

__all__ = [
    "FitFailureError",
    "MeasurementRecord",
    "RecordSet",
    "EfficiencyModel",
    "CalibrationSeries",
    "EffectiveCalibration",
    "GaussianCurrentFit",
    "T1Estimate",
    "update_measurement",
    "update_relaxation",
    "reconstruct_trajectory",
    "reconstruct_ensemble",
    "generate_records",
    "fit_gaussian_current",
    "estimate_T1",
    "preprocess_calibration",
    "estimate_efficiency",
    "preparation_uncertainty",
]


class FitFailureError(RuntimeError):
    """A calibration fit could not be performed on the given data."""


@dataclass(frozen=True)
class MeasurementRecord:
    """Per-step integrated currents of a single run."""

    currents: np.ndarray
    dt: float

    def __post_init__(self):
        c = np.asarray(self.currents, dtype=float)
        if c.ndim != 1:
            raise ValueError("currents must be a 1-D array")
        if not np.all(np.isfinite(c)):
            raise ValueError("currents must be finite")
        object.__setattr__(self, "currents", c)
        c.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return self.currents.size


@dataclass(frozen=True)
class RecordSet:
    """An ensemble of measurement records with shared calibration."""

    currents: np.ndarray  # shape (n_traj, n_steps)
    cal: CalibrationParams
    x0: float
    master_seed: int | None = None

    def __post_init__(self):
        c = self.currents
        if c.ndim != 2:
            raise ValueError("currents must be a 2-D array (n_traj, n_steps)")
        c.setflags(write=False)

    @property
    def n_traj(self) -> int:
        return self.currents.shape[0]

    @property
    def n_steps(self) -> int:
        return self.currents.shape[1]

    @property
    def dt(self) -> float:
        return self.cal.dt

    def record(self, i: int) -> MeasurementRecord:
        return MeasurementRecord(currents=self.currents[i].copy(), dt=self.cal.dt)


@dataclass(frozen=True)
class EfficiencyModel:
    """Split of the observed record variance into signal and added noise.

    sigma_obs^2 = sigma_ideal^2 + sigma_noise^2 and
    eta = sigma_ideal^2 / sigma_obs^2.
    """

    sigma_obs: float
    sigma_ideal: float
    sigma_noise: float
    eta: float

    def __post_init__(self):
        if not (self.sigma_obs > 0 and self.sigma_ideal > 0):
            raise ValueError("sigma_obs and sigma_ideal must be > 0")
        if self.sigma_noise < 0:
            raise ValueError("sigma_noise must be >= 0")
        if not math.isclose(
            self.sigma_obs**2, self.sigma_ideal**2 + self.sigma_noise**2, rel_tol=1e-9
        ):
            raise ValueError("sigma_obs^2 != sigma_ideal^2 + sigma_noise^2")
        if not math.isclose(self.eta, self.sigma_ideal**2 / self.sigma_obs**2, rel_tol=1e-9):
            raise ValueError("eta != sigma_ideal^2 / sigma_obs^2")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")

    @classmethod
    def from_split(cls, sigma_ideal: float, sigma_noise: float) -> "EfficiencyModel":
        obs = math.hypot(sigma_ideal, sigma_noise)
        return cls(
            sigma_obs=obs,
            sigma_ideal=sigma_ideal,
            sigma_noise=sigma_noise,
            eta=sigma_ideal**2 / obs**2,
        )


@dataclass(frozen=True)
class CalibrationSeries:
    """Time-resolved calibration samples over the trajectory duration."""

    times: np.ndarray
    I0: np.ndarray
    I1: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        n = self.times.size
        if not (self.I0.size == n and self.I1.size == n and self.sigma.size == n):
            raise ValueError("all series must share the time base")


@dataclass(frozen=True)
class EffectiveCalibration:
    """I0/I1 values to use per step after transient preprocessing."""

    times: np.ndarray
    I0: np.ndarray
    I1: np.ndarray


@dataclass(frozen=True)
class GaussianCurrentFit:
    center: float
    center_err: float
    sigma: float
    sigma_err: float
    n: int


@dataclass(frozen=True)
class T1Estimate:
    T1: float
    T1_err: float
    I_inf: float
    amplitude: float


def _meas_z(z, Im, cal: CalibrationParams):
    """Vectorized log-odds update for record(s) Im; caps stay fixed."""
    z = np.asarray(z, dtype=float)
    coeff = (cal.I0 - cal.I1) / (4.0 * cal.sigma**2)
    znew = np.clip(z + coeff * (2.0 * np.asarray(Im, dtype=float) - cal.I0 - cal.I1),
                   -Z_CAP, Z_CAP)
    return np.where(np.abs(z) >= Z_CAP, z, znew)


def update_measurement(state: QubitState, Im: float, cal: CalibrationParams) -> QubitState:
    """Bayesian update of the state for one integrated-current sample.

    Multiplies the population ratio by the Gaussian likelihood ratio of
    the two eigenstate hypotheses; any real Im is admissible.  A state at
    the absorption cap is an eigenstate and stays fixed.
    """
    return QubitState(z=float(_meas_z(state.z, Im, cal)))


def update_relaxation(state: QubitState, dt: float, T1: float) -> QubitState:
    """Exact relaxation over dt; shares the simulator implementation."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    return step_relaxation_exact(state, dt / T1)


def _per_step_cals(cal: CalibrationParams, effective, n_steps: int):
    """Per-step calibration list; constant unless an effective I0/I1
    series (from transient preprocessing) is supplied."""
    if effective is None:
        return [cal] * n_steps
    if effective.I0.size < n_steps or effective.I1.size < n_steps:
        raise ValueError("effective calibration shorter than the record")
    return [
        CalibrationParams(
            I0=float(effective.I0[s]), I1=float(effective.I1[s]),
            sigma=cal.sigma, dt=cal.dt, T1=cal.T1, dts=cal.dts,
        )
        for s in range(n_steps)
    ]


def _reconstruct_chunk(out, lo, hi, currents, z0, cals, half):
    z = np.full(hi - lo, z0, dtype=float)
    out[lo:hi, 0] = to_rho(z)
    for s in range(currents.shape[1]):
        z = _relax_z(z, half)
        z = _meas_z(z, currents[lo:hi, s], cals[s])
        z = _relax_z(z, half)
        out[lo:hi, s + 1] = to_rho(z)


def reconstruct_trajectory(
    record: MeasurementRecord,
    cal: CalibrationParams,
    x0: float,
    effective: EffectiveCalibration | None = None,
) -> np.ndarray:
    """Trajectory of rho00 from one record (initial value included).

    Each step applies relax(dt/2T1), measurement, relax(dt/2T1), the
    same symmetric layout the generator uses.  When ``effective`` is
    given (output of :func:`preprocess_calibration`, one entry per
    step), its I0/I1 values replace the constant calibration centers
    step by step.
    """
    if not math.isclose(record.dt, cal.dt, rel_tol=1e-12):
        raise ValueError("record and calibration dt mismatch")
    out = np.empty((1, record.n_steps + 1))
    cals = _per_step_cals(cal, effective, record.n_steps)
    _reconstruct_chunk(
        out, 0, 1, record.currents[None, :], to_logodds(x0), cals,
        0.5 * cal.dt / cal.T1,
    )
    return out[0]


def reconstruct_ensemble(
    records: RecordSet,
    x0: float | None = None,
    n_workers: int = 1,
    effective: EffectiveCalibration | None = None,
) -> TrajectoryEnsemble:
    """Reconstruct every record of a RecordSet into a TrajectoryEnsemble.

    Deterministic: the same records and calibration give bitwise
    identical trajectories for any worker count.  ``effective``
    optionally supplies per-step I0/I1 values (transient repair).
    """
    x0 = records.x0 if x0 is None else x0
    cal = records.cal
    n_traj, n_steps = records.currents.shape
    out = np.empty((n_traj, n_steps + 1))
    z0 = to_logodds(x0)
    half = 0.5 * cal.dt / cal.T1
    cals = _per_step_cals(cal, effective, n_steps)
    spans = [(lo, min(lo + CHUNK, n_traj)) for lo in range(0, n_traj, CHUNK)]

    def run(span):
        lo, hi = span
        _reconstruct_chunk(out, lo, hi, records.currents, z0, cals, half)

    if n_workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)
    return TrajectoryEnsemble(
        n_traj=n_traj, n_steps=n_steps, dt=cal.dt, values=out,
        x0=x0, master_seed=records.master_seed,
    )


def _generate_chunk(currents, latent, lo, hi, z0, cal, half, n_steps, master_seed):
    traj = np.arange(lo, hi, dtype=np.uint64)
    z = np.full(hi - lo, z0, dtype=float)
    latent[lo:hi, 0] = to_rho(z)
    for s in range(n_steps):
        z = _relax_z(z, half)
        u = counter_uniform(master_seed, traj, s, STREAM_BRANCH)
        xi = counter_normal(master_seed, traj, s, STREAM_NOISE)
        center = np.where(u < expit(2.0 * z), cal.I0, cal.I1)
        im = center + cal.sigma * xi
        currents[lo:hi, s] = im
        z = _meas_z(z, im, cal)
        z = _relax_z(z, half)
        latent[lo:hi, s + 1] = to_rho(z)


def generate_records(
    params: ModelParams,
    cal: CalibrationParams,
    n_traj: int,
    seeds: SeedSpec,
    n_workers: int = 1,
) -> tuple[RecordSet, TrajectoryEnsemble]:
    """Draw synthetic current records plus their latent trajectories.

    Per step the current is sampled from the eigenstate mixture weighted
    by the latent population after the leading relaxation half-step,
    then the latent state is advanced by the same measurement and
    relaxation kernels reconstruction uses, so a reconstruction round
    trip is bitwise exact.

    The calibration must be consistent with the model: the record-implied
    strength (I0-I1)^2/(4 sigma^2) defines g*dt.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if not math.isclose(params.kappa, cal.kappa, rel_tol=1e-9):
        raise ValueError(
            f"params.g*dt = {params.kappa} inconsistent with calibration "
            f"kappa = {cal.kappa}"
        )
    if not math.isclose(params.dt, cal.dt, rel_tol=1e-12):
        raise ValueError("params.dt != cal.dt")
    if not (params.T1 == cal.T1 or math.isclose(params.T1, cal.T1, rel_tol=1e-12)):
        raise ValueError("params.T1 != cal.T1")

    n_steps = params.n_steps
    currents = np.empty((n_traj, n_steps))
    latent = np.empty((n_traj, n_steps + 1))
    z0 = to_logodds(params.x0)
    half = 0.5 * params.delta
    spans = [(lo, min(lo + CHUNK, n_traj)) for lo in range(0, n_traj, CHUNK)]

    def run(span):
        lo, hi = span
        _generate_chunk(
            currents, latent, lo, hi, z0, cal, half, n_steps, seeds.master_seed
        )

    if n_workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)

    recs = RecordSet(
        currents=currents, cal=cal, x0=params.x0, master_seed=seeds.master_seed
    )
    ens = TrajectoryEnsemble(
        n_traj=n_traj, n_steps=n_steps, dt=params.dt, values=latent,
        x0=params.x0, master_seed=seeds.master_seed,
    )
    return recs, ens


def fit_gaussian_current(samples) -> GaussianCurrentFit:
    """Closed-form ML Gaussian fit of current samples.

    Returns the sample mean and unbiased standard deviation with their
    standard errors sigma/sqrt(n) and sigma/sqrt(2n).  Requires at least
    100 samples and nonzero spread.
    """
    s = np.asarray(samples, dtype=float)
    if s.size < 100:
        raise ValueError("need at least 100 samples for a calibration fit")
    if np.all(s == s[0]):
        raise ValueError("degenerate sample set: zero variance")
    sigma = float(s.std(ddof=1))
    n = s.size
    return GaussianCurrentFit(
        center=float(s.mean()),
        center_err=sigma / math.sqrt(n),
        sigma=sigma,
        sigma_err=sigma / math.sqrt(2.0 * n),
        n=n,
    )


def _exp_decay(t, a, b, s):
    return a + b * np.exp(-t / s)


def estimate_T1(times, mean_currents, cal: CalibrationParams | None = None) -> T1Estimate:
    """Relaxation time from the decay of the ensemble-averaged current.

    Fits <I>(t) = I0 + (I1 - I0) e^{-t/T1} on a series taken from an
    excited-state-initialized ensemble.  Raises FitFailureError when the
    series carries no decay to fit.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(mean_currents, dtype=float)
    if t.size != y.size or t.size < 4:
        raise ValueError("need matching time/current series of length >= 4")
    spread = float(y.max() - y.min())
    scale = max(abs(y).max(), 1.0)
    if spread < 1e-12 * scale:
        raise FitFailureError("current series is constant; no decay to fit")
    if cal is not None:
        p0 = (cal.I0, cal.I1 - cal.I0, max(cal.T1, t[-1]) if math.isfinite(cal.T1) else t[-1])
    else:
        p0 = (y[-1], y[0] - y[-1], (t[-1] - t[0]) / 2.0)
    try:
        popt, pcov = curve_fit(
            _exp_decay, t, y, p0=p0, maxfev=20000, xtol=1e-14, ftol=1e-14
        )
    except (RuntimeError, ValueError) as exc:
        raise FitFailureError(f"T1 fit did not converge: {exc}") from exc
    a, b, s = popt
    s_err = math.sqrt(abs(pcov[2, 2])) if np.all(np.isfinite(pcov)) else math.inf
    if s <= 0 or not math.isfinite(s) or abs(b) < 1e-9 * scale:
        raise FitFailureError("fitted series does not decay")
    return T1Estimate(T1=float(s), T1_err=float(s_err), I_inf=float(a), amplitude=float(b))


def preprocess_calibration(
    series: CalibrationSeries, t_anomaly: float = 2.0, t_eval: float = 2.5
) -> EffectiveCalibration:
    """Replace the early-time transient of I0(t), I1(t) by fit values.

    Observed values are kept for t <= t_anomaly; beyond it, I0 is
    replaced by the asymptote of an exponential fit over t > t_anomaly
    and I1 by that fit evaluated at t_eval.  If a fit fails the raw
    series is passed through with a warning.  Drift of sigma(t) is
    deliberately left alone: it is absorbed by the fitted evolution
    parameter.
    """
    t = series.times
    if t[-1] < t_eval:
        raise ValueError(f"series must span at least {t_eval}")
    tail = t > t_anomaly
    if tail.sum() < 4:
        raise ValueError("too few samples beyond the anomalous window")

    def fitted(y, eval_at):
        yt = y[tail]
        if float(yt.max() - yt.min()) == 0.0:
            return float(yt[0])  # already constant, nothing to repair
        p0 = (yt[-1], yt[0] - yt[-1], (t[-1] - t_anomaly) / 2.0)
        try:
            popt, _ = curve_fit(_exp_decay, t[tail], yt, p0=p0, maxfev=20000)
        except (RuntimeError, ValueError):
            warnings.warn(
                "calibration transient fit failed; using raw series",
                stacklevel=3,
            )
            return None
        a, b, s = popt
        if eval_at is None:
            return float(a)  # asymptote
        return float(_exp_decay(eval_at, a, b, s))

    i0_val = fitted(series.I0, None)
    i1_val = fitted(series.I1, t_eval)
    I0_eff = series.I0.astype(float).copy()
    I1_eff = series.I1.astype(float).copy()
    if i0_val is not None:
        I0_eff[tail] = i0_val
    if i1_val is not None:
        I1_eff[tail] = i1_val
    return EffectiveCalibration(times=t.copy(), I0=I0_eff, I1=I1_eff)


def estimate_efficiency(tau_fitted: float, cal: CalibrationParams, n_steps: int) -> float:
    """Amplifier efficiency implied by a fitted evolution parameter.

    eta = n_steps * kappa_obs / tau_fitted with kappa_obs from the
    observed calibration; a fitted tau already absorbs the efficiency,
    so ideal synthetic data give eta = 1.  Values above 1 indicate model
    mismatch and are reported with a warning, not clamped.
    """
    if not tau_fitted > 0:
        raise ValueError("tau_fitted must be > 0")
    eta = n_steps * cal.kappa / tau_fitted
    if eta > 1.0:
        warnings.warn(
            f"implied efficiency {eta:.3f} > 1 indicates model mismatch",
            stacklevel=2,
        )
    return eta


def preparation_uncertainty(cal: CalibrationParams) -> float:
    """Initial-state uncertainty 1 - e^{-dts/T1} of the heralding step."""
    if math.isinf(cal.T1):
        return 0.0
    return -math.expm1(-cal.dts / cal.T1)
