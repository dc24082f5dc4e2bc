"""Shared domain types for diffusive weak measurement of a single qubit.

The measured qubit carries no coherences that matter here: the dynamics
closes on the diagonal of the density matrix, so the state is a single
number, the ground-state population ``rho00`` (``rho11 = 1 - rho00``).
All evolution code stores the state in the log-odds coordinate

    z = atanh(rho00 - rho11) = atanh(2*rho00 - 1),

because every update multiplies the population *ratio* by a likelihood
factor, which is an addition in z.  Working in z avoids catastrophic
cancellation when the state approaches the eigenstates at rho00 = 0, 1.

z is capped at ``Z_CAP = 30``: tanh(30) differs from 1 by ~1e-26, far
below double-precision resolution of rho00, so a state at |z| = Z_CAP
reports a population of exactly 0 or 1.  The cap applies to the z
magnitude only; relaxation can re-enter from rho00 = 0 when T1 is
finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "Z_CAP",
    "QubitState",
    "ModelParams",
    "CalibrationParams",
    "TrajectoryEnsemble",
    "DistributionSnapshot",
    "to_logodds",
    "to_rho",
    "build_histogram",
]

# Absorption cap for the log-odds coordinate. tanh(30) rounds to 1.0 in
# float64, so |z| >= Z_CAP is indistinguishable from an eigenstate.
Z_CAP = 30.0


def to_logodds(rho00):
    """Map a population rho00 in [0, 1] to the log-odds coordinate z.

    Parameters
    ----------
    rho00 : float or ndarray
        Ground-state population(s), each in [0, 1].

    Returns
    -------
    float or ndarray
        z = atanh(2*rho00 - 1), clamped to [-Z_CAP, Z_CAP].  Inputs of
        exactly 0 or 1 (or within one representable step of them) map to
        -Z_CAP / +Z_CAP.

    Raises
    ------
    ValueError
        If any input lies outside [0, 1].
    """
    r = np.asarray(rho00, dtype=float)
    if np.any(r < 0.0) or np.any(r > 1.0) or np.any(np.isnan(r)):
        raise ValueError("rho00 must lie in [0, 1]")
    # log(r) - log1p(-r) keeps full relative accuracy near both ends,
    # unlike atanh(2 r - 1) which loses ~1e-5 relative near r = 0.
    with np.errstate(divide="ignore"):
        z = 0.5 * (np.log(r) - np.log1p(-r))
    z = np.clip(z, -Z_CAP, Z_CAP)
    if np.ndim(rho00) == 0:
        return float(z)
    return z


def to_rho(z):
    """Inverse of :func:`to_logodds`: population view of a z value.

    A z at the cap reports exactly 0.0 or 1.0; otherwise the logistic
    ``expit(2 z)`` is used, which is accurate to full relative precision
    near rho00 = 0 (``(1 + tanh z)/2`` is not).
    """
    zz = np.asarray(z, dtype=float)
    r = expit(2.0 * zz)
    r = np.where(zz <= -Z_CAP, 0.0, r)
    r = np.where(zz >= Z_CAP, 1.0, r)
    if np.ndim(z) == 0:
        return float(r)
    return r


@dataclass(frozen=True)
class QubitState:
    """Diagonal qubit state in the log-odds coordinate.

    Attributes
    ----------
    z : float
        Log-odds coordinate, always within [-Z_CAP, Z_CAP].
    """

    z: float

    def __post_init__(self):
        if math.isnan(self.z):
            raise ValueError("z must not be NaN")
        object.__setattr__(self, "z", float(np.clip(self.z, -Z_CAP, Z_CAP)))

    @classmethod
    def from_rho00(cls, rho00: float) -> "QubitState":
        return cls(z=to_logodds(rho00))

    @property
    def rho00(self) -> float:
        return to_rho(self.z)

    @property
    def rho11(self) -> float:
        return to_rho(-self.z)

    @property
    def absorbed(self) -> bool:
        """True when the state sits at the absorption cap."""
        return abs(self.z) >= Z_CAP


@dataclass(frozen=True)
class ModelParams:
    """Theory-side simulation parameters.

    Attributes
    ----------
    g : float
        Measurement coupling, units 1/time (>= 0).
    T1 : float
        Excited-state relaxation time; ``math.inf`` disables relaxation.
    dt : float
        Step duration (> 0), same time units as 1/g and T1.
    x0 : float
        Initial population rho00, in [0, 1].
    n_steps : int
        Number of integration steps (>= 0).
    """

    g: float
    T1: float
    dt: float
    x0: float
    n_steps: int

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("g must be >= 0")
        if not self.T1 > 0:
            raise ValueError("T1 must be > 0 (use math.inf for no relaxation)")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not 0.0 <= self.x0 <= 1.0:
            raise ValueError("x0 must lie in [0, 1]")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")

    @property
    def kappa(self) -> float:
        """Per-step dimensionless diffusion strength g*dt."""
        return self.g * self.dt

    @property
    def delta(self) -> float:
        """Per-step dimensionless relaxation exponent dt/T1."""
        return self.dt / self.T1

    @property
    def tau_total(self) -> float:
        """Dimensionless evolution parameter after all steps, n*g*dt."""
        return self.n_steps * self.kappa


@dataclass(frozen=True)
class CalibrationParams:
    """Experiment-side calibration of the measurement record.

    Attributes
    ----------
    I0, I1 : float
        Eigenstate current centers (arbitrary but common units).
    sigma : float
        Per-step standard deviation of the integrated current (> 0).
    dt : float
        Step duration.
    T1 : float
        Relaxation time (``math.inf`` allowed).
    dts : float
        Duration of the strong heralding measurement step.
    """

    I0: float
    I1: float
    sigma: float
    dt: float
    T1: float = math.inf
    dts: float = 0.5

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.I0 == self.I1:
            raise ValueError("I0 and I1 must differ")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.T1 > 0:
            raise ValueError("T1 must be > 0")

    @property
    def kappa(self) -> float:
        """Per-step measurement strength (I0 - I1)^2 / (4 sigma^2)."""
        return (self.I0 - self.I1) ** 2 / (4.0 * self.sigma**2)


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """Populations of many trajectories on a shared time grid.

    ``values[i, k]`` is rho00 of trajectory ``i`` at slice ``k``; slice 0
    is the prepared initial state and slice ``n_steps`` the final one.
    The array is frozen (read-only) after construction.
    """

    n_traj: int
    n_steps: int
    dt: float
    values: np.ndarray
    x0: float | None = None
    master_seed: int | None = None

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError("ensemble must hold at least one trajectory")
        v = self.values
        if v.shape != (self.n_traj, self.n_steps + 1):
            raise ValueError(
                f"values shape {v.shape} != (n_traj, n_steps + 1) = "
                f"({self.n_traj}, {self.n_steps + 1})"
            )
        v.setflags(write=False)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def slice_values(self, k: int) -> np.ndarray:
        """Populations of every trajectory at time-slice k."""
        return self.values[:, k]


@dataclass(frozen=True)
class DistributionSnapshot:
    """Binned distribution of rho00 at one time.

    ``density`` holds the probability *mass* per bin (not per unit
    length); together with the boundary point masses the total is 1.
    Values exactly at the eigenstates are kept out of the bins and
    reported in ``mass0`` / ``mass1``; published histograms may or may
    not do this, so the split is explicit here.
    """

    n_bins: int
    bin_width: float
    density: np.ndarray
    errors: np.ndarray
    mass0: float
    mass1: float
    t: float
    mass0_err: float = 0.0
    mass1_err: float = 0.0

    def __post_init__(self):
        if self.density.shape != (self.n_bins,) or self.errors.shape != (self.n_bins,):
            raise ValueError("density/errors must have shape (n_bins,)")
        self.density.setflags(write=False)
        self.errors.setflags(write=False)

    @property
    def bin_edges(self) -> np.ndarray:
        return np.arange(self.n_bins + 1) * self.bin_width

    @property
    def bin_centers(self) -> np.ndarray:
        return (np.arange(self.n_bins) + 0.5) * self.bin_width

    @property
    def total_mass(self) -> float:
        return float(self.density.sum() + self.mass0 + self.mass1)

    def same_binning(self, other: "DistributionSnapshot") -> bool:
        return self.n_bins == other.n_bins and self.bin_width == other.bin_width


def bin_index(values: np.ndarray, n_bins: int, bin_width: float) -> np.ndarray:
    """Bin assignment with edges [k*w, (k+1)*w); the value 1.0 is excluded
    upstream (boundary mass), everything else in [0, 1) gets a bin."""
    edges = np.arange(n_bins + 1) * bin_width
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.clip(idx, 0, n_bins - 1)


def build_histogram(
    ensemble: TrajectoryEnsemble,
    slice_index: int,
    n_bins: int = 100,
    bin_width: float = 0.01,
) -> DistributionSnapshot:
    """Histogram one time-slice of an ensemble into a DistributionSnapshot.

    Counts are normalized by the total trajectory number, so the bins plus
    the two boundary masses sum to 1.  Values exactly 0.0 / 1.0 go to
    ``mass0`` / ``mass1``.  The statistical error per bin is
    sqrt(count)/n_traj, with sqrt(1)/n_traj for empty bins so that
    downstream chi-square weights never divide by zero.

    Raises
    ------
    ValueError
        On an empty ensemble, an invalid slice, or a binning that does
        not cover [0, 1].
    """
    if ensemble.n_traj < 1:
        raise ValueError("ensemble is empty")
    if not 0 <= slice_index <= ensemble.n_steps:
        raise ValueError(f"slice_index {slice_index} out of range")
    if n_bins * bin_width < 1.0 - 1e-12:
        raise ValueError("n_bins * bin_width must cover [0, 1]")

    v = ensemble.slice_values(slice_index)
    n = ensemble.n_traj
    if not (v.min() >= 0.0 and v.max() <= 1.0):  # NaN fails both
        raise ValueError("ensemble values outside [0, 1]")
    at0 = v == 0.0
    at1 = v == 1.0
    interior = v[~(at0 | at1)]
    counts = np.bincount(
        bin_index(interior, n_bins, bin_width), minlength=n_bins
    ).astype(float)

    c0 = float(at0.sum())
    c1 = float(at1.sum())
    density = counts / n
    errors = np.sqrt(np.maximum(counts, 1.0)) / n
    return DistributionSnapshot(
        n_bins=n_bins,
        bin_width=bin_width,
        density=density,
        errors=errors,
        mass0=c0 / n,
        mass1=c1 / n,
        t=slice_index * ensemble.dt,
        mass0_err=math.sqrt(max(c0, 1.0)) / n,
        mass1_err=math.sqrt(max(c1, 1.0)) / n,
    )
