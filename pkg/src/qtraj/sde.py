"""Monte Carlo integration of the diffusive collapse process.

A single step of duration dt splits into two exactly solvable pieces:

* **Diffusion** (measurement back-action), strength ``kappa = g*dt``.
  The finite-step solution is a two-component Gaussian mixture for the
  dimensionless record ``u ~ rho00*N(+1, 1/kappa) + rho11*N(-1, 1/kappa)``
  followed by ``z <- z + kappa*u``.  The update composes exactly (two
  steps of kappa equal one step of 2*kappa in distribution) and keeps
  the population a martingale, which is the Born rule in this setting.

* **Relaxation**, exponent ``delta = dt/T1``: ``rho11 <- rho11*e^-delta``
  exactly, evaluated in z with log1p/expm1 so neither tail loses
  precision.

:func:`step_trotter` combines them symmetrically (half relaxation,
diffusion, half relaxation), giving O(dt^2) global splitting error; both
sub-steps individually are exact.  :func:`step_euler_maruyama` is a
plain first-order reference integrator in population space, kept only
for convergence cross-checks.

Ensembles are generated with the counter-based streams of
:mod:`qtraj.rng` and processed in fixed-size trajectory chunks, so the
output is byte-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import Z_CAP, ModelParams, QubitState, TrajectoryEnsemble, to_logodds, to_rho
from .rng import STREAM_BRANCH, STREAM_NOISE, SeedSpec, counter_normal, counter_uniform

__all__ = [
    "StepBudget",
    "SeedSpec",
    "step_diffusion_exact",
    "step_relaxation_exact",
    "step_trotter",
    "step_euler_maruyama",
    "simulate_ensemble",
    "simulate_ensemble_euler",
]

# Trajectories are processed in fixed chunks of this size.  The chunk
# grid depends only on trajectory indices, never on the worker count,
# which keeps ensemble output byte-identical under any parallel split.
CHUNK = 65536


@dataclass(frozen=True)
class StepBudget:
    """Dimensionless cost of one symmetric Trotter step.

    kappa = g*dt (diffusion strength), delta = dt/T1 (relaxation
    exponent); after n steps the evolution parameter is tau = n*kappa.
    """

    kappa: float
    delta: float

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")

    @classmethod
    def from_params(cls, params: ModelParams) -> "StepBudget":
        return cls(kappa=params.kappa, delta=params.delta)


def _relax_z(z, delta: float):
    """Exact relaxation update in log-odds coordinates (vectorized).

    Implements rho11 -> rho11 * e^-delta, i.e.
    z' = 0.5*log(expm1(delta) + exp(delta + 2 z)), in a form that is
    stable in both tails.  A state at z = +Z_CAP stays put; z = -Z_CAP
    re-enters (rho00 = 0 is not absorbing under relaxation).
    """
    if delta == 0.0:
        return z
    z = np.asarray(z, dtype=float)
    # z >= 0: factor out exp(delta + 2z); z < 0: direct form, both are
    # sums of positive terms (no cancellation).
    grow = z + 0.5 * delta + 0.5 * np.log1p(-math.expm1(-delta) * np.exp(-2.0 * z))
    reentry = 0.5 * np.log(math.expm1(delta) + np.exp(delta + 2.0 * z))
    out = np.where(z >= 0.0, grow, reentry)
    return np.clip(out, -Z_CAP, Z_CAP)


def _diffusion_z(z, kappa: float, u, xi):
    """Exact diffusion update in log-odds coordinates (vectorized).

    ``u`` is a uniform in (0,1) choosing the mixture branch, ``xi`` a
    standard normal.  States at |z| >= Z_CAP are eigenstates and stay
    fixed (their draws are simply unused; counter-based streams make
    that safe).
    """
    z = np.asarray(z, dtype=float)
    branch = np.where(u < expit(2.0 * z), 1.0, -1.0)
    znew = np.clip(z + kappa * branch + math.sqrt(kappa) * xi, -Z_CAP, Z_CAP)
    return np.where(np.abs(z) >= Z_CAP, z, znew)


def step_relaxation_exact(state: QubitState, delta: float) -> QubitState:
    """Apply the exact relaxation map rho11 -> rho11*e^-delta.

    Parameters
    ----------
    state : QubitState
    delta : float
        Dimensionless relaxation exponent dt/T1, >= 0.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if delta == 0.0:
        return state
    return QubitState(z=float(_relax_z(state.z, delta)))


def step_diffusion_exact(
    state: QubitState, kappa: float, rng: np.random.Generator
) -> QubitState:
    """One exact finite-size diffusion step of strength kappa = g*dt.

    Draws the dimensionless record from the two-component Gaussian
    mixture N(+1, 1/kappa) weighted by rho00 and N(-1, 1/kappa) weighted
    by rho11, then shifts z by kappa times the record.  kappa = 0
    returns the state unchanged without consuming randomness.
    """
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    if kappa == 0.0 or state.absorbed:
        return state
    u = rng.random()
    xi = rng.standard_normal()
    return QubitState(z=float(_diffusion_z(state.z, kappa, u, xi)))


def step_trotter(
    state: QubitState, budget: StepBudget, rng: np.random.Generator
) -> QubitState:
    """Symmetric Trotter step: half relaxation, diffusion, half relaxation."""
    s = step_relaxation_exact(state, 0.5 * budget.delta)
    s = step_diffusion_exact(s, budget.kappa, rng)
    return step_relaxation_exact(s, 0.5 * budget.delta)


def step_euler_maruyama(
    state: QubitState, g: float, dt: float, T1: float, rng: np.random.Generator
) -> QubitState:
    """First-order reference step in population space.

    rho00 <- rho00 + 2*sqrt(g)*rho00*rho11*sqrt(dt)*xi + (rho11/T1)*dt,
    clamped to [0, 1] (the eigenstate boundaries are absorbing).  Valid
    only for g*dt << 1; keep g*dt <= 1e-3.  For convergence cross-checks
    against the exact stepper, not production use.
    """
    if g == 0.0 and math.isinf(T1):
        return state
    rho = state.rho00
    rho11 = state.rho11
    xi = rng.standard_normal()
    rho_new = rho + 2.0 * math.sqrt(g) * rho * rho11 * math.sqrt(dt) * xi
    if not math.isinf(T1):
        rho_new += rho11 / T1 * dt
    return QubitState.from_rho00(min(1.0, max(0.0, rho_new)))


def _simulate_chunk(
    out: np.ndarray,
    lo: int,
    hi: int,
    z0: float,
    kappa: float,
    delta: float,
    n_steps: int,
    master_seed: int,
) -> None:
    """Run trajectories [lo, hi) and write population slices into out."""
    traj = np.arange(lo, hi, dtype=np.uint64)
    z = np.full(hi - lo, z0, dtype=float)
    out[lo:hi, 0] = to_rho(z)
    half = 0.5 * delta
    for s in range(n_steps):
        z = _relax_z(z, half)
        u = counter_uniform(master_seed, traj, s, STREAM_BRANCH)
        xi = counter_normal(master_seed, traj, s, STREAM_NOISE)
        z = _diffusion_z(z, kappa, u, xi)
        z = _relax_z(z, half)
        out[lo:hi, s + 1] = to_rho(z)


def simulate_ensemble(
    params: ModelParams,
    n_traj: int,
    seeds: SeedSpec,
    n_workers: int = 1,
) -> TrajectoryEnsemble:
    """Simulate an ensemble of independent trajectories.

    Every trajectory runs ``params.n_steps`` symmetric Trotter steps from
    ``params.x0``.  Output is bit-reproducible for a fixed ``seeds``
    regardless of ``n_workers``; on any failure (including memory
    exhaustion) the exception propagates and no partial ensemble is
    returned.

    Parameters
    ----------
    params : ModelParams
    n_traj : int
        Number of trajectories (>= 1).
    seeds : SeedSpec
        Master seed; trajectory i uses the (seed, i, step) substreams.
    n_workers : int
        Thread count for chunk-parallel execution.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    out = np.empty((n_traj, params.n_steps + 1), dtype=float)
    z0 = to_logodds(params.x0)
    spans = [(lo, min(lo + CHUNK, n_traj)) for lo in range(0, n_traj, CHUNK)]

    def run(span):
        lo, hi = span
        _simulate_chunk(
            out, lo, hi, z0, params.kappa, params.delta, params.n_steps,
            seeds.master_seed,
        )

    if n_workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)

    return TrajectoryEnsemble(
        n_traj=n_traj,
        n_steps=params.n_steps,
        dt=params.dt,
        values=out,
        x0=params.x0,
        master_seed=seeds.master_seed,
    )


def simulate_ensemble_euler(
    params: ModelParams, n_traj: int, rng: np.random.Generator
) -> np.ndarray:
    """Final-slice populations from the Euler-Maruyama reference scheme.

    Returns only the last time slice (the scheme needs many small steps,
    so storing every slice would be wasteful).  Not covered by the
    determinism contract; pass a seeded Generator for repeatability.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    rho = np.full(n_traj, params.x0, dtype=float)
    amp = 2.0 * math.sqrt(params.g * params.dt)
    rel = params.dt / params.T1 if not math.isinf(params.T1) else 0.0
    for _ in range(params.n_steps):
        xi = rng.standard_normal(n_traj)
        rho11 = 1.0 - rho
        rho = rho + amp * rho * rho11 * xi + rel * rho11
        np.clip(rho, 0.0, 1.0, out=rho)
    return rho
