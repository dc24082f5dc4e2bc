"""Counter-based random streams for reproducible parallel Monte Carlo.

Every variate is a pure function of ``(master_seed, trajectory, step,
stream)``: a chain of SplitMix64 finalizer rounds hashes the counter
tuple to 64 bits, which become a uniform in (0, 1) or, through the
inverse normal CDF, a standard Gaussian.  Because nothing is drawn
sequentially, any partitioning of trajectories over threads or processes
reproduces identical numbers, and absorbed trajectories can simply
ignore their draws without shifting anybody else's stream.

Uniforms keep 52 random bits and live in [2^-53, 1 - 2^-53], so the
inverse CDF never sees 0 or 1 (normals are capped near +-8.2 sigma,
a truncation of ~1e-16 probability mass).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = ["SeedSpec", "STREAM_BRANCH", "STREAM_NOISE", "counter_uniform", "counter_normal"]

# Stream ids: one uniform (branch/outcome choice) and one Gaussian
# (diffusion noise or record noise) per (trajectory, step).
STREAM_BRANCH = 0
STREAM_NOISE = 1

_PHI = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_ONE = np.uint64(1)


@dataclass(frozen=True)
class SeedSpec:
    """Master seed for an ensemble run.

    Trajectory ``i`` consumes the substream keyed by
    ``(master_seed, i, step, stream)``; identical ``(master_seed, i,
    n_steps)`` therefore reproduce an identical trajectory regardless of
    execution order or thread count.
    """

    master_seed: int

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")


def _mix(h):
    """SplitMix64 finalizer (bijective 64-bit scramble)."""
    h = h ^ (h >> np.uint64(30))
    h = h * _M1
    h = h ^ (h >> np.uint64(27))
    h = h * _M2
    h = h ^ (h >> np.uint64(31))
    return h


def _counter_bits(master_seed: int, traj, step: int, stream: int):
    traj = np.asarray(traj, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(master_seed) + _PHI * (traj + _ONE))
        h = _mix(h + _PHI * np.uint64(step + 1))
        h = _mix(h + _PHI * np.uint64(stream + 1))
    return h


def counter_uniform(master_seed: int, traj, step: int, stream: int):
    """Uniform variate(s) in (0, 1) for the given counter tuple.

    ``traj`` may be a scalar or an integer array; the result matches its
    shape.
    """
    h = _counter_bits(master_seed, traj, step, stream)
    return ((h >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52


def counter_normal(master_seed: int, traj, step: int, stream: int):
    """Standard normal variate(s) for the given counter tuple."""
    return ndtri(counter_uniform(master_seed, traj, step, stream))
