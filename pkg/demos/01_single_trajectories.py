"""Watching single quantum trajectories collapse.

A weakly measured qubit performs a random walk in the log-odds
coordinate z with drift toward whichever eigenstate it is closer to; in
the population rho00 this looks like noisy, reluctant collapse.  The
evolution parameter tau = g*t sets how far along the collapse is:
tau ~ 0.1 barely perturbs the state, tau > 10 is effectively projective.
With a finite T1 the excited-state population also leaks toward
rho00 = 1, biasing every trajectory upward.

Run:  python demos/01_single_trajectories.py
"""

import math
import os

import numpy as np

from qtraj import ModelParams, SeedSpec, simulate_ensemble

OUT = os.path.join(os.path.dirname(__file__), "output")


def show(title, params, n_traj=6, seed=7):
    ens = simulate_ensemble(params, n_traj, SeedSpec(seed))
    final = ens.values[:, -1]
    print(f"\n{title}")
    print(f"  tau_total = {params.tau_total:.2f}, T1 = {params.T1}")
    print(f"  final populations: {np.array2string(final, precision=3)}")
    return ens


weak = show(
    "Weak measurement (tau = 0.3): trajectories wander near the start",
    ModelParams(g=0.03, T1=math.inf, dt=0.5, x0=0.305, n_steps=20),
)

strong = show(
    "Strong measurement (tau = 12): every run lands on an eigenstate",
    ModelParams(g=0.6, T1=math.inf, dt=0.5, x0=0.305, n_steps=40),
)

relaxed = show(
    "Weak measurement with T1 = 45 us: relaxation drags runs upward",
    ModelParams(g=0.03, T1=45.0, dt=0.5, x0=0.305, n_steps=80),
)

print(
    "\nBorn rule in action: over many strong runs the fraction ending at"
    " rho00 = 1 approaches the initial population x0 = 0.305."
)
big = simulate_ensemble(
    ModelParams(g=0.6, T1=math.inf, dt=0.5, x0=0.305, n_steps=40),
    20_000,
    SeedSpec(11),
)
frac = float((big.values[:, -1] > 0.99).mean())
print(f"  fraction collapsed up: {frac:.4f} (expect 0.305 +- 0.013)")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(OUT, exist_ok=True)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2), sharey=True)
    for ax, (ens, title) in zip(
        axes,
        [(weak, "tau = 0.3"), (strong, "tau = 12"), (relaxed, "T1 = 45 us")],
    ):
        for row in ens.values:
            ax.plot(ens.times, row, lw=1)
        ax.set_title(title)
        ax.set_xlabel("t (us)")
        ax.set_ylim(-0.02, 1.02)
    axes[0].set_ylabel(r"$\rho_{00}$")
    fig.tight_layout()
    path = os.path.join(OUT, "single_trajectories.png")
    fig.savefig(path, dpi=120)
    print(f"\nfigure written to {path}")
except ImportError:
    print("\nmatplotlib not installed; skipping the figure")
