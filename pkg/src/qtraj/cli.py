"""Command-line pipeline: generate | simulate | solve-fp | reconstruct |
fit | calibrate | report.

Every run writes a manifest echoing the fully resolved configuration;
rerunning a command with the manifest as its config reproduces the
outputs byte for byte.  Times on this surface are microseconds.  The
only environment variable consulted is QTRAJ_THREADS (worker count when
n_workers is left at 0).
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import bayesian, fitting, io
from .core import CalibrationParams, ModelParams, build_histogram
from .fokker_planck import FPSolverError, fp_snapshot_to_bins, solve_fp
from .rng import SeedSpec
from .sde import simulate_ensemble

__all__ = ["RunConfig", "main"]

MODES = ("generate", "simulate", "solve-fp", "reconstruct", "fit", "calibrate", "report")

USAGE = """\
usage: qtraj MODE [--key=value ...]

modes:
  generate     synthetic measurement records + latent trajectories
  simulate     trajectory ensemble + per-slice histograms
  solve-fp     density snapshots from the Fokker-Planck solver
  reconstruct  trajectories from a record file
  fit          tau scan fit of per-slice histograms
  calibrate    I0/I1/sigma/T1 extraction from eigenstate record files
  report       observed / best-fit / no-relaxation histogram overlays

keys (any key is also a --key=value flag; --config=FILE loads a file first):
  out=DIR seed=INT n_traj=INT n_steps=INT dt_us=F g_per_us=F t1_us=F x0=F
  i0=F i1=F sigma=F dts_us=F n_bins=INT bin_width=F slices=K1,K2,...
  t_grid_us=T1,T2,... tau_min=F tau_max=F tau_step=F model=analytic|fp
  input=FILE ground=FILE excited=FILE n_workers=INT
  fp_cells=INT fp_zmin=F fp_zmax=F fp_dt_us=F

--seed is mandatory for generate and simulate (no silent entropy).
"""


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = ""
    out: str = "."
    seed: int = -1
    n_traj: int = 100000
    n_steps: int = 80
    dt_us: float = 0.5
    g_per_us: float = 0.0
    t1_us: float = math.inf
    x0: float = 0.305
    i0: float = 1.0
    i1: float = -1.0
    sigma: float = 5.0
    dts_us: float = 0.5
    n_bins: int = 100
    bin_width: float = 0.01
    slices: str = ""
    t_grid_us: str = ""
    tau_min: float = 0.0
    tau_max: float = 2.5
    tau_step: float = 0.01
    model: str = "auto"
    input: str = ""
    ground: str = ""
    excited: str = ""
    n_workers: int = 0
    fp_cells: int = 8192
    fp_zmin: float = -12.0
    fp_zmax: float = 12.0
    fp_dt_us: float = 0.0

    def slice_list(self, default):
        if not self.slices:
            return list(default)
        try:
            return [int(s) for s in self.slices.split(",") if s.strip()]
        except ValueError as exc:
            raise UsageError(f"bad slices value: {exc}") from exc

    def t_grid(self):
        try:
            return [float(s) for s in self.t_grid_us.split(",") if s.strip()]
        except ValueError as exc:
            raise UsageError(f"bad t_grid_us value: {exc}") from exc

    def workers(self) -> int:
        if self.n_workers > 0:
            return self.n_workers
        env = os.environ.get("QTRAJ_THREADS", "")
        if env:
            try:
                n = int(env)
            except ValueError as exc:
                raise UsageError(f"bad QTRAJ_THREADS value {env!r}") from exc
            if n > 0:
                return n
        return 1

    def cal(self) -> CalibrationParams:
        return CalibrationParams(
            I0=self.i0, I1=self.i1, sigma=self.sigma, dt=self.dt_us,
            T1=self.t1_us, dts=self.dts_us,
        )

    def tau_scan(self) -> np.ndarray:
        return fitting.default_tau_scan(self.tau_min, self.tau_max, self.tau_step)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    t = _FIELD_TYPES[key]
    try:
        if t == "int":
            return int(value)
        if t == "float":
            return float(value)
        return value
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {value!r}") from exc


def config_from_items(items: dict, mode: str | None = None) -> RunConfig:
    cfg = RunConfig()
    for key, value in items.items():
        if key not in _FIELD_TYPES:
            raise UsageError(f"unknown config key: {key}")
        setattr(cfg, key, _coerce(key, value))
    if mode is not None:
        if cfg.mode and cfg.mode != mode:
            raise UsageError(f"config mode {cfg.mode!r} conflicts with command {mode!r}")
        cfg.mode = mode
    if cfg.mode not in MODES:
        raise UsageError(f"unknown mode: {cfg.mode!r}")
    return cfg


def config_items(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = repr(v) if isinstance(v, float) else str(v)
    return out


def _write_manifest(cfg: RunConfig) -> None:
    os.makedirs(cfg.out, exist_ok=True)
    io.write_config(os.path.join(cfg.out, "manifest.txt"), config_items(cfg))


def _require_seed(cfg: RunConfig) -> SeedSpec:
    if cfg.seed < 0:
        raise UsageError(f"--seed is mandatory for {cfg.mode}")
    return SeedSpec(master_seed=cfg.seed)


def _require_input(path: str, what: str) -> str:
    if not path:
        raise UsageError(f"--{what} is required for this mode")
    if not os.path.exists(path):
        raise UsageError(f"{what} file does not exist: {path}")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: RunConfig) -> None:
    seeds = _require_seed(cfg)
    cal = cfg.cal()
    params = ModelParams(
        g=cal.kappa / cfg.dt_us, T1=cfg.t1_us, dt=cfg.dt_us, x0=cfg.x0,
        n_steps=cfg.n_steps,
    )
    recs, latent = bayesian.generate_records(
        params, cal, cfg.n_traj, seeds, n_workers=cfg.workers()
    )
    cfg.n_workers = cfg.workers()
    _write_manifest(cfg)
    io.write_records(os.path.join(cfg.out, "records.qrec"), recs)
    io.write_ensemble(os.path.join(cfg.out, "latent.qens"), latent)


def cmd_simulate(cfg: RunConfig) -> None:
    seeds = _require_seed(cfg)
    if cfg.g_per_us < 0:
        raise UsageError("simulate requires g_per_us >= 0")
    params = ModelParams(
        g=cfg.g_per_us, T1=cfg.t1_us, dt=cfg.dt_us, x0=cfg.x0, n_steps=cfg.n_steps
    )
    ens = simulate_ensemble(params, cfg.n_traj, seeds, n_workers=cfg.workers())
    cfg.n_workers = cfg.workers()
    _write_manifest(cfg)
    io.write_ensemble(os.path.join(cfg.out, "ensemble.qens"), ens)
    for k in cfg.slice_list([cfg.n_steps]):
        snap = build_histogram(ens, k, cfg.n_bins, cfg.bin_width)
        io.write_histogram(os.path.join(cfg.out, f"hist_{k:05d}.txt"), snap)


def cmd_solve_fp(cfg: RunConfig) -> None:
    if cfg.g_per_us < 0:
        raise UsageError("g_per_us must be >= 0")
    t_grid = cfg.t_grid()
    if not t_grid:
        raise UsageError("solve-fp requires t_grid_us")
    grids = solve_fp(
        cfg.x0, cfg.g_per_us, cfg.t1_us, t_grid,
        n_cells=cfg.fp_cells,
        z_min=cfg.fp_zmin,
        z_max=cfg.fp_zmax,
        dt=(cfg.fp_dt_us or None),
    )
    _write_manifest(cfg)
    for i, grid in enumerate(grids):
        snap = fp_snapshot_to_bins(grid, cfg.n_bins, cfg.bin_width)
        io.write_histogram(os.path.join(cfg.out, f"fp_{i:05d}.txt"), snap)


def cmd_reconstruct(cfg: RunConfig) -> None:
    recs = io.read_records(_require_input(cfg.input, "input"))
    ens = bayesian.reconstruct_ensemble(recs, n_workers=cfg.workers())
    cfg.n_workers = cfg.workers()
    _write_manifest(cfg)
    io.write_ensemble(os.path.join(cfg.out, "reconstructed.qens"), ens)


def _fit_ensemble(cfg: RunConfig, ens):
    slices = cfg.slice_list([ens.n_steps])
    for k in slices:
        if not 0 < k <= ens.n_steps:
            raise UsageError(f"slice {k} out of range 1..{ens.n_steps}")
    observed = [build_histogram(ens, k, cfg.n_bins, cfg.bin_width) for k in slices]
    x0 = ens.x0 if ens.x0 is not None else cfg.x0
    model = cfg.model
    if model == "auto":
        model = "analytic" if math.isinf(cfg.t1_us) else "fp"
    if model == "analytic":
        gen = fitting.make_analytic_model_gen(x0, len(slices), cfg.n_bins, cfg.bin_width)
    elif model == "fp":
        times = [k * ens.dt for k in slices]
        gen = fitting.make_fp_model_gen(
            x0, cfg.t1_us, times, cfg.n_bins, cfg.bin_width,
            n_cells=cfg.fp_cells, dt=(cfg.fp_dt_us or None),
        )
    else:
        raise UsageError(f"unknown model {cfg.model!r} (use analytic or fp)")
    results = fitting.fit_tau(observed, gen, cfg.tau_scan())
    return slices, observed, results, gen


def _report_slices(slices, results, ens):
    return [
        io.FitReportSlice(
            t_us=k * ens.dt,
            tau_best=r.tau_best,
            chi2_min=r.chi2_min,
            tau_err_dchi2_100=r.tau_error,
            tau_err_dchi2_1=r.tau_error_dchi2_1,
            n_bins=r.n_bins,
        )
        for k, r in zip(slices, results)
    ]


def cmd_fit(cfg: RunConfig) -> None:
    ens = io.read_ensemble(_require_input(cfg.input, "input"))
    slices, _, results, _ = _fit_ensemble(cfg, ens)
    _write_manifest(cfg)
    io.write_fit_report(
        os.path.join(cfg.out, "fit_report.txt"), _report_slices(slices, results, ens)
    )


def cmd_report(cfg: RunConfig) -> None:
    """Observed / best-fit / no-relaxation (T1 -> infinity) overlays."""
    ens = io.read_ensemble(_require_input(cfg.input, "input"))
    slices, observed, results, gen = _fit_ensemble(cfg, ens)
    x0 = ens.x0 if ens.x0 is not None else cfg.x0
    _write_manifest(cfg)
    io.write_fit_report(
        os.path.join(cfg.out, "fit_report.txt"), _report_slices(slices, results, ens)
    )
    fmt = io.fmt_float
    for i, (k, obs, res) in enumerate(zip(slices, observed, results)):
        best = gen(res.tau_best)[i]
        norelax = fitting.make_analytic_model_gen(x0, 1, cfg.n_bins, cfg.bin_width)(
            res.tau_best
        )[0]
        lines = [
            f"# t_us={fmt(k * ens.dt)}",
            f"# tau_best={fmt(res.tau_best)}",
            f"# chi2_min={fmt(res.chi2_min)}",
            f"# mass0={fmt(obs.mass0)}",
            f"# mass1={fmt(obs.mass1)}",
            "# columns=bin_center,observed,error,model_best,model_norelax",
        ]
        for c, d, e, mb, mn in zip(
            obs.bin_centers, obs.density, obs.errors, best.density, norelax.density
        ):
            lines.append(f"{fmt(c)},{fmt(d)},{fmt(e)},{fmt(mb)},{fmt(mn)}")
        io.atomic_write_text(
            os.path.join(cfg.out, f"report_{k:05d}.txt"), "\n".join(lines) + "\n"
        )


def cmd_calibrate(cfg: RunConfig) -> None:
    ground = io.read_records(_require_input(cfg.ground, "ground"))
    excited = io.read_records(_require_input(cfg.excited, "excited"))
    g_fit = bayesian.fit_gaussian_current(ground.currents.ravel())
    e_fit = bayesian.fit_gaussian_current(excited.currents[:, 0])
    times = (np.arange(excited.n_steps) + 0.5) * excited.dt
    t1 = bayesian.estimate_T1(times, excited.currents.mean(axis=0))
    kappa = (g_fit.center - e_fit.center) ** 2 / (4.0 * g_fit.sigma**2)
    _write_manifest(cfg)
    items = {
        "i0": repr(g_fit.center),
        "i0_err": repr(g_fit.center_err),
        "sigma": repr(g_fit.sigma),
        "sigma_err": repr(g_fit.sigma_err),
        "i1": repr(e_fit.center),
        "i1_err": repr(e_fit.center_err),
        "t1_us": repr(t1.T1),
        "t1_err_us": repr(t1.T1_err),
        "kappa": repr(kappa),
    }
    io.write_config(os.path.join(cfg.out, "calibration.txt"), items)


_COMMANDS = {
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "solve-fp": cmd_solve_fp,
    "reconstruct": cmd_reconstruct,
    "fit": cmd_fit,
    "calibrate": cmd_calibrate,
    "report": cmd_report,
}


def parse_args(argv: list[str]) -> RunConfig:
    mode = argv[0]
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}\n\n{USAGE}")
    items: dict[str, str] = {}
    config_path = None
    overrides: dict[str, str] = {}
    for tok in argv[1:]:
        if not tok.startswith("--") or "=" not in tok:
            raise UsageError(f"expected --key=value, got {tok!r}")
        key, value = tok[2:].split("=", 1)
        if key == "config":
            config_path = value
        else:
            overrides[key] = value
    if config_path is not None:
        if not os.path.exists(config_path):
            raise UsageError(f"config file does not exist: {config_path}")
        items.update(io.read_config(config_path))
    items.update(overrides)
    return config_from_items(items, mode=mode)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv or argv[0] in ("-h", "--help", "help"):
        print(USAGE)
        return 0
    try:
        cfg = parse_args(argv)
        _COMMANDS[cfg.mode](cfg)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (io.FormatError, bayesian.FitFailureError, FPSolverError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # domain validation from the library layer: a usage problem
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
