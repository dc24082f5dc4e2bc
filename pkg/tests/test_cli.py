import math
import subprocess
import sys

import numpy as np
import pytest

from qtraj import io
from qtraj.cli import config_from_items, main, parse_args


def run(argv):
    return main(argv)


def sigma_for_kappa(kappa, di=2.0):
    return di / (2.0 * math.sqrt(kappa))


class TestParsing:
    def test_unknown_mode(self, capsys):
        assert run(["frobnicate"]) == 2
        assert "unknown mode" in capsys.readouterr().err

    def test_help(self, capsys):
        assert run(["--help"]) == 0
        assert "usage" in capsys.readouterr().out

    def test_unknown_key(self, capsys):
        assert run(["simulate", "--bogus=1"]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_bad_value(self, capsys):
        assert run(["simulate", "--n_traj=lots"]) == 2

    def test_parameter_out_of_range(self, tmp_path, capsys):
        rc = run(
            [
                "simulate", f"--out={tmp_path}", "--seed=1", "--g_per_us=0.03",
                "--x0=1.5", "--n_traj=10",
            ]
        )
        assert rc == 2
        assert "usage error" in capsys.readouterr().err

    def test_seed_required(self, tmp_path, capsys):
        assert run(["simulate", f"--out={tmp_path}", "--g_per_us=0.03"]) == 2
        assert "--seed is mandatory" in capsys.readouterr().err

    def test_config_mode_conflict(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("mode = simulate\n")
        with pytest.raises(Exception):
            parse_args(["generate", f"--config={cfg}"])

    def test_env_thread_override(self, monkeypatch):
        cfg = config_from_items({"seed": "1"}, mode="simulate")
        monkeypatch.setenv("QTRAJ_THREADS", "3")
        assert cfg.workers() == 3
        cfg.n_workers = 2
        assert cfg.workers() == 2  # explicit config wins
        monkeypatch.delenv("QTRAJ_THREADS")
        cfg.n_workers = 0
        assert cfg.workers() == 1


class TestSimulate:
    def test_single_frozen_trajectory(self, tmp_path):
        out = tmp_path / "run"
        rc = run(
            [
                "simulate", f"--out={out}", "--seed=7", "--n_traj=1",
                "--g_per_us=0.0", "--n_steps=12", "--x0=0.4",
            ]
        )
        assert rc == 0
        ens = io.read_ensemble(str(out / "ensemble.qens"))
        assert ens.n_traj == 1 and ens.n_steps == 12
        assert np.all(ens.values == ens.values[0, 0])
        snap = io.read_histogram(str(out / "hist_00012.txt"))
        assert math.isclose(snap.total_mass, 1.0, abs_tol=1e-12)

    def test_manifest_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = [
            "simulate", "--seed=42", "--n_traj=500", "--g_per_us=0.03",
            "--n_steps=10", "--slices=5,10",
        ]
        assert run(args + [f"--out={a}"]) == 0
        assert run(["simulate", f"--config={a / 'manifest.txt'}", f"--out={b}"]) == 0
        for name in ("ensemble.qens", "hist_00005.txt", "hist_00010.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestPipeline:
    def test_generate_reconstruct_fit_round_trip(self, tmp_path):
        kappa = 0.025
        n_steps = 20  # n_steps * kappa = 0.5
        gen_dir = tmp_path / "gen"
        rec_dir = tmp_path / "rec"
        fit_dir = tmp_path / "fit"
        sigma = sigma_for_kappa(kappa)
        rc = run(
            [
                "generate", f"--out={gen_dir}", "--seed=2024", "--n_traj=50000",
                f"--n_steps={n_steps}", "--x0=0.305", "--i0=1.0", "--i1=-1.0",
                f"--sigma={sigma!r}",
            ]
        )
        assert rc == 0
        rc = run(
            ["reconstruct", f"--out={rec_dir}", f"--input={gen_dir / 'records.qrec'}"]
        )
        assert rc == 0
        # reconstruction reproduces the latent trajectories bitwise
        latent = io.read_ensemble(str(gen_dir / "latent.qens"))
        rebuilt = io.read_ensemble(str(rec_dir / "reconstructed.qens"))
        assert np.array_equal(latent.values, rebuilt.values)
        rc = run(
            [
                "fit", f"--out={fit_dir}", f"--input={rec_dir / 'reconstructed.qens'}",
                "--tau_min=0.3", "--tau_max=0.7", "--tau_step=0.005",
            ]
        )
        assert rc == 0
        report = io.read_fit_report(str(fit_dir / "fit_report.txt"))
        assert len(report) == 1
        r = report[0]
        assert abs(r.tau_best - 0.5) < 0.03
        assert r.tau_err_dchi2_100 > r.tau_err_dchi2_1 > 0
        assert r.t_us == n_steps * 0.5

    def test_solve_fp_outputs(self, tmp_path):
        out = tmp_path / "fp"
        rc = run(
            [
                "solve-fp", f"--out={out}", "--g_per_us=0.03", "--x0=0.305",
                "--t_grid_us=10.0,20.0", "--fp_cells=2048",
            ]
        )
        assert rc == 0
        for i in (0, 1):
            snap = io.read_histogram(str(out / f"fp_{i:05d}.txt"))
            assert math.isclose(snap.total_mass, 1.0, abs_tol=1e-9)

    def test_report_overlays(self, tmp_path):
        sim_dir = tmp_path / "sim"
        rep_dir = tmp_path / "rep"
        rc = run(
            [
                "simulate", f"--out={sim_dir}", "--seed=5", "--n_traj=2000",
                "--g_per_us=0.03", "--t1_us=45.0", "--n_steps=20", "--x0=0.305",
            ]
        )
        assert rc == 0
        rc = run(
            [
                "report", f"--out={rep_dir}", f"--input={sim_dir / 'ensemble.qens'}",
                "--t1_us=45.0", "--slices=10,20", "--tau_min=0.0", "--tau_max=1.0",
                "--tau_step=0.05", "--fp_cells=1024", "--fp_dt_us=2.5",
            ]
        )
        assert rc == 0
        report = io.read_fit_report(str(rep_dir / "fit_report.txt"))
        assert len(report) == 2
        for k in (10, 20):
            lines = (rep_dir / f"report_{k:05d}.txt").read_text().splitlines()
            head = [ln for ln in lines if ln.startswith("#")]
            rows = [ln for ln in lines if not ln.startswith("#")]
            assert any("tau_best=" in h for h in head)
            assert len(rows) == 100
            # three aligned model columns per bin
            for ln in rows[:3]:
                assert len(ln.split(",")) == 5

    def test_calibrate(self, tmp_path):
        gdir, edir, cdir = tmp_path / "g", tmp_path / "e", tmp_path / "c"
        common = [
            "--n_traj=3000", "--n_steps=40", "--i0=128.44", "--i1=127.68",
            "--sigma=5.5", "--t1_us=45.0",
        ]
        assert run(["generate", f"--out={gdir}", "--seed=91", "--x0=1.0"] + common) == 0
        assert run(["generate", f"--out={edir}", "--seed=92", "--x0=0.0"] + common) == 0
        rc = run(
            [
                "calibrate", f"--out={cdir}",
                f"--ground={gdir / 'records.qrec'}", f"--excited={edir / 'records.qrec'}",
            ]
        )
        assert rc == 0
        cal = io.read_config(str(cdir / "calibration.txt"))
        # ground: 3000*40 pooled samples; excited I1: 3000 first-step samples
        assert abs(float(cal["i0"]) - 128.44) < 4 * 5.5 / math.sqrt(120_000)
        assert abs(float(cal["i1"]) - 127.68) < 4 * 5.5 / math.sqrt(3000) + 0.01
        assert abs(float(cal["t1_us"]) - 45.0) < 4 * float(cal["t1_err_us"])
        assert float(cal["kappa"]) > 0

    def test_malformed_input_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.qens"
        bad.write_bytes(b"garbage")
        assert run(["fit", f"--out={tmp_path}", f"--input={bad}"]) == 1
        err = capsys.readouterr().err
        assert "offset" in err or "line" in err

    def test_missing_input_exit_code(self, tmp_path, capsys):
        assert run(["reconstruct", f"--out={tmp_path}", "--input=/nope.qrec"]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "qtraj.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "usage" in proc.stdout
