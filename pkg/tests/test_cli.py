import numpy as np
import pytest

from pairstats.cli import main
from pairstats.loop_detector import parse_response
from pairstats.model import (
    EffectiveSource,
    parse_distribution,
    read_distribution,
)
from pairstats.pipeline import ExperimentConfig, format_config
from pairstats.reconstruction import read_histogram


def write_cfg(path, **overrides):
    base = dict(
        source=EffectiveSource(N=0.3, eta=1.0, eta_prime=1.0, M=1.0),
        pulses=100_000,
        seed=11,
        calibration_pulses=100_000,
        calibration_N=1e-3,
        n_max=8,
    )
    base.update(overrides)
    cfg = ExperimentConfig(**base)
    path.write_text(format_config(cfg))
    return cfg


class TestModelCommand:
    def test_writes_expected_distribution(self, tmp_path, capsys):
        out = tmp_path / "rho.txt"
        code = main(
            [
                "model",
                "--N", "1", "--eta", "1", "--eta-prime", "1",
                "--M", "1", "--n-max", "8", "--out", str(out),
            ]
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "tail_mass=" in printed and "config:" in printed
        dist = read_distribution(out)
        assert dist.probs[1, 1] == pytest.approx(0.25, abs=1e-14)

    def test_near_vacuum(self, tmp_path):
        out = tmp_path / "rho.txt"
        assert main(
            [
                "model",
                "--N", "1e-12", "--eta", "0.5", "--eta-prime", "0.5",
                "--M", "2", "--n-max", "4", "--out", str(out),
            ]
        ) == 0
        assert read_distribution(out).probs[0, 0] == pytest.approx(1.0, abs=1e-10)

    def test_invalid_eta_exits_3(self, tmp_path, capsys):
        code = main(
            [
                "model",
                "--N", "1", "--eta", "1.5", "--eta-prime", "1",
                "--M", "1", "--n-max", "4", "--out", str(tmp_path / "x.txt"),
            ]
        )
        assert code == 3
        assert "error: ValidationError" in capsys.readouterr().err

    def test_tail_bound_exits_4(self, tmp_path, capsys):
        code = main(
            [
                "model",
                "--N", "3", "--eta", "1", "--eta-prime", "1",
                "--M", "1", "--n-max", "3", "--tail-bound", "1e-9",
                "--out", str(tmp_path / "x.txt"),
            ]
        )
        assert code == 4
        assert "error: TruncationError" in capsys.readouterr().err


class TestMapCommand:
    def test_single_lossless_cell(self, tmp_path):
        out = tmp_path / "map.txt"
        assert main(
            [
                "map", "--which", "2", "--M", "1",
                "--eta-grid", "1.0", "--rate-grid", "0.01",
                "--out", str(out),
            ]
        ) == 0
        lines = out.read_text().splitlines()
        value = float(lines[3])
        roots = np.roots([0.01, 2 * 0.01 - 1.0, 0.01])
        N = min(r.real for r in roots if r.real > 0)
        assert value == pytest.approx(N / (N + 1.0), rel=1e-6)

    def test_monotone_grid(self, tmp_path):
        out = tmp_path / "map.txt"
        assert main(
            [
                "map", "--which", "2", "--M", "1",
                "--eta-grid", "lin:0.4:1.0:3", "--rate-grid", "log:1e-5:1e-3:3",
                "--out", str(out),
            ]
        ) == 0
        rows = [
            [float(v) for v in ln.split(",")]
            for ln in out.read_text().splitlines()[3:]
        ]
        eps = np.array(rows)
        assert np.all(np.diff(eps, axis=0) <= 1e-12)
        assert np.all(np.diff(eps, axis=1) >= -1e-12)

    def test_empty_grid_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(
                [
                    "map", "--which", "2", "--M", "1",
                    "--eta-grid", "", "--rate-grid", "1e-4",
                    "--out", str(tmp_path / "m.txt"),
                ]
            )
        assert exc.value.code == 2


class TestSimulateReconstructChain:
    def test_round_trip(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.txt"
        write_cfg(cfg_path)
        hist_path = tmp_path / "hist.txt"
        resp_dir = tmp_path / "resp"
        assert main(
            [
                "simulate", "--config", str(cfg_path), "--out", str(hist_path),
                "--responses-dir", str(resp_dir),
            ]
        ) == 0
        hist = read_histogram(hist_path)
        assert int(hist.f.sum()) == 100_000

        rho_path = tmp_path / "rho.txt"
        report_path = tmp_path / "report.txt"
        assert main(
            [
                "reconstruct",
                "--hist", str(hist_path),
                "--resp-a", str(resp_dir / "response_a.txt"),
                "--resp-b", str(resp_dir / "response_b.txt"),
                "--n-max", "8",
                "--tol", "1e-12",
                "--rho-out", str(rho_path),
                "--report-out", str(report_path),
            ]
        ) == 0
        rho = read_distribution(rho_path)
        assert rho.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert "iterations=" in report_path.read_text()

        # analyze accepts the rho the reconstructor wrote
        out = capsys.readouterr()
        assert main(["analyze", "--rho", str(rho_path)]) == 0
        printed = capsys.readouterr().out
        assert "M_hat=" in printed and "eta_hat=" in printed

    def test_dimension_error_exit_3(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.txt"
        write_cfg(cfg_path)
        hist_path = tmp_path / "hist.txt"
        resp_dir = tmp_path / "resp"
        main(
            [
                "simulate", "--config", str(cfg_path), "--out", str(hist_path),
                "--responses-dir", str(resp_dir), "--resp-n-max", "2",
            ]
        )
        code = main(
            [
                "reconstruct",
                "--hist", str(hist_path),
                "--resp-a", str(resp_dir / "response_a.txt"),
                "--resp-b", str(resp_dir / "response_b.txt"),
                "--n-max", "8",
                "--rho-out", str(tmp_path / "rho.txt"),
            ]
        )
        assert code == 3
        assert "error: ValidationError" in capsys.readouterr().err

    def test_unconverged_warns_but_exits_0(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.txt"
        write_cfg(cfg_path)
        hist_path = tmp_path / "hist.txt"
        resp_dir = tmp_path / "resp"
        main(
            [
                "simulate", "--config", str(cfg_path), "--out", str(hist_path),
                "--responses-dir", str(resp_dir),
            ]
        )
        code = main(
            [
                "reconstruct",
                "--hist", str(hist_path),
                "--resp-a", str(resp_dir / "response_a.txt"),
                "--resp-b", str(resp_dir / "response_b.txt"),
                "--n-max", "8",
                "--tol", "0",
                "--max-iter", "3",
                "--rho-out", str(tmp_path / "rho.txt"),
            ]
        )
        captured = capsys.readouterr()
        assert code == 0
        assert "warning: not converged" in captured.err
        assert "converged=False" in captured.out


class TestPipelineCommand:
    def test_full_run_and_determinism(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.txt"
        write_cfg(cfg_path, pulses=50_000, calibration_pulses=50_000)
        out1, out2 = tmp_path / "run1", tmp_path / "run2"
        assert main(["pipeline", "--config", str(cfg_path), "--out-dir", str(out1)]) == 0
        assert main(["pipeline", "--config", str(cfg_path), "--out-dir", str(out2)]) == 0
        printed = capsys.readouterr().out
        assert "M_hat=" in printed
        for name in ("histogram.txt", "rho.txt", "summary.txt", "characterization.txt"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_rho_file_feeds_analyze(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.txt"
        write_cfg(cfg_path, pulses=50_000, calibration_pulses=50_000)
        out = tmp_path / "run"
        main(["pipeline", "--config", str(cfg_path), "--out-dir", str(out)])
        capsys.readouterr()
        assert main(["analyze", "--rho", str(out / "rho.txt")]) == 0


class TestUsage:
    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["model", "--bogus", "1"])
        assert exc.value.code == 2

    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_bad_threads_exits_2(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(
                [
                    "reconstruct", "--hist", "h", "--resp-a", "a", "--resp-b", "b",
                    "--n-max", "3", "--rho-out", "r", "--threads", "0",
                ]
            )
        assert exc.value.code == 2

    def test_response_files_parse_back(self, tmp_path):
        cfg_path = tmp_path / "cfg.txt"
        write_cfg(cfg_path)
        resp_dir = tmp_path / "resp"
        main(
            [
                "simulate", "--config", str(cfg_path),
                "--out", str(tmp_path / "h.txt"), "--responses-dir", str(resp_dir),
            ]
        )
        resp = parse_response((resp_dir / "response_a.txt").read_text())
        assert resp.B == 8
