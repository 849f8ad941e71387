"""Command-line interface tests: runs, reports, exit codes."""

import json

import numpy as np
import pytest

from din.cli import main
from din.images import ImageBuffer, write_ppm


@pytest.fixture
def tiny_image(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "img.ppm"
    write_ppm(ImageBuffer(rng.random((32, 32, 3)).astype(np.float32)), path)
    return path


def run_cli(*argv):
    return main([str(a) for a in argv])


def train_tiny(tiny_image, out_dir, *extra):
    return run_cli("train-image", "--input", tiny_image,
                   "--compression", "4", "--rho", "4",
                   "--epochs", "2", "--batch-size", "1024",
                   "--lr", "0.003", "--seed", "3",
                   "--out", out_dir, *extra)


class TestTrainImageRun:
    def test_emits_model_and_report(self, tiny_image, tmp_path, capsys):
        out = tmp_path / "run"
        assert train_tiny(tiny_image, out) == 0
        assert (out / "model.din").exists()
        lines = (out / "report.jsonl").read_text().splitlines()
        record = json.loads(lines[-1])
        assert record["task"] == "image"
        assert record["layout"]["n_primary"] % 8 == 0
        assert "psnr_db" in record["metrics"]
        assert record["seed"] == 3
        assert len(record["model_checksum"]) == 64
        assert record["wall_seconds"] >= 0
        stdout_record = json.loads(capsys.readouterr().out.strip())
        assert stdout_record["model_checksum"] == record["model_checksum"]

    def test_seeded_rerun_is_bit_reproducible(self, tiny_image, tmp_path,
                                              capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert train_tiny(tiny_image, a) == 0
        assert train_tiny(tiny_image, b) == 0
        capsys.readouterr()
        ra = json.loads((a / "report.jsonl").read_text())
        rb = json.loads((b / "report.jsonl").read_text())
        assert ra["model_checksum"] == rb["model_checksum"]
        assert ra["metrics"] == rb["metrics"]

    def test_eval_reproduces_training_psnr(self, tiny_image, tmp_path,
                                           capsys):
        out = tmp_path / "run"
        assert train_tiny(tiny_image, out) == 0
        trained = json.loads(
            (out / "report.jsonl").read_text())["metrics"]["psnr_db"]
        capsys.readouterr()
        assert run_cli("eval-image", "--model", out / "model.din",
                       "--reference", tiny_image) == 0
        evaluated = json.loads(
            capsys.readouterr().out.strip())["metrics"]["psnr_db"]
        assert abs(evaluated - trained) < 1e-9

    def test_quantized_run(self, tiny_image, tmp_path, capsys):
        out = tmp_path / "runq"
        assert train_tiny(tiny_image, out, "--quantize", "u8") == 0
        record = json.loads(capsys.readouterr().out.strip())
        assert record["metrics"]["quantized"] is True
        assert run_cli("info", out / "model.din") == 0
        info = json.loads(capsys.readouterr().out)
        assert all(a["quantized"] for a in info["arrays"])


class TestInfo:
    def test_header_fields(self, tiny_image, tmp_path, capsys):
        out = tmp_path / "run"
        assert train_tiny(tiny_image, out) == 0
        capsys.readouterr()
        assert run_cli("info", out / "model.din") == 0
        info = json.loads(capsys.readouterr().out)
        assert info["magic"] == "DIN1"
        assert info["version"] == 1
        assert len(info["arrays"]) == 2
        assert info["arrays"][0]["nonlinearity"] == "triangle"
        assert info["wiring"] == [[0, 0], [0, 1], [0, 2], [0, 3]]


class TestConfigHandling:
    def test_config_file_with_flag_override(self, tiny_image, tmp_path,
                                            capsys):
        cfg = {"compression": 4.0, "rho": 4.0, "epochs": 2,
               "batch_size": 1024, "lr": 0.003, "seed": 3,
               "input": str(tiny_image)}
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "runc"
        assert run_cli("train-image", "--config", cfg_path,
                       "--out", out) == 0
        record = json.loads(capsys.readouterr().out.strip())
        assert record["seed"] == 3

    def test_unknown_key_rejected(self, tiny_image, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"compresion": 4.0}))
        code = run_cli("train-image", "--config", cfg_path,
                       "--input", tiny_image, "--out", tmp_path / "x")
        assert code == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert "compresion" in err["error"]

    def test_bad_json_exit_2(self, tiny_image, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text("{not json")
        assert run_cli("train-image", "--config", cfg_path,
                       "--input", tiny_image, "--out", tmp_path / "x") == 2

    def test_missing_input_exit_2(self, tmp_path, capsys):
        assert run_cli("train-image", "--out", tmp_path / "x") == 2


class TestExitCodes:
    def test_infeasible_layout_exit_3(self, tiny_image, tmp_path, capsys):
        code = run_cli("train-image", "--input", tiny_image,
                       "--compression", "4", "--rho", "500",
                       "--out", tmp_path / "x")
        assert code == 3
        err = json.loads(capsys.readouterr().err.strip())
        assert err["code"] == 3

    def test_missing_image_exit_4(self, tmp_path, capsys):
        code = run_cli("train-image", "--input", tmp_path / "nope.ppm",
                       "--out", tmp_path / "x")
        assert code == 4

    def test_corrupt_model_exit_4(self, tmp_path, capsys):
        bad = tmp_path / "bad.din"
        bad.write_bytes(b"JUNKJUNKJUNK")
        assert run_cli("info", bad) == 4


class TestExportGrid:
    def test_sdf_round_trip(self, tmp_path, capsys):
        out = tmp_path / "sdf"
        code = run_cli("train-sdf", "--shape", "sphere",
                       "--budget-bytes", str(3 * 16 ** 3 + 8 ** 3),
                       "--rho", "2", "--near-count", "20000",
                       "--epochs", "1", "--batch-size", "8192",
                       "--out", out)
        assert code == 0
        record = json.loads(capsys.readouterr().out.strip())
        assert "iou" in record["metrics"]
        assert (out / "sdf_eval.csv").exists()
        grid_path = tmp_path / "grid.bin"
        assert run_cli("export-grid", "--model", out / "model.din",
                       "--resolution", "8", "--out", grid_path) == 0
        data = grid_path.read_bytes()
        assert np.frombuffer(data[:12], dtype="<u4").tolist() == [8, 8, 8]
        assert len(data) == 12 + 8 ** 3
