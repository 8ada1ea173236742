import numpy as np
import pytest
import yaml

import run
from mer_lab.tools import trainer
from mer_lab.utils import feature_io
from mer_lab.utils.linalg import SeededRng, gaussian_matrix
from mer_lab.utils.validators import NumericError

TINY_TRAIN = "epochs: 2\nbatch_size: 16\nhidden_widths: [8]\nembedding_dim: 4\nseed: 1\n"
TINY_SYNTH = "num_classes: 3\ninput_dims: [6, 5]\nsamples_per_domain: 90\nlatent_dim: 4\nseed: 3\n"


@pytest.fixture
def train_config(tmp_path):
    path = tmp_path / "train.yml"
    path.write_text(TINY_TRAIN)
    return str(path)


@pytest.fixture
def trained_run(tmp_path, bundle_dir, train_config):
    out = tmp_path / "run"
    assert run.main(["train", "--data", str(bundle_dir), "--config", train_config, "--out", str(out)]) == 0
    return out


def stdout_yaml(capsys):
    return yaml.safe_load(capsys.readouterr().out)


def stdout_csv(capsys):
    lines = capsys.readouterr().out.splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


class TestUsage:
    def test_unknown_command(self):
        assert run.main(["frobnicate"]) == 1

    def test_missing_required_flag(self):
        assert run.main(["losses"]) == 1

    def test_error_report_on_stderr(self, tmp_path, capsys):
        assert run.main(["losses", "--input", str(tmp_path / "missing.feat")]) == 1
        assert "error_message" in capsys.readouterr().err


class TestGradCheck:
    def test_passes(self, capsys):
        assert run.main(["grad-check"]) == 0
        assert stdout_yaml(capsys)["passed"] is True

    def test_huge_step_fails(self):
        assert run.main(["grad-check", "--seeds", "2", "--step", "10"]) != 0

    def test_no_seeds(self):
        assert run.main(["grad-check", "--seeds", "0"]) == 1


class TestFeatureCommands:
    def test_losses_on_uncorrelated_columns(self, tmp_path, capsys, orthogonal_signs):
        path = feature_io.write_features(tmp_path / "z.feat", 1e4 * orthogonal_signs)
        assert run.main(["losses", "--input", str(path)]) == 0
        report = stdout_yaml(capsys)
        assert report["marginal_loss"] == 0.0
        assert report["spectral_loss"] == pytest.approx(-np.log(1.0001), abs=1e-9)

    def test_losses_written_to_file(self, tmp_path, orthogonal_signs):
        path = feature_io.write_features(tmp_path / "z.feat", orthogonal_signs)
        out = tmp_path / "report" / "losses.yml"
        assert run.main(["losses", "--input", str(path), "--out", str(out)]) == 0
        assert set(feature_io.read_yaml(out)) >= {"marginal_loss", "spectral_loss", "combined"}

    def test_corrupt_magic(self, tmp_path):
        path = tmp_path / "bad.feat"
        path.write_bytes(b"NOTMAGIC" + bytes(16))
        assert run.main(["losses", "--input", str(path)]) == 1

    def test_decompose(self, tmp_path, capsys):
        path = feature_io.write_features(tmp_path / "z.feat", gaussian_matrix(SeededRng(0), 30, 4))
        assert run.main(["decompose", "--input", str(path)]) == 0
        report = stdout_yaml(capsys)
        assert report["ld_entropy"] == pytest.approx(report["marginal_term"] + report["spectral_term"], abs=1e-8)

    def test_decompose_too_few_rows(self, tmp_path):
        path = feature_io.write_features(tmp_path / "z.feat", gaussian_matrix(SeededRng(0), 3, 4))
        assert run.main(["decompose", "--input", str(path)]) == 2

    def test_spectrum(self, tmp_path, capsys):
        path = feature_io.write_features(tmp_path / "z.feat", np.diag([4.0, 2.0]))
        assert run.main(["spectrum", "--input", str(path)]) == 0
        header, rows = stdout_csv(capsys)
        assert header == ["index", "log_normalized_sv"]
        assert float(rows[0][1]) == 0.0
        assert float(rows[1][1]) == pytest.approx(-np.log(2.0), abs=1e-12)

    def test_spectrum_of_zero_matrix(self, tmp_path):
        path = feature_io.write_features(tmp_path / "z.feat", np.zeros((3, 2)))
        assert run.main(["spectrum", "--input", str(path)]) == 2


class TestDiagnose:
    @pytest.fixture
    def features(self, tmp_path):
        z = gaussian_matrix(SeededRng(1), 30, 4)
        labels = np.arange(30) % 3
        return (
            str(feature_io.write_features(tmp_path / "a.feat", z)),
            str(feature_io.write_labels(tmp_path / "a.txt", labels)),
        )

    def test_self_alignment(self, features, capsys):
        a, _ = features
        assert run.main(["diagnose", "--a", a, "--b", a, "--metrics", "rankme,cka-linear,procrustes"]) == 0
        report = stdout_yaml(capsys)
        assert report["cka-linear"] == pytest.approx(1.0, abs=1e-12)
        assert report["procrustes"] == pytest.approx(1.0, abs=1e-8)
        assert report["rankme"]["a"] == report["rankme"]["b"]

    def test_class_conditional(self, features, capsys):
        a, labels = features
        args = ["diagnose", "--a", a, "--b", a, "--labels-a", labels, "--labels-b", labels,
                "--metrics", "cka-linear", "--class-conditional"]
        assert run.main(args) == 0
        assert stdout_yaml(capsys)["cka-linear"]["mean"] == pytest.approx(1.0, abs=1e-10)

    def test_labels_imply_class_conditional(self, features, capsys):
        a, labels = features
        assert run.main(["diagnose", "--a", a, "--b", a, "--labels-a", labels, "--labels-b", labels, "--metrics", "procrustes"]) == 0
        assert set(stdout_yaml(capsys)["procrustes"]["per_class"]) == {0, 1, 2}

    def test_class_conditional_needs_labels(self, features):
        a, _ = features
        assert run.main(["diagnose", "--a", a, "--b", a, "--metrics", "cka-linear", "--class-conditional"]) == 1

    def test_unknown_metric(self, features):
        a, _ = features
        assert run.main(["diagnose", "--a", a, "--metrics", "cosine"]) == 1


class TestSynth:
    def test_writes_bundle_deterministically(self, tmp_path):
        config = tmp_path / "synth.yml"
        config.write_text(TINY_SYNTH)
        first, second = tmp_path / "one", tmp_path / "two"
        assert run.main(["synth", "--config", str(config), "--out", str(first)]) == 0
        assert run.main(["synth", "--config", str(config), "--out", str(second)]) == 0
        for name in ("source_0", "source_1", "target"):
            assert (first / name / "video.feat").read_bytes() == (second / name / "video.feat").read_bytes()
        assert (first / "summary.yml").is_file()

    def test_unknown_config_key(self, tmp_path):
        config = tmp_path / "synth.yml"
        config.write_text("num_clases: 3\n")
        assert run.main(["synth", "--config", str(config), "--out", str(tmp_path / "out")]) == 1

    def test_needs_out(self):
        assert run.main(["synth"]) == 1


class TestTrain:
    def test_run_record(self, trained_run):
        for name in ("config.yml", "metrics.csv", "diagnostics.yml", "manifest.yml"):
            assert (trained_run / name).is_file()
        assert (trained_run / "features" / "target" / "audio.feat").is_file()
        header, rows = feature_io.read_csv(trained_run / "metrics.csv")
        assert header == ["epoch", "total", "ce", "mer_marg", "mer_spec", "src_val_acc", "tgt_acc"]
        assert len(rows) == 2
        assert all(float(row[3]) == 0.0 and float(row[4]) == 0.0 for row in rows)

    def test_mer_flag(self, tmp_path, bundle_dir, train_config):
        out = tmp_path / "mer"
        assert run.main(["train", "--data", str(bundle_dir), "--config", train_config, "--mer", "--out", str(out)]) == 0
        _, rows = feature_io.read_csv(out / "metrics.csv")
        assert all(float(row[3]) + float(row[4]) != 0.0 for row in rows)
        assert feature_io.read_yaml(out / "config.yml")["mer"]["enabled"] is True

    def test_rerun_is_identical(self, tmp_path, bundle_dir, train_config, trained_run):
        again = tmp_path / "again"
        assert run.main(["train", "--data", str(bundle_dir), "--config", train_config, "--out", str(again)]) == 0
        for name in ("metrics.csv", "diagnostics.yml", "config.yml"):
            assert (again / name).read_bytes() == (trained_run / name).read_bytes()
        for path in (trained_run / "checkpoint").iterdir():
            assert (again / "checkpoint" / path.name).read_bytes() == path.read_bytes()

    def test_config_snapshot_replays(self, tmp_path, bundle_dir, trained_run):
        replay = tmp_path / "replay"
        snapshot = str(trained_run / "config.yml")
        assert run.main(["train", "--data", str(bundle_dir), "--config", snapshot, "--out", str(replay)]) == 0
        assert (replay / "metrics.csv").read_bytes() == (trained_run / "metrics.csv").read_bytes()

    def test_missing_data(self, tmp_path, train_config):
        args = ["train", "--data", str(tmp_path / "none"), "--config", train_config, "--out", str(tmp_path / "r")]
        assert run.main(args) == 1
        assert not (tmp_path / "r").exists()

    def test_failed_step_is_recorded(self, tmp_path, bundle_dir, train_config, monkeypatch):
        def diverge(dataset, cfg):
            raise NumericError("loss is not finite at epoch 0")

        monkeypatch.setattr(trainer, "train_fusion", diverge)
        out = tmp_path / "failed"
        assert run.main(["train", "--data", str(bundle_dir), "--config", train_config, "--out", str(out)]) == 2
        manifest = feature_io.read_yaml(out / "manifest.yml")
        assert manifest["status"] == "failed"
        assert manifest["error"]["failed_step"] == "Training fusion model"
        assert manifest["error"]["error_type"] == "numeric_error"
        assert [s["status"] for s in manifest["steps"]] == ["success", "error"]
        assert run.main(["robustness", "--run", str(out)]) == 1

    def test_completed_run_manifest(self, trained_run):
        assert feature_io.read_yaml(trained_run / "manifest.yml")["status"] == "complete"

    def test_robustness(self, trained_run, capsys):
        assert run.main(["robustness", "--run", str(trained_run)]) == 0
        header, rows = stdout_csv(capsys)
        assert header == ["condition", "accuracy", "drop"]
        assert len(rows) == 7
        assert rows[0][0] == "clean" and float(rows[0][2]) == 0.0
        assert [row[0] for row in rows[-2:]] == ["drop:video", "drop:audio"]

    def test_robustness_custom_grid(self, trained_run, capsys):
        assert run.main(["robustness", "--run", str(trained_run), "--corruptions", "noise:video:0"]) == 0
        _, rows = stdout_csv(capsys)
        assert rows[1][1] == rows[0][1]

    def test_robustness_bad_corruption(self, trained_run):
        assert run.main(["robustness", "--run", str(trained_run), "--corruptions", "blur:video"]) == 1


class TestSweepAndCompare:
    def test_zero_lambda_matches_baseline(self, bundle_dir, train_config, capsys):
        common = ["--data", str(bundle_dir), "--config", train_config]
        assert run.main(["sweep", *common, "--param", "lambda", "--values", "0,1"]) == 0
        header, sweep_rows = stdout_csv(capsys)
        assert header == ["lambda", "src_val_acc", "tgt_acc"]
        assert len(sweep_rows) == 2
        assert run.main(["compare", *common, "--methods", "none"]) == 0
        _, compare_rows = stdout_csv(capsys)
        assert sweep_rows[0][1:] == compare_rows[0][1:]

    def test_empty_values(self, bundle_dir, train_config):
        args = ["sweep", "--data", str(bundle_dir), "--config", train_config, "--param", "lambda", "--values", ""]
        assert run.main(args) == 1

    def test_parallel_sweep_matches_serial(self, bundle_dir, train_config, capsys):
        common = ["sweep", "--data", str(bundle_dir), "--config", train_config, "--param", "alpha_spec", "--values", "0,1"]
        assert run.main(common) == 0
        serial = capsys.readouterr().out
        assert run.main([*common, "--workers", "2"]) == 0
        assert capsys.readouterr().out == serial

    def test_compare_rows(self, bundle_dir, train_config, capsys):
        assert run.main(["compare", "--data", str(bundle_dir), "--config", train_config]) == 0
        _, rows = stdout_csv(capsys)
        assert [row[0] for row in rows] == [
            "none", "dropout", "feature_noise", "weight_decay", "label_smoothing",
            "mer_marginal_only", "mer_spectral_only", "mer",
        ]

    def test_seeds_average_single_runs(self, bundle_dir, train_config, capsys):
        common = ["compare", "--data", str(bundle_dir), "--config", train_config, "--methods", "none"]
        singles = []
        for seed in ("1", "2"):
            assert run.main([*common, "--seed", seed]) == 0
            singles.append([float(v) for v in stdout_csv(capsys)[1][0][1:]])
        assert run.main([*common, "--seeds", "2"]) == 0
        _, rows = stdout_csv(capsys)
        assert len(rows) == 1
        expected = np.mean(singles, axis=0)
        assert [float(v) for v in rows[0][1:]] == pytest.approx(expected.tolist(), abs=1e-12)

    def test_sweep_seeds_must_be_positive(self, bundle_dir, train_config):
        args = ["sweep", "--data", str(bundle_dir), "--config", train_config, "--param", "lambda", "--values", "1"]
        assert run.main([*args, "--seeds", "0"]) == 1

    def test_compare_unknown_method(self, bundle_dir, train_config):
        assert run.main(["compare", "--data", str(bundle_dir), "--config", train_config, "--methods", "mixup"]) == 1


class TestBench:
    def test_rows(self, capsys):
        assert run.main(["bench", "--n", "8", "--d-list", "4,8"]) == 0
        header, rows = stdout_csv(capsys)
        assert header[0] == "d" and header[-1] == "spectral_scaling"
        assert [row[0] for row in rows] == ["4", "8"]
        assert rows[0][-1] == "" and float(rows[1][-1]) > 0

    def test_too_few_reps(self):
        assert run.main(["bench", "--reps", "3"]) == 1
