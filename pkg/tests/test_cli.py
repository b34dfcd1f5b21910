import json

import pytest

from conftest import TINY_MODEL
from t2vlab.checkpoint import load_checkpoint
from t2vlab.cli import main
from t2vlab.report import save_frames
from t2vlab.sampler import SamplerConfig, sample_video


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """One tiny pretrain+train run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli_run")
    doc = {
        "model": {**TINY_MODEL, "channels": list(TINY_MODEL["channels"])},
        "schedule": {"T": 50},
        "train": {
            "batch_size": 2,
            "pretrain_steps": 4,
            "steps": 4,
            "checkpoint_interval": 2,
            "out_dir": str(root / "runs"),
        },
        "sampler": {"steps": 3, "mg_alpha": 5.0},
        "data": {"num_clips": 3, "speed": 1},
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(doc))
    assert main(["pretrain", "--config", str(config_path)]) == 0
    assert main(["train", "--config", str(config_path)]) == 0
    return root, config_path


def checkpoint_of(run_dir):
    return str(run_dir[0] / "runs" / "train" / "checkpoints" / "final")


class TestTrainingCommands:
    def test_artifacts_exist(self, run_dir):
        root, _ = run_dir
        assert (root / "runs" / "pretrain" / "metrics.jsonl").is_file()
        assert (root / "runs" / "pretrain" / "checkpoints" / "final" / "metadata.json").is_file()
        assert (root / "runs" / "train" / "metrics.jsonl").is_file()
        assert (root / "runs" / "train" / "checkpoints" / "step_000002").is_dir()
        assert (root / "runs" / "train" / "checkpoints" / "final").is_dir()

    def test_metrics_log_schema(self, run_dir):
        root, _ = run_dir
        lines = (root / "runs" / "train" / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 4
        for line in lines:
            record = json.loads(line)
            assert {"step", "simple", "reg", "trs", "dc", "total"} <= set(record)

    def test_train_without_pretrain_fails(self, tmp_path):
        doc = {
            "model": {**TINY_MODEL, "channels": list(TINY_MODEL["channels"])},
            "schedule": {"T": 50},
            "train": {"out_dir": str(tmp_path / "runs")},
        }
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(doc))
        assert main(["train", "--config", str(cfg)]) == 1


class TestSampleCommand:
    def test_writes_frames_gif_trace(self, run_dir, tmp_path):
        out = tmp_path / "clip"
        rc = main(
            ["sample", "--checkpoint", checkpoint_of(run_dir), "--prompt",
             "red square moving right", "--steps", "3", "--seed", "5", "--out", str(out)]
        )
        assert rc == 0
        frames = sorted(out.glob("frame_*.png"))
        assert len(frames) == TINY_MODEL["F"]
        assert frames[0].name == "frame_0001.png"
        assert (out / "clip.gif").is_file()
        trace = [json.loads(l) for l in (out / "trace.jsonl").read_text().splitlines()]
        assert len(trace) == 3
        assert {"t", "cfg_scale", "mean_abs_g"} <= set(trace[0])

    def test_bit_deterministic(self, run_dir, tmp_path):
        args = ["sample", "--checkpoint", checkpoint_of(run_dir), "--prompt",
                "blue circle moving up", "--steps", "3", "--seed", "9"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        for f1 in sorted(out1.glob("*")):
            f2 = out2 / f1.name
            assert f1.read_bytes() == f2.read_bytes()

    def test_alpha_zero_matches_mg_disabled_sampler(self, run_dir, tmp_path):
        out = tmp_path / "cli_alpha0"
        assert main(
            ["sample", "--checkpoint", checkpoint_of(run_dir), "--prompt",
             "red square moving right", "--alpha", "0", "--steps", "3", "--seed", "2",
             "--out", str(out)]
        ) == 0
        loaded = load_checkpoint(checkpoint_of(run_dir))
        video = sample_video(
            loaded.model,
            "red square moving right",
            SamplerConfig(steps=3, mg_alpha=0.0, seed=2),
            loaded.schedule,
        )
        lib_out = tmp_path / "lib_alpha0"
        save_frames(lib_out, video[0])
        for f1 in sorted(out.glob("frame_*.png")):
            assert f1.read_bytes() == (lib_out / f1.name).read_bytes()

    def test_bad_checkpoint_is_runtime_error(self, tmp_path):
        rc = main(
            ["sample", "--checkpoint", str(tmp_path / "missing"), "--prompt", "x",
             "--out", str(tmp_path / "o")]
        )
        assert rc == 1


class TestEvalCommand:
    def test_report_csv_figures(self, run_dir, tmp_path):
        root, config_path = run_dir
        out = tmp_path / "report.json"
        rc = main(
            ["eval", "--checkpoint", checkpoint_of(run_dir), "--config", str(config_path),
             "--out", str(out)]
        )
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["schema_version"] == 1
        assert len(payload["per_video"]) == 84  # full caption grid
        assert 0.0 <= payload["smoothness"]
        assert -1.0 <= payload["h_consistency"] <= 1.0
        csv_lines = (tmp_path / "report.csv").read_text().splitlines()
        assert csv_lines[0] == "prompt,seed,smoothness,h_consistency"
        assert len(csv_lines) == 85
        assert (tmp_path / "report_smoothness.png").is_file()
        assert (tmp_path / "report_h_consistency.png").is_file()


class TestAnalyzeNoiseCommand:
    def test_iid_report(self, tmp_path):
        out = tmp_path / "noise.json"
        rc = main(["analyze-noise", "--kind", "iid", "--trials", "60", "--out", str(out)])
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["kind"] == "iid"
        assert payload["n_trials"] == 60
        assert 0.85 <= payload["pass_rate"] <= 1.0
        trials = (tmp_path / "noise.csv").read_text().splitlines()
        assert trials[0] == "trial,statistic,p_value"
        assert len(trials) == 61
        assert (tmp_path / "noise_hist.png").is_file()

    def test_correlated_with_weight(self, tmp_path):
        out = tmp_path / "corr.json"
        rc = main(
            ["analyze-noise", "--kind", "correlated", "--shared-weight", "0.9",
             "--trials", "40", "--out", str(out)]
        )
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["shared_weight"] == 0.9
        assert payload["pass_rate"] < 0.9


class TestInspectAttnCommand:
    def test_heatmaps_and_stats(self, run_dir, tmp_path):
        out = tmp_path / "attn"
        rc = main(
            ["inspect-attn", "--checkpoint", checkpoint_of(run_dir), "--prompt",
             "red square moving right", "--out", str(out)]
        )
        assert rc == 0
        grids = sorted(out.glob("framewise_token_*.png"))
        assert len(grids) == TINY_MODEL["K"]
        text_grids = sorted(out.glob("text_token_*.png"))
        assert len(text_grids) == 4
        stats = json.loads((out / "stats.json").read_text())
        assert {"framewise_variance", "text_variance", "schema_version"} <= set(stats)


class TestArtifactHygiene:
    def test_no_temp_files_left_behind(self, run_dir, tmp_path):
        out = tmp_path / "clean"
        assert main(
            ["sample", "--checkpoint", checkpoint_of(run_dir), "--prompt",
             "red square moving right", "--steps", "2", "--out", str(out)]
        ) == 0
        leftovers = [p for p in out.rglob("*") if p.suffix == ".tmp"]
        assert leftovers == []
        root, _ = run_dir
        ckpt_tmp = [p for p in (root / "runs").rglob("*.tmp")]
        assert ckpt_tmp == []

    def test_log_env_variable_accepted(self, run_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("HARIVO_LOG", "debug")
        out = tmp_path / "noise.json"
        assert main(["analyze-noise", "--kind", "iid", "--trials", "5", "--out", str(out)]) == 0
        monkeypatch.setenv("HARIVO_LOG", "warn")
        assert main(["analyze-noise", "--kind", "iid", "--trials", "5", "--out", str(out)]) == 0


class TestUsageErrors:
    def test_unknown_subcommand_exit_2(self, capsys):
        assert main(["transcode"]) == 2
        capsys.readouterr()

    def test_missing_required_flag_exit_2(self, capsys):
        assert main(["sample", "--prompt", "x"]) == 2
        capsys.readouterr()

    def test_no_arguments_exit_2(self, capsys):
        assert main([]) == 2
        capsys.readouterr()

    def test_version_flag(self, capsys):
        assert main(["--version"]) == 0
        assert "t2vlab" in capsys.readouterr().out
