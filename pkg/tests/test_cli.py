"""Config grammar, environment overrides, and the five CLI commands."""

import json

import numpy as np
import pytest

from comma.cli import main
from comma.config import ENV_PREFIX, documented_keys, load_run_config
from comma.inference import read_heatmap_csv
from comma.masks import SelfAttentionVariant
from comma.training import LossMode

TINY_CONFIG = """
# model
model.d = 6
model.seed = 0

# generator: small enough for test runs
synth.vocab_size = 6
synth.n_samples = 12
synth.t = 1
synth.h = 2
synth.w = 2
synth.d_video_in = 4
synth.d_word_in = 3
synth.words_per_sample = 2
synth.distractor_count = 1
synth.temporal_jitter = 0.0
synth.input_t = 2
synth.input_h = 8
synth.input_w = 8
synth.train_fraction = 0.667
synth.seed = 5

train.learning_rate = 0.001
train.batch_size = 4
train.epochs = 2
train.loss_mode = sentence
train.seed = 0
"""

GRAD_CONFIG = """
model.d = 4
model.d_video_in = 5
model.d_word_in = 3
synth.d_video_in = 5
synth.d_word_in = 3
"""


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(TINY_CONFIG)
    return path


class TestRunConfig:
    def test_defaults_without_file(self):
        run = load_run_config(None)
        assert run.train.learning_rate == 1e-4
        assert run.train.warmup_epochs == 1
        assert run.model.sa_variant is SelfAttentionVariant.SPATIOTEMPORAL
        assert run.synth.n_samples == 640

    def test_file_values_applied(self, tiny_config):
        run = load_run_config(tiny_config)
        assert run.model.d == 6
        assert run.synth.vocab_size == 6
        assert run.train.batch_size == 4
        # model input dims inherit the generator's dims
        assert run.model.d_video_in == 4
        assert run.model.d_word_in == 3

    def test_unknown_key_named_in_error(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("synth.vocab = 6\n")
        with pytest.raises(ValueError, match="synth.vocab"):
            load_run_config(path)

    def test_env_sets_keys_the_file_leaves_alone(self, tiny_config):
        env = {ENV_PREFIX + "TRAIN_EPOCHS": "7"}
        run = load_run_config(tiny_config, environ=env)
        assert run.train.epochs == 2  # file wins over environment
        run = load_run_config(None, environ=env)
        assert run.train.epochs == 7  # environment wins over defaults

    def test_cli_overrides_file_and_env(self, tiny_config):
        env = {ENV_PREFIX + "TRAIN_BATCH_SIZE": "2"}
        run = load_run_config(tiny_config, overrides=["train.batch_size=3"], environ=env)
        assert run.train.batch_size == 3

    def test_bad_value_type(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("train.epochs = soon\n")
        with pytest.raises(ValueError, match="train.epochs"):
            load_run_config(path)

    def test_grad_clip_none(self):
        run = load_run_config(None, overrides=["train.grad_clip=none"])
        assert run.train.grad_clip is None
        run = load_run_config(None, overrides=["train.grad_clip=0.5"])
        assert run.train.grad_clip == 0.5

    def test_loss_mode_and_variant_parsing(self):
        run = load_run_config(
            None,
            overrides=["train.loss_mode=word", "model.sa_variant=temporal"],
        )
        assert run.train.loss_mode is LossMode.WORD
        assert run.model.sa_variant is SelfAttentionVariant.TEMPORAL

    def test_every_documented_key_parses(self, tmp_path):
        assert "model.d" in documented_keys()
        assert "paths.data_dir" in documented_keys()


class TestGenData:
    def test_writes_dataset(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "data"
        assert main(["gen-data", str(tiny_config), str(out)]) == 0
        assert (out / "manifest.json").exists()
        assert (out / "annotations.jsonl").exists()
        assert len(list((out / "samples").glob("*.cmma"))) == 2 * 12
        summary = json.loads(capsys.readouterr().out)
        assert summary["train_samples"] == 8
        assert summary["test_samples"] == 4
        assert 0.0 <= summary["chance_accuracy"]["accuracy"] <= 1.0

    def test_unknown_key_exits_nonzero(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("nonsense.key = 1\n")
        assert main(["gen-data", str(bad), str(tmp_path / "out")]) == 1
        assert "nonsense.key" in capsys.readouterr().err

    def test_rerun_byte_identical(self, tiny_config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["gen-data", str(tiny_config), str(a)]) == 0
        assert main(["gen-data", str(tiny_config), str(b)]) == 0
        for rel in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


@pytest.fixture()
def trained(tiny_config, tmp_path):
    data = tmp_path / "data"
    run = tmp_path / "run"
    assert main(["gen-data", str(tiny_config), str(data)]) == 0
    assert main(["train", str(tiny_config), str(data), str(run)]) == 0
    return tiny_config, data, run


class TestTrainCommand:
    def test_artifacts(self, trained):
        config, data, run = trained
        assert (run / "checkpoint.json").exists()
        lines = (run / "loss.csv").read_text().splitlines()
        assert lines[0] == "epoch,step,loss,lr"
        assert len(lines) == 1 + 2 * 2  # epochs * steps_per_epoch

    def test_epochs_zero_equals_initialization(self, tiny_config, tmp_path):
        from comma.model import CommaModel, load_checkpoint
        from comma.config import load_run_config

        data = tmp_path / "data"
        run = tmp_path / "run0"
        assert main(["gen-data", str(tiny_config), str(data)]) == 0
        assert main(
            ["train", str(tiny_config), str(data), str(run), "--set", "train.epochs=0"]
        ) == 0
        loaded = load_checkpoint(run)
        fresh = CommaModel.initialize(load_run_config(tiny_config).model)
        for name, value in fresh.params.named().items():
            assert np.max(np.abs(loaded.params.named()[name].data - value.data)) <= 1e-6

    def test_loss_csv_parses_with_warmup_rates(self, trained):
        # the epoch-descent guarantee is asserted on the full benchmark in
        # test_acceptance; here just make sure the log carries warmup rates
        config, data, run = trained
        rows = (run / "loss.csv").read_text().splitlines()[1:]
        rates = [float(r.split(",")[3]) for r in rows]
        assert rates[0] < rates[-1]  # warmup ramps within the first epoch
        assert all(np.isfinite(float(r.split(",")[2])) for r in rows)

    def test_dim_mismatch_rejected(self, tiny_config, tmp_path, capsys):
        data = tmp_path / "data"
        assert main(["gen-data", str(tiny_config), str(data)]) == 0
        code = main(
            [
                "train",
                str(tiny_config),
                str(data),
                str(tmp_path / "run"),
                "--set",
                "model.d_video_in=9",
            ]
        )
        assert code == 1
        assert "dims" in capsys.readouterr().err


class TestEvalCommand:
    def test_metrics_json(self, trained, tmp_path, capsys):
        config, data, run = trained
        out_file = tmp_path / "metrics.json"
        assert main(["eval", str(run), str(data), "--out", str(out_file)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert set(payload) == {"model", "center_prior", "split"}
        for key in ("model", "center_prior"):
            assert set(payload[key]) == {"hits", "misses", "accuracy"}
        assert json.loads(out_file.read_text()) == payload

    def test_missing_annotations_exit_nonzero(self, trained, tmp_path):
        config, data, run = trained
        (data / "annotations.jsonl").unlink()
        assert main(["eval", str(run), str(data)]) == 1

    def test_untrained_checkpoint_reports_low_accuracy(self, tmp_path, capsys):
        # default-scale data, zero training epochs: the report must come out
        # and sit far below a trained model (prototype cells are salient even
        # untrained, so this lands above pixel chance but well under 0.5)
        config = tmp_path / "bench.cfg"
        config.write_text("train.epochs = 0\n")
        data, run = tmp_path / "data", tmp_path / "run"
        assert main(["gen-data", str(config), str(data)]) == 0
        capsys.readouterr()
        assert main(["train", str(config), str(data), str(run)]) == 0
        assert main(["eval", str(run), str(data)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert 0.0 <= payload["model"]["accuracy"] <= 0.5


class TestGroundCommand:
    def test_outputs(self, trained, tmp_path, capsys):
        config, data, run = trained
        out = tmp_path / "ground"
        assert main(["ground", str(run), str(data), "test-0000", str(out)]) == 0
        pgms = sorted(out.glob("*.pgm"))
        assert len(pgms) == 2  # input_t frames
        header = pgms[0].read_text().splitlines()[:3]
        assert header == ["P2", "8 8", "255"]
        payload = json.loads((out / "grounding.json").read_text())
        assert payload["sample_id"] == "test-0000"
        assert set(payload["mode_pixel"]) == {"t", "y", "x"}

    def test_csv_reparses_to_heatmap(self, trained, tmp_path):
        config, data, run = trained
        out = tmp_path / "ground"
        assert main(["ground", str(run), str(data), "test-0001", str(out)]) == 0
        heat = read_heatmap_csv(out / "heatmap.csv")
        assert heat.shape == (2, 8, 8)

    def test_unknown_sample_exit_nonzero(self, trained, tmp_path, capsys):
        config, data, run = trained
        assert main(["ground", str(run), str(data), "nope-0000", str(tmp_path / "g")]) == 1
        assert "unknown sample" in capsys.readouterr().err

    def test_deterministic_outputs(self, trained, tmp_path):
        config, data, run = trained
        a, b = tmp_path / "ga", tmp_path / "gb"
        assert main(["ground", str(run), str(data), "test-0000", str(a)]) == 0
        assert main(["ground", str(run), str(data), "test-0000", str(b)]) == 0
        for rel in sorted(p.name for p in a.iterdir()):
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_dump_mask(self, trained, capsys, tmp_path):
        config, data, run = trained
        out = tmp_path / "gm"
        assert main(["ground", str(run), str(data), "test-0000", str(out), "--dump-mask"]) == 0
        text = capsys.readouterr().out
        assert "cross-modal mask:" in text
        assert "01" in text or "10" in text


class TestGradCheckCommand:
    def test_tiny_config_exits_zero(self, tmp_path, capsys):
        path = tmp_path / "grad.cfg"
        path.write_text(GRAD_CONFIG)
        assert main(["grad-check", str(path)]) == 0
        out = capsys.readouterr().out
        for mode in ("sentence", "word", "combined"):
            assert f"loss mode: {mode}" in out
        # every trainable parameter exactly once per mode
        assert out.count("video_proj.weight") == 3

    def test_corrupted_backward_exits_nonzero(self, tmp_path, monkeypatch):
        import comma.tensor

        true_relu = comma.tensor.relu

        def broken_relu(a):
            out = true_relu(a)
            if out._parents:
                parent = out._parents[0]
                out._vjps = (lambda g: 1.5 * g * (parent.data > 0.0),)
            return out

        monkeypatch.setattr(comma.tensor, "relu", broken_relu)
        path = tmp_path / "grad.cfg"
        path.write_text(GRAD_CONFIG)
        assert main(["grad-check", str(path)]) == 1
