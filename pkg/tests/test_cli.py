import subprocess
import sys

import numpy as np
import pytest

from adsrnet.cli import main
from adsrnet.config import ConfigError, RunConfig, parse_config_text, parse_overrides
from adsrnet.data import read_png, write_png

from conftest import smooth_image

TRAIN_ARGS = [
    "--model.variant", "six_cru_cb",
    "--train.patch_lr", "8",
    "--train.batch_size", "2",
    "--train.total_steps", "2",
]


@pytest.fixture
def data_root(toy_split):
    assert main(["degrade", "--hr", str(toy_split / "HR"), "--scale", "2", "--out", str(toy_split / "LR_x2")]) == 0
    return toy_split.parent


def run_train(data_root, out, capsys, *extra):
    code = main(["--threads", "1", "train", "--out", str(out), "--data.root", str(data_root), "--data.train", "toy", *TRAIN_ARGS, *extra])
    return code, capsys.readouterr()


class TestConfig:
    def test_defaults(self):
        c = RunConfig.resolve()
        assert c["model.scale"] == 2 and c["train.batch_size"] == 64 and c["eval.border_crop"] is None

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\nmodel.scale = 3\ntrain.hflip=false\nseed=9  # trailing\n")
        c = RunConfig.resolve(path, parse_overrides(["--model.scale", "4"]))
        assert c["model.scale"] == 4 and c["train.hflip"] is False and c["seed"] == 9
        assert c.train_config().seed == 9

    def test_canonical_text_round_trips(self, tmp_path):
        c = RunConfig.resolve(None, {"eval.border_crop": "0", "train.lr_initial": "2e-4"})
        path = tmp_path / "c.txt"
        path.write_text(c.canonical_text())
        assert RunConfig.resolve(path).values == c.values

    @pytest.mark.parametrize(
        "text,match",
        [("model.scal=2", "unknown"), ("seed=1\nseed=2", "duplicate"), ("just words", "key=value")],
    )
    def test_rejects_bad_files(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config_text(text)

    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError, match="model.scale"):
            RunConfig.resolve(None, {"model.scale": "two"})
        with pytest.raises(ConfigError):
            RunConfig.resolve(None, {"model.scale": "5"})

    def test_override_syntax(self):
        assert parse_overrides(["--seed=3", "--model.k", "2"]) == {"seed": "3", "model.k": "2"}
        with pytest.raises(ConfigError, match="missing a value"):
            parse_overrides(["--seed"])


class TestParamsCommand:
    def test_full_model_table(self, capsys):
        assert main(["params"]) == 0
        out = capsys.readouterr().out
        assert "analytic_parameters\t1820327" in out
        assert "live_parameters\t1820327" in out
        assert "# model.variant=full" in out

    def test_flop_size(self, capsys):
        assert main(["params", "--model.scale", "4", "--size", "0", "0"]) == 0
        assert "flops_0x0\t0" in capsys.readouterr().out

    def test_unknown_key_exit_2(self, capsys):
        assert main(["params", "--model.nope", "1"]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_missing_config_file(self, capsys, tmp_path):
        assert main(["params", "--config", str(tmp_path / "x.cfg")]) == 2

    def test_bad_threads(self):
        assert main(["--threads", "0", "params"]) == 2


class TestDegradeCommand:
    def test_writes_lr_files(self, data_root, capsys):
        assert read_png(data_root / "toy" / "LR_x2" / "a.png").shape == (32, 28, 3)

    def test_missing_directory(self, tmp_path, capsys):
        assert main(["degrade", "--hr", str(tmp_path / "none"), "--scale", "2", "--out", str(tmp_path / "o")]) == 1
        assert "error" in capsys.readouterr().err


class TestTrainEvalInfer:
    def test_train_is_deterministic(self, data_root, tmp_path, capsys):
        code_a, out_a = run_train(data_root, tmp_path / "a", capsys)
        code_b, out_b = run_train(data_root, tmp_path / "b", capsys)
        assert code_a == code_b == 0
        assert (tmp_path / "a" / "checkpoint.adsr").read_bytes() == (tmp_path / "b" / "checkpoint.adsr").read_bytes()
        assert (tmp_path / "a" / "train.log").read_text() == (tmp_path / "b" / "train.log").read_text()
        assert "# train.total_steps=2" in out_a.out
        assert (tmp_path / "a" / "config.txt").read_text().count("\n") > 20

    def test_train_missing_data(self, tmp_path, capsys):
        code = main(["train", "--out", str(tmp_path / "o"), "--data.root", str(tmp_path / "none")])
        assert code == 1
        assert "not found" in capsys.readouterr().err

    def test_eval_and_infer(self, data_root, tmp_path, capsys):
        assert run_train(data_root, tmp_path / "run", capsys)[0] == 0
        ckpt = str(tmp_path / "run" / "checkpoint.adsr")
        split = str(data_root / "toy")
        assert main(["eval", "--checkpoint", ckpt, "--data", split, "--scale", "2", "--out", str(tmp_path / "t.tsv")]) == 0
        table = capsys.readouterr().out
        assert table.splitlines()[0] == "image\tpsnr\tssim"
        assert (tmp_path / "t.tsv").read_text() == table

        assert main(["eval", "--checkpoint", ckpt, "--data", split, "--scale", "3"]) == 1
        assert "scale" in capsys.readouterr().err

        write_png(tmp_path / "lr.png", smooth_image(16, 24, 7))
        assert main(["infer", "--checkpoint", ckpt, "--in", str(tmp_path / "lr.png"), "--out", str(tmp_path / "sr.png")]) == 0
        assert read_png(tmp_path / "sr.png").shape == (32, 48, 3)

    def test_resume(self, data_root, tmp_path, capsys):
        assert run_train(data_root, tmp_path / "r", capsys)[0] == 0
        code, _ = run_train(data_root, tmp_path / "r", capsys, "--resume", str(tmp_path / "r" / "checkpoint.adsr"), "--train.total_steps", "3")
        assert code == 0
        assert len((tmp_path / "r" / "train.log").read_text().splitlines()) == 3

    def test_eval_baselines(self, data_root, capsys):
        split = str(data_root / "toy")
        assert main(["eval", "--identity", "--data", split, "--scale", "2"]) == 0
        assert capsys.readouterr().out.splitlines()[-1] == "mean\tinf\t1.000000"
        assert main(["eval", "--baseline", "bicubic", "--data", split, "--scale", "2", "--channel", "rgb", "--crop", "0"]) == 0
        assert "inf" not in capsys.readouterr().out

    def test_eval_needs_one_mode(self, data_root, capsys):
        assert main(["eval", "--data", str(data_root / "toy"), "--scale", "2"]) == 2

    def test_infer_corrupt_png(self, data_root, tmp_path, capsys):
        run_train(data_root, tmp_path / "run", capsys)
        (tmp_path / "bad.png").write_bytes(b"\x89PNG\r\n\x1a\ngarbage")
        code = main(["infer", "--checkpoint", str(tmp_path / "run" / "checkpoint.adsr"), "--in", str(tmp_path / "bad.png"), "--out", str(tmp_path / "o.png")])
        assert code == 1
        assert "corrupt" in capsys.readouterr().err

    def test_infer_scale_four(self, tmp_path, capsys):
        from adsrnet.checkpoint import save_checkpoint
        from adsrnet.model import ModelConfig, init_parameters

        config = ModelConfig(scale=4, variant="six_cru_cb")
        ckpt = save_checkpoint(tmp_path / "m.adsr", config, init_parameters(config, seed=0))
        write_png(tmp_path / "lr.png", smooth_image(16, 24, 7))
        assert main(["infer", "--checkpoint", str(ckpt), "--in", str(tmp_path / "lr.png"), "--out", str(tmp_path / "sr.png")]) == 0
        assert read_png(tmp_path / "sr.png").shape == (64, 96, 3)


class TestEntryPoint:
    def test_module_help(self):
        proc = subprocess.run([sys.executable, "-m", "adsrnet", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        for command in ("degrade", "train", "eval", "infer", "params", "gradcheck"):
            assert command in proc.stdout

    def test_no_command_is_usage_error(self):
        proc = subprocess.run([sys.executable, "-m", "adsrnet"], capture_output=True, text=True)
        assert proc.returncode == 2
