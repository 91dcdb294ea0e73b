import csv

import numpy as np
import pytest
from PIL import Image

from srforge.checkpoint import load_checkpoint, model_checkpoint, save_checkpoint
from srforge.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from srforge.models import ModelConfig, build_vdsr_resnext, zero_parameters
from srforge.nn import init_parameters

TINY = ["--set", "depth_middle=3", "--set", "block_width=4", "--set", "cardinality=2", "--set", "base_channels=4"]


def _png(path, shape, seed=0):
    rng = np.random.default_rng(seed)
    # smooth content so the downscale is not pure noise
    y, x = np.mgrid[: shape[0], : shape[1]]
    base = 127 + 100 * np.sin(x / 5.0) * np.cos(y / 7.0)
    if len(shape) == 3:
        base = base[..., None] + rng.integers(-20, 20, shape)
    Image.fromarray(np.clip(base, 0, 255).astype(np.uint8)).save(path)
    return path


def _tiny_checkpoint(path, zero=False):
    cfg = ModelConfig(3, 4, 2, base_channels=4)
    net = build_vdsr_resnext(cfg)
    if zero:
        zero_parameters(net)
    else:
        init_parameters(net, 0)
    save_checkpoint(path, model_checkpoint(net, "vdsr_resnext", dict(cfg.to_dict(), with_bias=1)))
    return path


@pytest.fixture
def src_dir(tmp_path):
    d = tmp_path / "src"
    d.mkdir()
    _png(d / "a.png", (82, 82, 3))
    return d


@pytest.fixture
def manifest(tmp_path, src_dir):
    out = tmp_path / "m.txt"
    assert main(["prepare-data", "--src", str(src_dir), "--scales", "2", "--out", str(out)]) == EXIT_OK
    return out


class TestExitCodes:
    def test_usage(self, capsys):
        assert main([]) == EXIT_USAGE
        assert main(["no-such-command"]) == EXIT_USAGE
        assert main(["count-params", "--widths", "x"]) == EXIT_USAGE
        assert main(["count-params", "--widths", "100"]) == EXIT_USAGE

    def test_help(self, capsys):
        assert main(["--help"]) == EXIT_OK
        assert "train-srcgan" in capsys.readouterr().out

    def test_unknown_config_key(self, tmp_path, manifest):
        assert main(["train-sr", "--manifest", str(manifest), "--set", "learning_rate=1"]) == EXIT_USAGE

    def test_data_errors(self, tmp_path):
        assert main(["prepare-data", "--src", str(tmp_path / "missing")]) == EXIT_DATA
        (tmp_path / "bad.srfg").write_bytes(b"junk")
        assert main(["eval-sr", "--checkpoint", str(tmp_path / "bad.srfg"), "--data", str(tmp_path)]) == EXIT_DATA
        assert main(["upscale", "--checkpoint", str(tmp_path / "none.srfg"), "--image", "x.png", "--out", "y.png"]) == EXIT_DATA

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence(self, tmp_path, manifest, capsys):
        out = tmp_path / "run"
        code = main(["train-sr", "--manifest", str(manifest), "--out-dir", str(out), "--epochs", "2",
                     "--set", "lr=1e30", "--set", "clip_mode=none", "--set", "batch_size=2", *TINY])
        assert code == EXIT_NUMERIC
        assert "diverged" in capsys.readouterr().err
        assert (out / "last_good.srfg").exists()


class TestCountParams:
    def test_table(self, capsys):
        assert main(["count-params", "--widths", "64,128,256"]) == EXIT_OK
        text = capsys.readouterr().out
        for plain, grouped in [(110_592, 74_880), (294_912, 152_064), (884_736, 313_344)]:
            assert f"{plain:,}" in text and f"{grouped:,}" in text
        assert f"{6 * 152_064:,}" in text


class TestPrepareData:
    def test_counts_and_rerun_identical(self, tmp_path, src_dir, manifest, capsys):
        lines = manifest.read_text().splitlines()
        records = [l for l in lines if l and not l.startswith("#")]
        assert len(records) == 4 * 8
        again = tmp_path / "m2.txt"
        main(["prepare-data", "--src", str(src_dir), "--scales", "2", "--out", str(again)])
        assert again.read_bytes() == manifest.read_bytes()

    def test_no_augment(self, tmp_path, src_dir):
        out = tmp_path / "m.txt"
        main(["prepare-data", "--src", str(src_dir), "--scales", "2,4", "--no-augment", "--out", str(out)])
        records = [l for l in out.read_text().splitlines() if l and not l.startswith("#")]
        # x2 keeps 82x82 (four patches); x4 crops to 80x80, which fits one
        assert len(records) == 4 + 1

    def test_bad_scale(self, tmp_path, src_dir):
        assert main(["prepare-data", "--src", str(src_dir), "--scales", "5", "--out", str(tmp_path / "m")]) == EXIT_USAGE


def _train(out, manifest, *extra):
    return main(["train-sr", "--manifest", str(manifest), "--out-dir", str(out), "--threads", "1",
                 "--set", "batch_size=8", "--set", "lr_decay_every=1", *TINY, *extra])


class TestTrainSr:
    def test_deterministic_outputs(self, tmp_path, manifest):
        assert _train(tmp_path / "a", manifest, "--epochs", "2") == EXIT_OK
        assert _train(tmp_path / "b", manifest, "--epochs", "2") == EXIT_OK
        for name in ("train_log.csv", "epoch_000.srfg", "epoch_001.srfg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_log_columns_and_staircase(self, tmp_path, manifest):
        _train(tmp_path / "a", manifest, "--epochs", "2")
        with open(tmp_path / "a" / "train_log.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2 * 4
        assert {float(r["lr"]) for r in rows if r["epoch"] == "1"} == {0.01}

    def test_resume_matches_uninterrupted(self, tmp_path, manifest):
        _train(tmp_path / "full", manifest, "--epochs", "2")
        _train(tmp_path / "part", manifest, "--epochs", "1")
        assert _train(tmp_path / "part", manifest, "--epochs", "2", "--resume",
                      str(tmp_path / "part" / "epoch_000.srfg")) == EXIT_OK
        assert (tmp_path / "part" / "train_log.csv").read_bytes() == (tmp_path / "full" / "train_log.csv").read_bytes()
        assert (tmp_path / "part" / "epoch_001.srfg").read_bytes() == (tmp_path / "full" / "epoch_001.srfg").read_bytes()

    def test_max_iters(self, tmp_path, manifest):
        _train(tmp_path / "a", manifest, "--epochs", "5", "--max-iters", "3")
        with open(tmp_path / "a" / "train_log.csv") as f:
            assert len(list(csv.DictReader(f))) == 3

    def test_missing_manifest(self, tmp_path):
        assert main(["train-sr", "--out-dir", str(tmp_path)]) == EXIT_USAGE
        assert main(["train-sr", "--manifest", str(tmp_path / "none.txt"), "--out-dir", str(tmp_path)]) == EXIT_DATA


class TestEvalAndUpscale:
    def test_zero_checkpoint_equals_bicubic(self, tmp_path, src_dir, capsys):
        ck = _tiny_checkpoint(tmp_path / "z.srfg", zero=True)
        out = tmp_path / "r.csv"
        assert main(["eval-sr", "--checkpoint", str(ck), "--data", str(src_dir), "--scale", "2", "--out", str(out)]) == EXIT_OK
        lines = out.read_text().splitlines()
        assert "shave=2" in lines[0] and "quantize=0" in lines[0]
        for line in lines[2:]:
            f = line.split(",")
            assert f[1] == f[3] and f[2] == f[4]
        assert capsys.readouterr().out == out.read_text()

    def test_upscale_rgb_with_compare(self, tmp_path):
        ck = _tiny_checkpoint(tmp_path / "c.srfg")
        img = _png(tmp_path / "in.png", (16, 20, 3))
        hr = _png(tmp_path / "hr.png", (48, 60, 3))
        out = tmp_path / "out.png"
        assert main(["upscale", "--checkpoint", str(ck), "--image", str(img), "--scale", "3",
                     "--out", str(out), "--compare", str(hr)]) == EXIT_OK
        assert Image.open(out).size == (60, 48)
        assert Image.open(tmp_path / "out_compare.png").size == (3 * 60 + 8, 48)

    def test_upscale_gray(self, tmp_path):
        ck = _tiny_checkpoint(tmp_path / "c.srfg", zero=True)
        img = _png(tmp_path / "in.png", (10, 12))
        out = tmp_path / "out.png"
        assert main(["upscale", "--checkpoint", str(ck), "--image", str(img), "--scale", "2", "--out", str(out)]) == EXIT_OK
        im = Image.open(out)
        assert im.size == (24, 20) and im.mode == "L"


@pytest.fixture(scope="module")
def gan_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("gan")
    common = ["--mnist-dir", "bundled", "--train-limit", "256", "--epochs", "1", "--threads", "1"]
    assert main(["train-classifier", *common, "--out", str(root / "clf.srfg")]) == EXIT_OK
    assert main(["train-srcgan", *common, "--out-dir", str(root / "cond")]) == EXIT_OK
    assert main(["train-srcgan", *common, "--no-condition", "--out-dir", str(root / "van")]) == EXIT_OK
    return root


class TestGanCommands:
    def test_outputs(self, gan_runs):
        lines = (gan_runs / "cond" / "losses.csv").read_text().splitlines()
        assert lines[0] == "iteration,d_loss,g_loss"
        assert len(lines) - 1 == 256 // 128
        assert all(len(l.split(",")) == 3 for l in lines[1:])
        for name in ("generator.srfg", "discriminator.srfg", "samples.png"):
            assert (gan_runs / "cond" / name).exists()
        assert load_checkpoint(gan_runs / "cond" / "generator.srfg").config["conditioned"] == 1
        assert load_checkpoint(gan_runs / "van" / "generator.srfg").config["conditioned"] == 0

    def test_eval_table(self, gan_runs, capsys):
        capsys.readouterr()
        out = gan_runs / "acc.csv"
        code = main(["eval-srcgan", "--mnist-dir", "bundled", "--classifier", str(gan_runs / "clf.srfg"),
                     "--srcgan", str(gan_runs / "cond" / "generator.srfg"),
                     "--vanilla", str(gan_runs / "van" / "generator.srfg"),
                     "--out", str(out), "--grid", str(gan_runs / "grid.png")])
        assert code == EXIT_OK
        text = capsys.readouterr().out
        for row in ("Ground truth HR", "SRCGAN", "SR Vanilla GAN"):
            line = next(l for l in text.splitlines() if l.startswith(row))
            assert line.rstrip().endswith("%")
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["model", "accuracy"] and len(rows) == 4
        assert all(0 <= float(r[1]) <= 1 for r in rows[1:])

    def test_wrong_checkpoint_kind(self, gan_runs):
        code = main(["eval-srcgan", "--mnist-dir", "bundled", "--classifier", str(gan_runs / "cond" / "generator.srfg")])
        assert code == EXIT_DATA

    def test_missing_mnist(self, tmp_path, monkeypatch):
        monkeypatch.delenv("SRFORGE_DATA_DIR", raising=False)
        assert main(["train-classifier", "--mnist-dir", str(tmp_path)]) == EXIT_DATA
        assert main(["train-classifier"]) == EXIT_DATA
