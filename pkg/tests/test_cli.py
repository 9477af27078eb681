import json
import subprocess
import sys

import numpy as np
import pytest

from degree_sr.cli import main, resolve
from degree_sr.imaging import bicubic_resize, read_image, write_image
from degree_sr.network import DegreeConfig, DegreeNetwork
from degree_sr.synthetic import synthetic_rgb
from degree_sr.trainer import TrainState, save_checkpoint


@pytest.fixture
def image_dir(tmp_path):
    d = tmp_path / "hr"
    d.mkdir()
    rng = np.random.default_rng(0)
    for i in range(2):
        write_image(d / f"im{i}.png", synthetic_rgb(48, 48, rng))
    return d


@pytest.fixture
def zero_head_ckpt(tmp_path):
    net = DegreeNetwork.build(DegreeConfig(recurrences=2, channels=8, scale=2))
    net.rect_conv.weights[:] = 0
    net.rect_conv.bias[:] = 0
    path = tmp_path / "zero.dgre"
    save_checkpoint(net, TrainState(), path)
    return path


class TestResolve:
    def test_defaults(self):
        cmd, o = resolve(["prepare", "--hr-dir", "x"])
        assert cmd == "prepare" and o["patch"] == 33 and o["stride"] == 14 and o["augment"] is True

    def test_precedence(self, tmp_path, monkeypatch):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"prepare": {"stride": 20, "patch": 21}}))
        _, o = resolve(["--config", str(cfg), "prepare", "--hr-dir", "x", "--stride", "7"])
        assert o["stride"] == 7 and o["patch"] == 21 and o["scale"] == 3
        monkeypatch.setenv("DEGREE_SR_CONFIG", str(cfg))
        _, o = resolve(["prepare", "--hr-dir", "x"])
        assert o["stride"] == 20

    def test_flat_config(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"scale": 4}))
        assert resolve(["--config", str(cfg), "eval", "--dataset-dir", "d"])[1]["scale"] == 4


class TestExitCodes:
    def test_unknown_flag(self):
        assert main(["prepare", "--hr-dir", "x", "--bogus"]) == 1

    def test_no_subcommand(self):
        assert main([]) == 1

    def test_missing_required(self):
        assert main(["train"]) == 1

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"strid": 3}))
        assert main(["--config", str(cfg), "prepare", "--hr-dir", "x"]) == 1

    def test_missing_dir_is_data_error(self, tmp_path):
        assert main(["prepare", "--hr-dir", str(tmp_path / "nope")]) == 2

    def test_corrupt_checkpoint_is_data_error(self, tmp_path, image_dir):
        bad = tmp_path / "bad.dgre"
        bad.write_bytes(b"DGRE" + b"\0" * 40)
        assert main(["super-resolve", "--checkpoint", str(bad), "--input", str(image_dir / "im0.png"),
                     "--output", str(tmp_path / "o.png")]) == 2

    def test_both_eval_sources_is_usage(self, image_dir, zero_head_ckpt):
        assert main(["eval", "--dataset-dir", str(image_dir), "--baseline", "bicubic",
                     "--checkpoint", str(zero_head_ckpt)]) == 1

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverging_training_is_numeric(self, tmp_path, image_dir):
        ps = tmp_path / "p.bin"
        assert main(["prepare", "--hr-dir", str(image_dir), "--augment", "off", "--out", str(ps)]) == 0
        net = DegreeNetwork.build(DegreeConfig(recurrences=1, channels=4))
        for p in net.params:
            p.weights *= 1e30
        save_checkpoint(net, TrainState(), tmp_path / "huge.dgre")
        assert main(["train", "--patchset", str(ps), "--resume", str(tmp_path / "huge.dgre"), "--epochs", "1",
                     "--lr-drop-epoch", "1", "--out-dir", str(tmp_path / "run")]) == 3


def test_prepare_and_train(tmp_path, image_dir, capsys):
    ps = tmp_path / "p.bin"
    assert main(["prepare", "--hr-dir", str(image_dir), "--scale", "3", "--augment", "off", "--out", str(ps)]) == 0
    assert "patches: 8" in capsys.readouterr().out  # origins 0 and 14 per side, 2 images
    run = tmp_path / "run"
    code = main(["train", "--patchset", str(ps), "--recurrences", "1", "--channels", "4", "--epochs", "2",
                 "--lr-drop-epoch", "1", "--batch-size", "8", "--out-dir", str(run), "--val-dir", str(image_dir),
                 "--val-interval", "1"])
    assert code == 0
    assert (run / "final.dgre").is_file() and (run / "metrics.csv").is_file()
    code = main(["train", "--patchset", str(ps), "--resume", str(run / "epoch_0001.dgre"), "--epochs", "2",
                 "--lr-drop-epoch", "1", "--batch-size", "8", "--out-dir", str(tmp_path / "res")])
    assert code == 0
    assert (tmp_path / "res" / "final.dgre").read_bytes() == (run / "final.dgre").read_bytes()


def test_super_resolve_zero_head_is_bicubic(tmp_path, image_dir, zero_head_ckpt):
    src = tmp_path / "gray.png"
    lr = np.round(np.random.default_rng(1).random((12, 10)) * 255) / 255
    write_image(src, lr)
    out = tmp_path / "sr.png"
    assert main(["super-resolve", "--checkpoint", str(zero_head_ckpt), "--input", str(src), "--output", str(out)]) == 0
    got = read_image(out).data
    assert got.shape == (24, 20)
    np.testing.assert_array_equal(got, np.round(bicubic_resize(lr, 2) * 255) / 255)
    rgb_out = tmp_path / "sr_rgb.png"
    assert main(["super-resolve", "--checkpoint", str(zero_head_ckpt), "--input", str(image_dir / "im0.png"),
                 "--output", str(rgb_out)]) == 0
    assert read_image(rgb_out).data.shape == (96, 96, 3)


def test_visualize_bands(tmp_path, image_dir, zero_head_ckpt):
    out = tmp_path / "bands"
    assert main(["visualize-bands", "--checkpoint", str(zero_head_ckpt), "--input", str(image_dir / "im0.png"),
                 "--out-dir", str(out), "--degrade", "on"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["band_1L.png", "band_1R.png", "band_2R.png"]
    assert read_image(out / "band_1L.png").data.shape == (48, 48)


def test_eval_baseline_and_checkpoint_agree(tmp_path, image_dir, zero_head_ckpt):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["eval", "--dataset-dir", str(image_dir), "--scale", "2", "--baseline", "bicubic", "--report", str(a)]) == 0
    assert main(["eval", "--dataset-dir", str(image_dir), "--scale", "2", "--checkpoint", str(zero_head_ckpt),
                 "--report", str(b)]) == 0
    rows = lambda p: [line.split(",")[1:] for line in p.read_text().splitlines()[1:4]]  # noqa: E731
    assert rows(a) == rows(b)
    assert "Bicubic" in a.with_suffix(".txt").read_text()


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "degree_sr.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "degree-sr" in r.stdout
