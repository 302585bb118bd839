import json
import os

import numpy as np
import pytest

from ctstandard import cli, phantom
from ctstandard.dataio import ImageTensor, Unit, load_tensor, save_tensor
from ctstandard.dicomlite import CtSliceMeta, write_minimal_dicom


def _config(tmp_path, **extra):
    cfg = {"seed": 3, "image_size": 64, "latent_dim": 16,
           "codec": {"epochs": 1, "batch_size": 4, "lr": 1e-3},
           "diffusion": {"T": 50, "epochs": 1, "batch_size": 4},
           "paths": {"dataset": "train", "checkpoint": "ck", "report": "rep"}}
    cfg.update(extra)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return str(p)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = _config(d)
    assert cli.main(["phantom", "gen", "--seed", "1", "--n", "4", "--size", "64", "--out", str(d / "train")]) == 0
    assert cli.main(["phantom", "gen", "--seed", "12", "--n", "2", "--size", "64", "--out", str(d / "test")]) == 0
    assert cli.main(["train", "codec", "--config", cfg]) == 0
    assert cli.main(["train", "diffusion", "--config", cfg]) == 0
    return d, cfg


def test_gen_rejects_empty_dataset(tmp_path):
    assert cli.main(["phantom", "gen", "--seed", "0", "--n", "0", "--out", str(tmp_path)]) == 2


def test_missing_required_flag_exits_2(tmp_path):
    with pytest.raises(SystemExit) as e:
        cli.main(["phantom", "gen", "--n", "1"])
    assert e.value.code == 2


def test_gen_is_reproducible(tmp_path):
    for name in ("x", "y"):
        cli.main(["phantom", "gen", "--seed", "5", "--n", "2", "--size", "64", "--out", str(tmp_path / name)])
    for f in sorted(os.listdir(tmp_path / "x")):
        assert (tmp_path / "x" / f).read_bytes() == (tmp_path / "y" / f).read_bytes()


def test_diffusion_before_codec_exits_3(tmp_path):
    cli.main(["phantom", "gen", "--seed", "1", "--n", "1", "--size", "64", "--out", str(tmp_path / "train")])
    assert cli.main(["train", "diffusion", "--config", _config(tmp_path)]) == 3


def test_non_finite_training_exits_4(tmp_path):
    phantom.write_dataset(phantom.gen_paired_dataset(0, 2, 64), tmp_path / "train")
    cfg = _config(tmp_path, codec={"epochs": 3, "batch_size": 1, "lr": 1e30})
    assert cli.main(["train", "codec", "--config", cfg]) == 4


def test_unknown_config_key_exits_2(tmp_path):
    assert cli.main(["train", "codec", "--config", _config(tmp_path, bogus=1)]) == 2


def test_training_writes_checkpoints_and_logs(trained):
    d, _ = trained
    for f in ("codec.ctck", "diffusion.ctck", "codec_loss.csv", "diffusion_loss.csv"):
        assert (d / "ck" / f).exists()


def test_standardize_tensor_and_dicom(trained, tmp_path):
    d, cfg = trained
    s = phantom.read_dataset(d / "test")[0]
    save_tensor(ImageTensor(s.a, Unit.HU), tmp_path / "a.cttn")
    (tmp_path / "a.dcm").write_bytes(write_minimal_dicom(CtSliceMeta(64, 64, 16, 1.0, -1024.0), s.a))
    assert cli.main(["standardize", "--in", str(tmp_path / "a.cttn"), "--out", str(tmp_path / "o1.cttn"),
                     "--png", str(tmp_path / "o1.png"), "--config", cfg]) == 0
    assert cli.main(["standardize", "--in", str(tmp_path / "a.dcm"), "--out", str(tmp_path / "o2.cttn"),
                     "--config", cfg]) == 0
    o1, o2 = load_tensor(tmp_path / "o1.cttn"), load_tensor(tmp_path / "o2.cttn")
    assert o1.data.shape == (64, 64) and (tmp_path / "o1.png").exists()
    assert np.allclose(o1.data, o2.data, atol=1.0)


def test_standardize_rejects_unknown_format(trained, tmp_path):
    _, cfg = trained
    (tmp_path / "junk").write_bytes(b"x" * 200)
    assert cli.main(["standardize", "--in", str(tmp_path / "junk"), "--out", str(tmp_path / "o"),
                     "--config", cfg]) == 1


def test_evaluate_report(trained, tmp_path):
    d, cfg = trained
    assert cli.main(["evaluate", "--dataset", str(d / "test"), "--out", str(tmp_path), "--config", cfg]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary["standardized"]["class_ccc"]) == {"GOH", "GLCM", "GLRLM", "ID", "IH", "NID"}
    assert len(summary["baseline"]["curve"]) == 51
    for f in ("repro_curve.csv", "baseline_repro_curve.csv", "ccc_by_class.csv", "errors.csv"):
        assert (tmp_path / f).exists()


def test_speckle_study_command(tmp_path, capsys):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"size": 64, "train_stride": 8, "test_stride": 16,
                               "codec": {"epochs": 1, "latent_dim": 16}, "diffusion": {"epochs": 1, "T": 50}}))
    assert cli.main(["speckle", "study", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    rep = json.loads((tmp_path / "out" / "study_report.json").read_text())
    for k in ("ssim_in", "ssim_out", "psnr_in", "psnr_out", "ccc_in", "ccc_out", "improved"):
        assert k in rep
