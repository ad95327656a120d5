import csv
import json

import numpy as np
import pytest
import torch
from PIL import Image

from imgsynth import ConfigError, LoadError, SynthesisJob
from imgsynth.cli import run
from imgsynth.config import parse_config, serialize_config
from imgsynth.images import load_image, load_mask, save_image


@pytest.fixture()
def target_png(tmp_path):
    gen = torch.Generator().manual_seed(42)
    save_image(torch.rand(3, 64, 64, generator=gen), tmp_path / "target.png")
    return tmp_path / "target.png"


TINY_FLAGS = ["--arch", "tiny-test-net", "--size", "64",
              "--iters-stage1", "3", "--iters-stage2", "3"]


# -------------------------------------------------------------------- images

def test_load_image_white(tmp_path):
    Image.new("RGB", (32, 32), (255, 255, 255)).save(tmp_path / "w.png")
    img = load_image(tmp_path / "w.png", 32)
    assert torch.equal(img, torch.ones(3, 32, 32))


def test_load_image_resizes(tmp_path):
    Image.new("RGB", (448, 448), (10, 20, 30)).save(tmp_path / "big.png")
    assert load_image(tmp_path / "big.png", 224).shape == (3, 224, 224)


def test_load_image_grayscale_expands(tmp_path):
    Image.new("L", (16, 16), 77).save(tmp_path / "g.png")
    img = load_image(tmp_path / "g.png", 16)
    assert torch.equal(img[0], img[1])
    assert torch.equal(img[1], img[2])


def test_load_image_unreadable(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not a png")
    with pytest.raises(LoadError, match="bad.png"):
        load_image(bad, 32)


def test_load_mask_threshold(tmp_path):
    arr = np.zeros((8, 8), dtype=np.uint8)
    arr[:4] = 200
    arr[4:] = 100
    Image.fromarray(arr, "L").save(tmp_path / "m.png")
    mask = load_mask(tmp_path / "m.png", 8)
    assert torch.equal(mask[:4], torch.ones(4, 8))
    assert torch.equal(mask[4:], torch.zeros(4, 8))


# -------------------------------------------------------------------- config

def test_config_round_trip():
    job = SynthesisJob(target="a.png", mode="position", blob_center=(10, 20),
                       blob_sigma=4.5, seed=9, size=96,
                       phi=("conv1_1", "conv2_3"))
    text = serialize_config(job)
    assert parse_config(text) == job
    assert parse_config(serialize_config(parse_config(text))) == job


def test_config_unknown_key():
    with pytest.raises(ConfigError, match="florp"):
        parse_config("[job]\ntarget = a.png\nflorp = 1\n")


def test_config_unknown_section():
    with pytest.raises(ConfigError, match="extras"):
        parse_config("[job]\ntarget = a.png\n[extras]\nx = 1\n")


def test_config_missing_target():
    with pytest.raises(ConfigError, match="target"):
        parse_config("[job]\nmode = standard\n")


def test_config_bad_value():
    with pytest.raises(ConfigError, match="seed"):
        parse_config("[job]\ntarget = a.png\nseed = soon\n")


# ----------------------------------------------------------------------- cli

def test_synth_end_to_end(tmp_path, target_png):
    out = tmp_path / "out"
    code = run(["synth", "--target", str(target_png), "--out-dir", str(out),
                "--samples", "2", "--seed", "1", "--job-id", "job", *TINY_FLAGS])
    assert code == 0
    for i in range(2):
        assert (out / f"job_{i}.png").exists()
        with (out / f"job_{i}_trace.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iter", "stage", "term", "value"]
        assert len(rows) > 1
    manifest = json.loads((out / "job_manifest.json").read_text())
    for key in ("mode", "target", "phi", "phi_c", "phi_r", "phi_s", "phi_q",
                "alpha", "beta", "lambda", "gamma_schedule", "nu",
                "stage1_iterations", "stage2_iterations", "image_lr",
                "critic_lr", "size", "sample_count", "seed",
                "backbone_checksum", "y_star", "critic"):
        assert key in manifest
    assert manifest["backbone_checksum"]


def test_rerun_is_byte_identical(tmp_path, target_png):
    out = tmp_path / "out"
    args = ["synth", "--target", str(target_png), "--out-dir", str(out),
            "--seed", "3", "--job-id", "rep", *TINY_FLAGS]
    assert run(args) == 0
    first = (out / "rep_0.png").read_bytes()
    first_trace = (out / "rep_0_trace.csv").read_bytes()
    assert run(args) == 0
    assert (out / "rep_0.png").read_bytes() == first
    assert (out / "rep_0_trace.csv").read_bytes() == first_trace


def test_parallel_matches_sequential(tmp_path, target_png):
    seq = tmp_path / "seq"
    par = tmp_path / "par"
    base = ["synth", "--target", str(target_png), "--samples", "2",
            "--seed", "5", "--job-id", "p", *TINY_FLAGS]
    assert run(base + ["--out-dir", str(seq)]) == 0
    assert run(base + ["--out-dir", str(par), "--parallel", "2"]) == 0
    for i in range(2):
        assert (seq / f"p_{i}.png").read_bytes() == (par / f"p_{i}.png").read_bytes()


def test_position_manifest(tmp_path, target_png):
    out = tmp_path / "out"
    code = run(["position", "--target", str(target_png), "--out-dir", str(out),
                "--blob-center", "60,60", "--blob-sigma", "8", "--job-id", "pos",
                *TINY_FLAGS])
    assert code == 0
    manifest = json.loads((out / "pos_manifest.json").read_text())
    assert manifest["nu"] == 10.0
    assert manifest["blob_center"] == [60, 60]
    assert manifest["blob_sigma"] == 8.0


def test_validate_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "job.cfg"
    cfg.write_text("[job]\ntarget = a.png\nflorp = 1\n")
    assert run(["validate-config", "--config", str(cfg)]) == 2
    assert "florp" in capsys.readouterr().err


def test_validate_config_ok(tmp_path, capsys):
    cfg = tmp_path / "job.cfg"
    cfg.write_text("[job]\ntarget = a.png\nseed = 4\n")
    assert run(["validate-config", "--config", str(cfg)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["seed"] == 4


def test_missing_target_flag():
    assert run(["synth"]) == 2


def test_ablate_requires_layers(target_png):
    assert run(["ablate", "--target", str(target_png), *TINY_FLAGS]) == 2


def test_ablate_runs(tmp_path, target_png):
    out = tmp_path / "out"
    code = run(["ablate", "--target", str(target_png), "--out-dir", str(out),
                "--layers", "t1,t2", "--job-id", "ab", *TINY_FLAGS])
    assert code == 0
    manifest = json.loads((out / "ab_manifest.json").read_text())
    assert manifest["phi"] == ["t1", "t2"]
