import json

import numpy as np
import pytest

from framefold.cli import main
from framefold.config import ConfigError, load_config
from framefold.cube import VideoSequence
from framefold.io import DataError, dir_digest, frame_files, load_manifest, read_frames, write_frames

TINY_CFG = """
seed: 1
codec: {clean_width: 4, clean_blocks: 1, enc_width: 4, enc_blocks: 1, dec_width: 4, dec_blocks: 1, reduction: 2}
flow: {method: zero}
corpus: {n_clips: 3, frames: 4, size: 32}
train: {total_steps: 2, batch_size: 2, lr0: 0.001}
"""


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    cfg = root / "cfg.yaml"
    cfg.write_text(TINY_CFG)
    assert main(["synth", "--config", str(cfg), "--out", str(root / "hr")]) == 0
    assert main(["synth", "--config", str(cfg), "--out", str(root / "hr_test"), "--n-clips", "1",
                 "--role", "test", "--prefix", "test", "--seed", "9"]) == 0
    assert main(["degrade", "--config", str(cfg), "--manifest", str(root / "hr" / "manifest.json"),
                 "--out", str(root / "lr")]) == 0
    return root, cfg


def test_config_defaults_env_and_errors(tmp_path):
    cfg = load_config(None, environ={"FRAMEFOLD__TRAIN__LR0": "0.01", "FRAMEFOLD__SEED": "7"})
    assert cfg.train.lr0 == 0.01 and cfg.seed == 7
    assert cfg.codec_config().group_size == 9
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {nope: 1}\n")
    with pytest.raises(ConfigError, match="nope"):
        load_config(bad, environ={})
    bad.write_text("grouping: {group_size: 9, overlap: 9}\n")
    with pytest.raises(ConfigError):
        load_config(bad, environ={})


def test_frame_io_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    frames = [np.round(rng.random((5, 7, 3)) * 255) / 255 for _ in range(3)]
    write_frames(VideoSequence(frames), tmp_path / "c")
    assert [p.name for p in frame_files(tmp_path / "c")] == ["00000000.png", "00000001.png", "00000002.png"]
    back = read_frames(tmp_path / "c")
    assert all(np.allclose(a, b, atol=1e-12) for a, b in zip(frames, back.frames))
    (tmp_path / "c" / "00000001.png").unlink()
    with pytest.raises(DataError, match="contiguous"):
        frame_files(tmp_path / "c")


def test_degrade_crf0_matches_blur_downsample(tmp_path, capsys, workspace):
    root, cfg = workspace
    code, _, _ = run(capsys, "degrade", "--config", cfg, "--manifest", root / "hr" / "manifest.json",
                     "--out", tmp_path / "a", "--crf", 0)
    assert code == 0
    from framefold.degrade import blur_downsample
    from framefold.io import to_uint8
    m = load_manifest(tmp_path / "a" / "manifest.json")
    assert len(m.clips) == 3 and all(c.crf == 0 and c.seed == 1 and c.source for c in m.clips)
    ref = blur_downsample(read_frames(m.clips[0].source))
    got = read_frames(m.clips[0].path)
    assert all(np.array_equal(to_uint8(a), to_uint8(b)) for a, b in zip(ref.frames, got.frames))


def test_degrade_is_deterministic(tmp_path, capsys, workspace):
    root, cfg = workspace
    for _ in range(2):
        assert run(capsys, "degrade", "--config", cfg, "--manifest", root / "hr" / "manifest.json",
                   "--out", tmp_path / "d")[0] == 0
    first = (tmp_path / "d" / "manifest.json").read_text()
    assert first == (root / "lr" / "manifest.json").read_text().replace(str(root / "lr"), str(tmp_path / "d"))
    assert json.loads(first)["clips"][0]["digest"] == dir_digest(tmp_path / "d" / "clip0000")


def test_train_pipeline_end_to_end(tmp_path, capsys, workspace):
    root, cfg = workspace
    manifest = root / "lr" / "manifest.json"
    code, _, err = run(capsys, "train", "--config", cfg, "--manifest", manifest, "--out", tmp_path / "s2")
    assert code == 2 and error_of(err)["error"] == "config"
    code, _, err = run(capsys, "train", "--config", cfg, "--manifest", manifest, "--out", tmp_path / "s2",
                       "--codec", tmp_path / "missing")
    assert code == 3 and "stage-1" in error_of(err)["message"]

    code, out, _ = run(capsys, "pretrain", "--config", cfg, "--manifest", manifest, "--out", tmp_path / "s1",
                       "--steps", 3)
    assert code == 0 and json.loads(out)["archive"].endswith("codec")
    assert len((tmp_path / "s1" / "train_log.jsonl").read_text().splitlines()) == 1 + 3
    code, _, _ = run(capsys, "pretrain", "--config", cfg, "--manifest", manifest, "--out", tmp_path / "s1",
                     "--steps", 5, "--resume")
    assert code == 0
    log = [json.loads(x) for x in (tmp_path / "s1" / "train_log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in log if "step" in r] == [4, 5]

    code, _, _ = run(capsys, "train", "--config", cfg, "--manifest", manifest, "--out", tmp_path / "s2",
                     "--codec", tmp_path / "s1" / "codec")
    assert code == 0 and (tmp_path / "s2" / "backbone" / "header.json").is_file()

    test_clip = root / "hr_test" / "test0000"
    args = ("infer", "--config", cfg, "--clip", test_clip, "--codec", tmp_path / "s1" / "codec",
            "--backbone", tmp_path / "s2" / "backbone")
    assert run(capsys, *args, "--out", tmp_path / "sr", "--dump-latents")[0] == 0
    assert len(frame_files(tmp_path / "sr" / "test0000")) == 4
    assert read_frames(tmp_path / "sr" / "test0000").shape == (128, 128, 3)
    assert len(frame_files(tmp_path / "sr" / "test0000" / "latents")) == 2  # 4 frames -> K=2
    assert run(capsys, *args, "--out", tmp_path / "sr2")[0] == 0
    assert dir_digest(tmp_path / "sr" / "test0000") == dir_digest(tmp_path / "sr2" / "test0000")

    code, out, _ = run(capsys, "roundtrip", "--config", cfg, "--clip", test_clip, "--mode", "full",
                       "--codec", tmp_path / "s1" / "codec")
    assert code == 0 and np.isfinite(json.loads(out)["mean_psnr_y"])


def test_roundtrip_grouping_only_is_exact(capsys, workspace):
    root, cfg = workspace
    code, out, _ = run(capsys, "roundtrip", "--config", cfg, "--clip", root / "hr" / "clip0001",
                       "--mode", "grouping")
    assert code == 0
    res = json.loads(out)
    assert res["mean_psnr_y"] == float("inf") and res["inf_frames"] == 4


def test_eval_against_itself(tmp_path, capsys, workspace):
    root, _ = workspace
    code, out, _ = run(capsys, "eval", "--pred", root / "hr", "--gt", root / "hr", "--out", tmp_path / "rep")
    assert code == 0
    assert json.loads(out)["mean_ssim_y"] == pytest.approx(1.0)
    assert (tmp_path / "rep" / "metrics.csv").read_text().startswith("clip,frame,psnr_y,ssim_y")
    code, _, err = run(capsys, "eval", "--pred", tmp_path / "nothing", "--gt", root / "hr")
    assert code == 3 and error_of(err)["code"] == 3


def test_bench_smoke_single_cell(tmp_path, capsys):
    scen = tmp_path / "scen.yaml"
    scen.write_text("frame_counts: [4]\nresolutions: [16]\nrepetitions: 3\ncompression: [true]\n"
                    "backbone: {name: bicubic, scale: 2}\nflow_method: zero\n")
    code, _, _ = run(capsys, "bench", "--config", scen, "--out", tmp_path / "b.csv")
    assert code == 0
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "frames,resolution,compression,median_ms,iqr_ms,invocations,status"
    assert len(lines) == 2 and lines[1].split(",")[5] == "2"


def test_error_codes(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("flow: {method: magic}\n")
    code, _, err = run(capsys, "roundtrip", "--config", bad, "--clip", tmp_path, "--mode", "grouping")
    assert code == 2 and error_of(err)["error"] == "config"
    code, _, err = run(capsys, "roundtrip", "--clip", tmp_path / "none", "--mode", "grouping")
    assert code == 3 and error_of(err)["error"] == "data"
    code, _, err = run(capsys, "bench", "--out", tmp_path / "x.csv", "--config", bad)
    assert code == 2
    code, _, err = run(capsys, "frobnicate")
    assert code == 2
