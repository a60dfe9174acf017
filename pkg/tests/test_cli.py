"""Command-line interface: subcommands, file formats, exit codes."""

from __future__ import annotations

import json

import numpy as np
import pytest

from fibresr.cli import build_parser, main
from fibresr.geometry import FibrePattern
from fibresr.images import CartesianImage, load_image, save_image
from fibresr.iqa import evaluate_pair
from fibresr.network import init_network, load_checkpoint, save_checkpoint

from conftest import make_texture

# small-but-valid settings shared by the training-path tests
MICRO_SET = [
    "--set", "epochs=4", "--set", "eval_every=2",
    "--set", "batch_size=2", "--set", "crop_size=16",
]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """Three simulated micro videos plus their source directory."""
    root = tmp_path_factory.mktemp("cli")
    src = root / "src"
    src.mkdir()
    for k in range(3):
        tex = make_texture(72, seed=60 + k)
        save_image(src / f"tex{k}.png", CartesianImage.from_array(tex))
    data = root / "data"
    rc = main([
        "simulate", "--inputs", str(src), "--out", str(data),
        "--seed", "9",
        "--set", "sim.size=48", "--set", "sim.frames=4",
    ])
    assert rc == 0
    return root, src, data


# ----------------------------------------------------------------- parser

def test_parser_rejects_missing_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_set_flag_validation(tmp_path):
    out = tmp_path / "p.json"
    assert main(["pattern", "--out", str(out), "--set", "nonsense"]) == 2
    assert main(["pattern", "--out", str(out), "--set", "banana=1"]) == 2
    assert main(["pattern", "--out", str(out), "--set", "epochs=abc"]) == 2


def test_threads_flag(tmp_path, capsys):
    assert main(["pattern", "--threads", "0", "--out", str(tmp_path / "p.json")]) == 2
    # numpy is long since imported by the test process: warned, not fatal
    rc = main([
        "pattern", "--threads", "1", "--size", "32",
        "--out", str(tmp_path / "p2.json"),
    ])
    assert rc == 0
    assert "numpy already imported" in capsys.readouterr().err


# ---------------------------------------------------------------- pattern

def test_pattern_command(tmp_path, capsys):
    from fibresr.reconstruct import mean_pixels_per_fibre

    out = tmp_path / "p.json"
    assert main(["pattern", "--size", "64", "--seed", "4", "--out", str(out)]) == 0
    assert "px/fibre" in capsys.readouterr().out
    pattern = FibrePattern.load(out)
    assert pattern.width == pattern.height == 64
    assert 6.0 <= mean_pixels_per_fibre(pattern) <= 8.0


def test_pattern_deterministic(tmp_path):
    a, b, c = (tmp_path / n for n in ("a.json", "b.json", "c.json"))
    main(["pattern", "--size", "48", "--seed", "4", "--out", str(a)])
    main(["pattern", "--size", "48", "--seed", "4", "--out", str(b)])
    main(["pattern", "--size", "48", "--seed", "5", "--out", str(c)])
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_pattern_spacing_flag(tmp_path):
    out = tmp_path / "p.json"
    assert main(["pattern", "--size", "48", "--spacing", "auto7",
                 "--out", str(out)]) == 0
    assert main(["pattern", "--size", "48", "--spacing", "9.5",
                 "--out", str(out)]) == 0
    assert main(["pattern", "--size", "48", "--spacing", "wide",
                 "--out", str(out)]) == 2
    assert main(["pattern", "--size", "48", "--width", "32", "--height", "40",
                 "--out", str(out)]) == 0
    assert FibrePattern.load(out).width == 32


# --------------------------------------------------------------- simulate

def test_simulate_layout(dataset):
    _, _, data = dataset
    assert (data / "pattern.json").is_file()
    assert (data / "config.txt").is_file()
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert [v["name"] for v in manifest["videos"]] == [
        "video_000", "video_001", "video_002",
    ]
    for v in manifest["videos"]:
        vdir = data / v["name"]
        for j in range(4):
            for role in ("lr", "hr", "mask"):
                assert (vdir / f"{j:03d}_{role}.png").is_file()
    assert manifest["noise"]["enabled"] is True


def test_simulate_triple_consistency(dataset):
    _, _, data = dataset
    lr = load_image(data / "video_000" / "000_lr.png",
                    data / "video_000" / "000_mask.png")
    hr = load_image(data / "video_000" / "000_hr.png",
                    data / "video_000" / "000_mask.png")
    assert lr.shape == hr.shape == (48, 48)
    assert np.array_equal(lr.mask, hr.mask)
    # reference is black outside the field of view
    assert np.all(hr.values[~hr.mask] == 0)


def test_simulate_noise_flag_changes_fidelity(dataset, tmp_path):
    _, src, _ = dataset
    on_dir, off_dir = tmp_path / "on", tmp_path / "off"
    for noise, out in (("on", on_dir), ("off", off_dir)):
        rc = main([
            "simulate", "--inputs", str(src), "--out", str(out),
            "--seed", "9", "--noise", noise,
            "--set", "sim.size=48", "--set", "sim.frames=1",
        ])
        assert rc == 0

    def first_psnr(d):
        lr = load_image(d / "video_000" / "000_lr.png",
                        d / "video_000" / "000_mask.png")
        hr = load_image(d / "video_000" / "000_hr.png",
                        d / "video_000" / "000_mask.png")
        return evaluate_pair(hr, lr)["psnr"]

    assert first_psnr(off_dir) > first_psnr(on_dir)


def test_simulate_reuses_pattern(dataset, tmp_path):
    _, src, data = dataset
    out = tmp_path / "again"
    rc = main([
        "simulate", "--inputs", str(src), "--out", str(out), "--seed", "1",
        "--pattern", str(data / "pattern.json"),
        "--set", "sim.size=48", "--set", "sim.frames=1",
    ])
    assert rc == 0
    assert (out / "pattern.json").read_bytes() == (data / "pattern.json").read_bytes()


def test_simulate_bad_inputs(tmp_path, capsys):
    assert main(["simulate", "--inputs", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "o")]) == 2
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["simulate", "--inputs", str(empty),
                 "--out", str(tmp_path / "o")]) == 2
    # a source smaller than sim.size is skipped; with none left the run fails
    small = tmp_path / "small"
    small.mkdir()
    save_image(small / "s.png", CartesianImage.from_array(np.full((8, 8), 0.5)))
    rc = main(["simulate", "--inputs", str(small), "--out", str(tmp_path / "o"),
               "--set", "sim.size=48"])
    assert rc == 2
    assert "smaller than sim.size" in capsys.readouterr().err


# ------------------------------------------------------------------ train

def test_train_zssr_outputs(dataset, tmp_path):
    _, _, data = dataset
    out = tmp_path / "run"
    rc = main(["train", "--mode", "zssr", "--data", str(data / "video_000"),
               "--out", str(out), "--seed", "3", *MICRO_SET])
    assert rc == 0
    params, state, meta = load_checkpoint(out / "model.ckpt")
    assert meta["epoch"] == 4 and meta["mode"] == "zssr"
    # 4-frame video at the default 0.1 fraction -> one pseudo crop,
    # plus one father per eval round
    assert meta["train_set_size"] == 3
    assert (out / "checkpoint_e00002.ckpt").is_file()
    assert (out / "checkpoint_e00004.ckpt").is_file()
    trace = (out / "loss_trace.csv").read_text().strip().splitlines()
    assert trace[0] == "epoch,loss,lr"
    assert len(trace) == 1 + 4
    assert (out / "config.txt").is_file()
    assert json.loads((out / "manifest.json").read_text())["n_inputs"] == 4


def test_train_reruns_bit_identical(dataset, tmp_path):
    _, _, data = dataset
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        rc = main(["train", "--mode", "zssr", "--data", str(data / "video_000"),
                   "--out", str(out), "--seed", "3", *MICRO_SET])
        assert rc == 0
        outs.append(out)
    a = load_checkpoint(outs[0] / "model.ckpt")[0]
    b = load_checkpoint(outs[1] / "model.ckpt")[0]
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert (outs[0] / "loss_trace.csv").read_bytes() == \
        (outs[1] / "loss_trace.csv").read_bytes()


def test_train_sisr(dataset, tmp_path):
    _, _, data = dataset
    out = tmp_path / "sisr"
    rc = main(["train", "--mode", "sisr", "--data", str(data),
               "--out", str(out), "--seed", "3",
               "--set", "train_videos=1", *MICRO_SET])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n_inputs"] == 4  # one training video of four pairs
    assert (out / "model.ckpt").is_file()


def test_train_errors(dataset, tmp_path):
    _, _, data = dataset
    assert main(["train", "--data", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "o"), *MICRO_SET]) == 2
    # a frame directory with no pattern file anywhere nearby
    bare = tmp_path / "bare"
    bare.mkdir()
    save_image(bare / "000_lr.png",
               CartesianImage.from_array(np.full((48, 48), 0.5)))
    assert main(["train", "--data", str(bare),
                 "--out", str(tmp_path / "o"), *MICRO_SET]) == 2
    assert main(["train", "--mode", "sisr", "--data", str(bare),
                 "--out", str(tmp_path / "o"), *MICRO_SET]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_code(dataset, tmp_path):
    _, _, data = dataset
    out = tmp_path / "div"
    rc = main(["train", "--mode", "zssr", "--data", str(data / "video_000"),
               "--out", str(out), "--seed", "3", *MICRO_SET,
               "--set", "lr0=1e8"])
    assert rc == 3
    assert (out / "diverged.ckpt").is_file()
    params, _, meta = load_checkpoint(out / "diverged.ckpt")
    assert meta["diverged"] is True


# ------------------------------------------------------------------ infer

def test_infer_identity_checkpoint(dataset, tmp_path):
    _, _, data = dataset
    ckpt = tmp_path / "id.ckpt"
    save_checkpoint(ckpt, init_network(0), meta={"mode": "zssr"})
    out = tmp_path / "sr"
    rc = main(["infer", "--checkpoint", str(ckpt),
               "--frames", str(data / "video_000"), "--out", str(out)])
    assert rc == 0
    for j in range(4):
        assert (out / f"{j:03d}_sr.png").is_file()
        assert (out / f"{j:03d}_mask.png").is_file()
    # identity network: outputs reproduce the inputs exactly
    src = load_image(data / "video_000" / "000_lr.png",
                     data / "video_000" / "000_mask.png")
    got = load_image(out / "000_sr.png", out / "000_mask.png")
    assert np.array_equal(src.values, got.values)
    assert np.array_equal(src.mask, got.mask)
    timing = (out / "timing.csv").read_text().strip().splitlines()
    assert timing[0] == "frame,seconds" and len(timing) == 5
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n_frames"] == 4
    assert manifest["mean_seconds_per_frame"] > 0


def test_infer_errors(dataset, tmp_path):
    _, _, data = dataset
    assert main(["infer", "--checkpoint", str(tmp_path / "nope.ckpt"),
                 "--frames", str(data / "video_000"),
                 "--out", str(tmp_path / "o")]) == 2
    ckpt = tmp_path / "id.ckpt"
    save_checkpoint(ckpt, init_network(0))
    assert main(["infer", "--checkpoint", str(ckpt),
                 "--frames", str(tmp_path / "nope"),
                 "--out", str(tmp_path / "o")]) == 2


# --------------------------------------------------------------- evaluate

@pytest.fixture()
def eval_dirs(dataset, tmp_path):
    """Prediction dir = the references themselves, renamed to *_sr.png."""
    _, _, data = dataset
    pred = tmp_path / "pred"
    pred.mkdir()
    vdir = data / "video_000"
    for j in range(4):
        (pred / f"{j:03d}_sr.png").write_bytes((vdir / f"{j:03d}_hr.png").read_bytes())
        (pred / f"{j:03d}_mask.png").write_bytes(
            (vdir / f"{j:03d}_mask.png").read_bytes())
    return pred, vdir


def test_evaluate_perfect_predictions(eval_dirs, tmp_path, capsys):
    pred, ref = eval_dirs
    out = tmp_path / "metrics"
    rc = main(["evaluate", "--pred", str(pred), "--ref", str(ref),
               "--out", str(out)])
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["psnr"]["mean"] == 100.0
    assert summary["ssim"]["mean"] == pytest.approx(1.0, abs=1e-9)
    assert summary["gmsd"]["mean"] == pytest.approx(0.0, abs=1e-9)
    assert summary["_corrupt_frames"] == 0
    lines = (out / "metrics.csv").read_text().strip().splitlines()
    assert lines[0].startswith("frame,") and len(lines) == 5
    assert all(line.endswith(",ok") for line in lines[1:])
    assert "psnr" in capsys.readouterr().out


def test_evaluate_flags_corrupt_frame(eval_dirs, tmp_path, capsys):
    pred, ref = eval_dirs
    (pred / "002_sr.png").write_bytes(b"not a png at all")
    out = tmp_path / "metrics"
    rc = main(["evaluate", "--pred", str(pred), "--ref", str(ref),
               "--out", str(out)])
    assert rc == 0
    assert "002_sr.png" in capsys.readouterr().err
    summary = json.loads((out / "summary.json").read_text())
    assert summary["_corrupt_frames"] == 1
    assert summary["psnr"]["n"] == 3
    lines = (out / "metrics.csv").read_text().strip().splitlines()
    assert sum(line.endswith(",corrupt") for line in lines) == 1


def test_evaluate_count_mismatch(eval_dirs, tmp_path):
    pred, ref = eval_dirs
    (pred / "003_sr.png").unlink()
    assert main(["evaluate", "--pred", str(pred), "--ref", str(ref),
                 "--out", str(tmp_path / "o")]) == 2
    assert main(["evaluate", "--pred", str(tmp_path / "nope"), "--ref", str(ref),
                 "--out", str(tmp_path / "o")]) == 2


def test_evaluate_rerun_byte_identical(eval_dirs, tmp_path):
    pred, ref = eval_dirs
    outs = []
    for name in ("m1", "m2"):
        out = tmp_path / name
        assert main(["evaluate", "--pred", str(pred), "--ref", str(ref),
                     "--out", str(out)]) == 0
        outs.append(out)
    for fname in ("summary.json", "metrics.csv"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


# ----------------------------------------------------------------- ablate

def test_ablate_micro_grid(dataset, tmp_path, capsys):
    _, _, data = dataset
    out = tmp_path / "ablation"
    rc = main(["ablate", "--data", str(data), "--out", str(out),
               "--seed", "5", *MICRO_SET,
               "--set", "train_videos=1", "--set", "eval_stride=2"])
    assert rc == 0
    printed = capsys.readouterr().out
    for name in ("H1", "H2", "H3", "H4"):
        assert name in printed

    table = (out / "ablation.csv").read_text().strip().splitlines()
    assert len(table) == 1 + 7
    rows = [line.split(",")[0] for line in table[1:]]
    assert rows == ["baseline", "bicubic-clean", "bicubic-noise",
                    "voronoi-clean", "voronoi-noise", "voronoi-noise-video",
                    "sisr"]
    for row in rows:
        assert (out / f"metrics_{row}.csv").is_file()

    hyp = json.loads((out / "hypotheses.json").read_text())
    assert set("H1 H2 H3 H4".split()) <= set(hyp)
    for name in ("H1", "H2", "H3", "H4"):
        assert isinstance(hyp[name]["pass"], bool)
    assert hyp["H1"]["metric"] == "psnr"
    assert 0.0 <= hyp["H1"]["p"] <= 1.0
    # two eval videos x 4 frames at stride 2
    assert hyp["n_paired_frames"] == 4
    assert hyp["train_videos"] == ["video_002"]


def test_ablate_rejects_bad_dataset(tmp_path, dataset):
    _, _, data = dataset
    bare = tmp_path / "bare"
    bare.mkdir()
    assert main(["ablate", "--data", str(bare),
                 "--out", str(tmp_path / "o")]) == 2
    # all videos would be reserved for supervised training
    assert main(["ablate", "--data", str(data), "--out", str(tmp_path / "o"),
                 "--set", "train_videos=3"]) == 2


# ------------------------------------------------------------ entry point

def test_module_entry_point(tmp_path):
    import subprocess
    import sys as _sys

    out = tmp_path / "p.json"
    proc = subprocess.run(
        [_sys.executable, "-m", "fibresr.cli", "pattern", "--size", "32",
         "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert out.is_file()
