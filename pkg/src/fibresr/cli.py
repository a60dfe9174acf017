"""Command-line front end.

Subcommands::

    pattern    generate a fibre pattern file
    simulate   synthesise bundle acquisitions from clean source images
    train      zero-shot (zssr) or supervised (sisr) training
    infer      super-resolve frames with a trained checkpoint
    evaluate   reference metrics for paired prediction/reference dirs
    ablate     the full model grid + hypothesis tests on a synthetic dataset

Every command accepts ``--seed``, ``--threads``, ``--preset {desk,paper}``,
``--config FILE`` and repeatable ``--set key=value`` overrides, and writes a
resolved-config snapshot plus a manifest into its output directory, so any
run can be replayed exactly. Exit codes: 0 success, 2 usage/configuration
error, 3 numeric failure (training divergence, no valid results).

numpy is imported lazily (after ``--threads`` is applied to the BLAS
environment), which is why all fibresr imports live inside the handlers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

ROW_NAMES = (
    "baseline",
    "bicubic-clean",
    "bicubic-noise",
    "voronoi-clean",
    "voronoi-noise",
    "voronoi-noise-video",
    "sisr",
)


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument(
        "--threads", type=int, default=None, help="BLAS/OpenMP thread count"
    )
    parser.add_argument(
        "--preset", choices=("desk", "paper"), default=None, help="config preset"
    )
    parser.add_argument("--config", default=None, help="config file (key = value)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fibresr",
        description="Zero-shot super-resolution for fibre-bundle endomicroscopy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pattern", help="generate a fibre pattern file")
    p.add_argument("--size", type=int, default=None, help="square grid side in px")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument(
        "--spacing",
        default=None,
        help="lattice spacing in px, or 'auto7' for 7 px per fibre",
    )
    p.add_argument("--jitter", type=float, default=None, help="jitter fraction")
    p.add_argument("--out", default="pattern.json", help="output pattern file")
    _common_flags(p)

    p = sub.add_parser("simulate", help="synthesise acquisitions from clean images")
    p.add_argument("--inputs", required=True, help="directory of grayscale PNGs")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--pattern", default=None, help="existing pattern file to reuse")
    p.add_argument(
        "--noise",
        default=None,
        choices=("on", "off", "synthetic", "original"),
        help="noise switch or preset (default: config)",
    )
    _common_flags(p)

    p = sub.add_parser("train", help="train a super-resolution network")
    p.add_argument("--mode", choices=("zssr", "sisr"), default="zssr")
    p.add_argument(
        "--data",
        required=True,
        help="video directory (zssr) or dataset directory (sisr)",
    )
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--pattern", default=None, help="pattern file (zssr)")
    p.add_argument("--epochs", type=int, default=None, help="override epochs")
    _common_flags(p)

    p = sub.add_parser("infer", help="super-resolve frames with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", required=True, help="directory of input frames")
    p.add_argument("--out", required=True)
    _common_flags(p)

    p = sub.add_parser("evaluate", help="reference metrics for paired directories")
    p.add_argument("--pred", required=True, help="prediction directory")
    p.add_argument("--ref", required=True, help="reference directory")
    p.add_argument("--out", required=True)
    _common_flags(p)

    p = sub.add_parser("ablate", help="model grid + hypothesis tests")
    p.add_argument("--data", required=True, help="dataset from 'simulate'")
    p.add_argument("--out", required=True)
    _common_flags(p)

    return parser


def _parse_overrides(pairs: list[str]) -> dict:
    from .errors import ConfigurationError

    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {pair!r}")
        key, raw = pair.split("=", 1)
        out[key.strip()] = raw.strip()
    return out


def _resolve(args, extra_overrides: dict | None = None) -> dict:
    """Resolved config for a command (defaults < preset < file < --set < flags)."""
    from .config import CONFIG_SCHEMA, _coerce, resolve_config

    overrides = {
        key: _coerce(key, raw) for key, raw in _parse_overrides(args.overrides).items()
    }
    for key, value in (extra_overrides or {}).items():
        if value is not None:
            if key not in CONFIG_SCHEMA:
                from .errors import ConfigurationError

                raise ConfigurationError(f"unknown configuration key {key!r}")
            overrides[key] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    return resolve_config(args.preset, args.config, overrides)


def _write_run_files(out_dir: Path, resolved: dict, manifest: dict) -> None:
    from .config import format_config

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(format_config(resolved))
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _spacing_value(resolved: dict):
    spacing = resolved["pattern.spacing"]
    return None if spacing == 0 else spacing


def _derived_seed(*path: int) -> int:
    """Stable child seed for a (seed, index, ...) path."""
    import numpy as np

    return int(np.random.SeedSequence(list(path)).generate_state(1)[0] % (2**31 - 1))


# --- pattern ----------------------------------------------------------------


def cmd_pattern(args) -> int:
    from .errors import ConfigurationError
    from .geometry import generate_quasi_hex_pattern
    from .reconstruct import mean_pixels_per_fibre

    extra = {}
    if args.spacing is not None:
        if args.spacing == "auto7":
            extra["pattern.spacing"] = 0.0
        else:
            try:
                extra["pattern.spacing"] = float(args.spacing)
            except ValueError:
                raise ConfigurationError(
                    f"--spacing must be a number or 'auto7', got {args.spacing!r}"
                ) from None
    if args.jitter is not None:
        extra["pattern.jitter"] = args.jitter
    resolved = _resolve(args, extra)

    width = args.width or args.size or resolved["sim.size"]
    height = args.height or args.size or resolved["sim.size"]
    pattern = generate_quasi_hex_pattern(
        width,
        height,
        spacing=_spacing_value(resolved),
        jitter_frac=resolved["pattern.jitter"],
        seed=resolved["seed"],
    )
    pattern.save(args.out)
    ppf = mean_pixels_per_fibre(pattern)
    print(f"wrote {args.out}: {pattern.n_fibres} fibres, {ppf:.2f} px/fibre")
    return 0


# --- simulate ---------------------------------------------------------------


def _noise_from_config(resolved: dict):
    from .degrade import NoiseParams

    return NoiseParams(
        sigma_add=resolved["noise.sigma_add"],
        sigma_mult=resolved["noise.sigma_mult"],
        jitter_half_width=resolved["noise.jitter_half_width"],
        enabled=resolved["noise.enabled"],
    )


def cmd_simulate(args) -> int:
    import numpy as np

    from .degrade import VoronoiDegrader
    from .errors import ConfigurationError, ImageIOError
    from .geometry import FibrePattern, generate_quasi_hex_pattern
    from .images import CartesianImage, load_png, save_image

    extra = {}
    if args.noise in ("on", "off"):
        extra["noise.enabled"] = args.noise == "on"
    elif args.noise in ("synthetic", "original"):
        extra["noise.preset"] = args.noise
    resolved = _resolve(args, extra)
    size = resolved["sim.size"]
    n_frames = resolved["sim.frames"]
    drift = resolved["sim.drift"]
    noise = _noise_from_config(resolved)

    in_dir = Path(args.inputs)
    if not in_dir.is_dir():
        raise ConfigurationError(f"input directory not found: {in_dir}")
    sources = sorted(in_dir.glob("*.png"))
    if not sources:
        raise ConfigurationError(f"no PNG images in {in_dir}")

    if args.pattern:
        pattern = FibrePattern.load(args.pattern)
    else:
        pattern = generate_quasi_hex_pattern(
            size,
            size,
            spacing=_spacing_value(resolved),
            jitter_frac=resolved["pattern.jitter"],
            seed=resolved["seed"],
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pattern.save(out_dir / "pattern.json")
    degrader = VoronoiDegrader(pattern, size, size)

    videos = []
    failures = 0
    for v_idx, src_path in enumerate(sources):
        try:
            source = load_png(src_path)
        except ImageIOError as exc:
            print(f"warning: skipping {src_path.name}: {exc}", file=sys.stderr)
            failures += 1
            continue
        if source.shape[0] < size or source.shape[1] < size:
            print(
                f"warning: skipping {src_path.name}: "
                f"{source.shape[1]}x{source.shape[0]} smaller than sim.size {size}",
                file=sys.stderr,
            )
            failures += 1
            continue
        rng = np.random.default_rng(
            np.random.SeedSequence([resolved["seed"], v_idx])
        )
        max_y = source.shape[0] - size
        max_x = source.shape[1] - size
        step = max(1, int(round(drift)))
        # integer random-walk crop offsets, clipped to the valid region
        oy, ox = max_y // 2, max_x // 2
        offsets = []
        for _ in range(n_frames):
            offsets.append((oy, ox))
            oy = int(np.clip(oy + rng.integers(-step, step + 1), 0, max_y))
            ox = int(np.clip(ox + rng.integers(-step, step + 1), 0, max_x))
        frame_seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=n_frames)]

        video_name = f"video_{v_idx:03d}"
        video_dir = out_dir / video_name
        video_dir.mkdir(exist_ok=True)
        for j, ((oy_j, ox_j), fseed) in enumerate(zip(offsets, frame_seeds)):
            hr = CartesianImage.from_array(
                source[oy_j : oy_j + size, ox_j : ox_j + size]
            )
            frame = degrader.degrade(hr, noise, fseed)
            ref = CartesianImage.from_array(
                np.where(frame.mask, hr.values, 0.0), mask=frame.mask.copy()
            )
            save_image(
                video_dir / f"{j:03d}_lr.png",
                frame,
                mask_path=video_dir / f"{j:03d}_mask.png",
            )
            save_image(video_dir / f"{j:03d}_hr.png", ref)
        videos.append(
            {
                "name": video_name,
                "source": src_path.name,
                "n_frames": n_frames,
                "frame_seeds": frame_seeds,
                "offsets": offsets,
            }
        )

    if not videos:
        raise ConfigurationError("all input images failed to load")
    manifest = {
        "command": "simulate",
        "seed": resolved["seed"],
        "pattern": "pattern.json",
        "n_fibres": pattern.n_fibres,
        "size": size,
        "videos": videos,
        "noise": {
            "enabled": noise.enabled,
            "sigma_add": noise.sigma_add,
            "sigma_mult": noise.sigma_mult,
            "jitter_half_width": noise.jitter_half_width,
        },
        "skipped_sources": failures,
    }
    _write_run_files(out_dir, resolved, manifest)
    print(f"wrote {len(videos)} video(s) x {n_frames} frame triple(s) to {out_dir}")
    return 0


# --- frame-directory helpers ------------------------------------------------


def _list_frames(directory: Path, role: str) -> list[Path]:
    """Frame PNGs of a directory, preferring the given role suffix."""
    tagged = sorted(directory.glob(f"*_{role}.png"))
    if tagged:
        return tagged
    skip = ("_mask.png", "_lr.png", "_hr.png", "_sr.png")
    return sorted(
        p
        for p in directory.glob("*.png")
        if not any(p.name.endswith(s) for s in skip)
    )


def _mask_path_for(frame_path: Path) -> Path | None:
    stem = frame_path.name[: -len(".png")]
    for suffix in ("_lr", "_hr", "_sr"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
            break
    candidate = frame_path.parent / f"{stem}_mask.png"
    return candidate if candidate.is_file() else None


def _load_frame(path: Path):
    from .images import load_image

    return load_image(path, mask_path=_mask_path_for(path))


def _load_video(video_dir: Path):
    """(lr_frames, hr_refs) lists for one simulated video directory."""
    from .errors import ConfigurationError

    lr_paths = sorted(video_dir.glob("*_lr.png"))
    if not lr_paths:
        raise ConfigurationError(f"no *_lr.png frames in {video_dir}")
    lrs = [_load_frame(p) for p in lr_paths]
    hrs = []
    for p in lr_paths:
        hp = p.parent / p.name.replace("_lr.png", "_hr.png")
        hrs.append(_load_frame(hp) if hp.is_file() else None)
    return lrs, hrs


def _find_pattern(args_pattern, data_dir: Path):
    from .errors import ConfigurationError
    from .geometry import FibrePattern

    if args_pattern:
        return FibrePattern.load(args_pattern)
    for candidate in (data_dir / "pattern.json", data_dir.parent / "pattern.json"):
        if candidate.is_file():
            return FibrePattern.load(candidate)
    raise ConfigurationError(
        f"no pattern file given and none found near {data_dir}; pass --pattern"
    )


def _square_frames(frames, manifest_notes: list):
    """Centre-crop non-square frames to the largest square (logged)."""
    out = []
    for i, f in enumerate(frames):
        h, w = f.shape
        if h != w:
            side = min(h, w)
            manifest_notes.append(f"frame {i}: centre-cropped {w}x{h} -> {side}x{side}")
            f = f.crop_center(side)
        out.append(f)
    return out


# --- train ------------------------------------------------------------------


def _write_trace(path: Path, trace) -> None:
    lines = ["epoch,loss,lr"]
    for epoch, loss_val, lr in trace:
        lines.append(f"{epoch},{loss_val:.10g},{lr:.10g}")
    path.write_text("\n".join(lines) + "\n")


def cmd_train(args) -> int:
    from .config import train_config_from
    from .errors import ConfigurationError, TrainingDivergedError
    from .network import save_checkpoint
    from .zssr import train_supervised, train_zero_shot

    extra = {"epochs": args.epochs} if args.epochs is not None else {}
    resolved = _resolve(args, extra)
    config = train_config_from(resolved)
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise ConfigurationError(f"data directory not found: {data_dir}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    notes: list[str] = []

    def on_eval(epoch, params, state):
        save_checkpoint(
            out_dir / f"checkpoint_e{epoch:05d}.ckpt",
            params,
            state=state,
            meta={"epoch": epoch, "mode": args.mode, "seed": resolved["seed"]},
        )

    t0 = time.perf_counter()
    try:
        if args.mode == "zssr":
            pattern = _find_pattern(args.pattern, data_dir)
            frames = [_load_frame(p) for p in _list_frames(data_dir, "lr")]
            if not frames:
                raise ConfigurationError(f"no frames found in {data_dir}")
            frames = _square_frames(frames, notes)
            result = train_zero_shot(frames, pattern, config, on_eval=on_eval)
            n_inputs = len(frames)
        else:
            video_dirs = sorted(d for d in data_dir.glob("video_*") if d.is_dir())
            if not video_dirs:
                raise ConfigurationError(f"no video_* directories in {data_dir}")
            n_train = resolved["train_videos"]
            pairs = []
            for video_dir in video_dirs[-n_train:]:
                lrs, hrs = _load_video(video_dir)
                for lr_img, hr_img in zip(lrs, hrs):
                    if hr_img is None:
                        raise ConfigurationError(
                            f"{video_dir}: sisr mode needs *_hr.png references"
                        )
                    pairs.append((lr_img, hr_img))
            if not pairs:
                raise ConfigurationError("no (lr, hr) pairs found")
            result = train_supervised(pairs, config, on_eval=on_eval)
            n_inputs = len(pairs)
    except TrainingDivergedError as exc:
        if exc.params is not None:
            save_checkpoint(
                out_dir / "diverged.ckpt",
                exc.params,
                state=exc.state,
                meta={"epoch": exc.epoch, "mode": args.mode, "diverged": True},
            )
        print(f"error: {exc} (last checkpoint retained)", file=sys.stderr)
        return 3

    save_checkpoint(
        out_dir / "model.ckpt",
        result.params,
        state=result.state,
        meta={
            "epoch": config.epochs,
            "mode": args.mode,
            "seed": resolved["seed"],
            "train_set_size": result.train_set_size,
        },
    )
    _write_trace(out_dir / "loss_trace.csv", result.trace)
    manifest = {
        "command": "train",
        "mode": args.mode,
        "data": str(data_dir),
        "seed": resolved["seed"],
        "epochs": config.epochs,
        "n_inputs": n_inputs,
        "train_set_size": result.train_set_size,
        "seconds": round(time.perf_counter() - t0, 3),
        "notes": notes,
    }
    _write_run_files(out_dir, resolved, manifest)
    print(
        f"trained {args.mode} for {config.epochs} epochs "
        f"({result.seconds:.1f}s); outputs in {out_dir}"
    )
    return 0


# --- infer ------------------------------------------------------------------


def cmd_infer(args) -> int:
    from .errors import ConfigurationError
    from .images import save_image
    from .network import load_checkpoint
    from .zssr import predict_median8

    resolved = _resolve(args)
    params, _, meta = load_checkpoint(args.checkpoint)
    frames_dir = Path(args.frames)
    if not frames_dir.is_dir():
        raise ConfigurationError(f"frames directory not found: {frames_dir}")
    frame_paths = _list_frames(frames_dir, "lr")
    if not frame_paths:
        raise ConfigurationError(f"no frames found in {frames_dir}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    notes: list[str] = []

    timings = []
    for path in frame_paths:
        frame = _load_frame(path)
        frame = _square_frames([frame], notes)[0]
        t0 = time.perf_counter()
        pred = predict_median8(params, frame)
        dt = time.perf_counter() - t0
        stem = path.name[: -len(".png")]
        if stem.endswith("_lr"):
            stem = stem[: -len("_lr")]
        save_image(
            out_dir / f"{stem}_sr.png",
            pred,
            mask_path=out_dir / f"{stem}_mask.png",
        )
        timings.append((path.name, dt))

    lines = ["frame,seconds"]
    for name, dt in timings:
        lines.append(f"{name},{dt:.4f}")
    (out_dir / "timing.csv").write_text("\n".join(lines) + "\n")
    mean_dt = sum(dt for _, dt in timings) / len(timings)
    manifest = {
        "command": "infer",
        "checkpoint": str(args.checkpoint),
        "checkpoint_meta": meta,
        "frames": str(frames_dir),
        "n_frames": len(timings),
        "mean_seconds_per_frame": round(mean_dt, 4),
        "notes": notes,
    }
    _write_run_files(out_dir, resolved, manifest)
    print(f"super-resolved {len(timings)} frame(s), {mean_dt:.3f}s/frame -> {out_dir}")
    return 0


# --- evaluate ---------------------------------------------------------------


def cmd_evaluate(args) -> int:
    from .errors import ConfigurationError, FibreSRError
    from .iqa import METRIC_FUNCTIONS, MetricReport, evaluate_pair

    resolved = _resolve(args)
    pred_dir = Path(args.pred)
    ref_dir = Path(args.ref)
    for d in (pred_dir, ref_dir):
        if not d.is_dir():
            raise ConfigurationError(f"directory not found: {d}")
    pred_paths = _list_frames(pred_dir, "sr")
    ref_paths = _list_frames(ref_dir, "hr")
    if len(pred_paths) != len(ref_paths):
        raise ConfigurationError(
            f"{len(pred_paths)} predictions vs {len(ref_paths)} references"
        )
    if not pred_paths:
        raise ConfigurationError("no frames to evaluate")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = MetricReport()
    metric_names = list(METRIC_FUNCTIONS)
    csv_lines = [",".join(["frame"] + metric_names + ["status"])]
    n_corrupt = 0
    for pred_path, ref_path in zip(pred_paths, ref_paths):
        ref = _load_frame(ref_path)
        try:
            pred = _load_frame(pred_path)
            metrics = evaluate_pair(ref, pred)
        except FibreSRError as exc:
            print(f"warning: {pred_path.name}: {exc}", file=sys.stderr)
            csv_lines.append(
                ",".join([pred_path.name] + [""] * len(metric_names) + ["corrupt"])
            )
            n_corrupt += 1
            continue
        report.add(pred_path.name, metrics)
        csv_lines.append(
            ",".join(
                [pred_path.name]
                + [f"{metrics[m]:.10g}" for m in metric_names]
                + ["ok"]
            )
        )
    (out_dir / "metrics.csv").write_text("\n".join(csv_lines) + "\n")
    if not report.rows:
        print("error: no valid prediction/reference pairs", file=sys.stderr)
        return 3
    summary = report.summary()
    summary["_corrupt_frames"] = n_corrupt
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    manifest = {
        "command": "evaluate",
        "pred": str(pred_dir),
        "ref": str(ref_dir),
        "n_frames": len(pred_paths),
        "n_corrupt": n_corrupt,
    }
    _write_run_files(out_dir, resolved, manifest)
    for metric in metric_names:
        stats = summary[metric]
        print(f"{metric}: mean {stats['mean']:.4f} (n={stats['n']})")
    return 0


# --- ablate -----------------------------------------------------------------


def _row_train_config(base, row: str, seed: int):
    """Training configuration for one grid row."""
    from dataclasses import replace

    degrade = replace(
        base.degrade,
        kernel="bicubic" if row.startswith("bicubic") else "voronoi",
        noise=replace(base.degrade.noise, enabled="clean" not in row),
        seed=seed,
    )
    return replace(base, degrade=degrade, seed=seed)


def run_ablation(data_dir: Path, out_dir: Path, resolved: dict) -> dict:
    """Train and evaluate the model grid; returns the hypotheses dict."""
    from .config import train_config_from
    from .errors import ConfigurationError
    from .geometry import FibrePattern
    from .iqa import METRIC_FUNCTIONS, MetricReport, evaluate_pair
    from .stats import paired_ttest
    from .zssr import predict_median8, train_supervised, train_zero_shot

    manifest_path = data_dir / "manifest.json"
    if not manifest_path.is_file():
        raise ConfigurationError(f"not a simulate dataset (no manifest): {data_dir}")
    dataset = json.loads(manifest_path.read_text())
    pattern = FibrePattern.load(data_dir / dataset["pattern"])
    video_names = [v["name"] for v in dataset["videos"]]
    n_train_videos = resolved["train_videos"]
    if len(video_names) < n_train_videos + 1:
        raise ConfigurationError(
            f"need at least {n_train_videos + 1} videos "
            f"({n_train_videos} reserved for sisr), got {len(video_names)}"
        )
    eval_names = video_names[: len(video_names) - n_train_videos]
    train_names = video_names[len(video_names) - n_train_videos :]
    stride = resolved["eval_stride"]
    base_config = train_config_from(resolved)
    base_seed = resolved["seed"]

    out_dir.mkdir(parents=True, exist_ok=True)
    eval_videos = []
    for name in eval_names:
        lrs, hrs = _load_video(data_dir / name)
        if any(h is None for h in hrs):
            raise ConfigurationError(f"{name}: missing *_hr.png references")
        eval_idx = list(range(0, len(lrs), stride))
        eval_videos.append((name, lrs, hrs, eval_idx))

    reports: dict[str, MetricReport] = {}
    timings: dict[str, float] = {}

    sisr_params = None
    for row_idx, row in enumerate(ROW_NAMES):
        t_row = time.perf_counter()
        report = MetricReport()
        if row == "sisr":
            pairs = []
            for name in train_names:
                lrs, hrs = _load_video(data_dir / name)
                if any(h is None for h in hrs):
                    raise ConfigurationError(f"{name}: missing *_hr.png references")
                pairs.extend(zip(lrs, hrs))
            config = _row_train_config(
                base_config, row, _derived_seed(base_seed, row_idx)
            )
            sisr_params = train_supervised(pairs, config).params

        for v_idx, (name, lrs, hrs, eval_idx) in enumerate(eval_videos):
            if row == "baseline":
                predict = lambda f: f
            elif row == "sisr":
                predict = lambda f: predict_median8(sisr_params, f)
            else:
                # one seed per video, shared across rows: paired comparisons
                # then isolate the kernel/noise/frame-count contrast from
                # initialisation and sampling luck (common random numbers)
                config = _row_train_config(
                    base_config, row, _derived_seed(base_seed, v_idx)
                )
                train_frames = lrs if row.endswith("video") else [lrs[0]]
                params = train_zero_shot(train_frames, pattern, config).params
                predict = lambda f, p=params: predict_median8(p, f)
            for j in eval_idx:
                pred = predict(lrs[j])
                report.add(f"{name}/{j:03d}", evaluate_pair(hrs[j], pred))
        reports[row] = report
        report.to_csv(out_dir / f"metrics_{row}.csv")
        timings[row] = round(time.perf_counter() - t_row, 3)

    # aggregate table
    lines = ["model," + ",".join(f"{m}_mean,{m}_std" for m in METRIC_FUNCTIONS) + ",n"]
    for row in ROW_NAMES:
        s = reports[row].summary()
        cells = [row]
        for m in METRIC_FUNCTIONS:
            cells.append(f"{s[m]['mean']:.6g}")
            cells.append(f"{s[m]['std']:.6g}")
        cells.append(str(s["psnr"]["n"]))
        lines.append(",".join(cells))
    (out_dir / "ablation.csv").write_text("\n".join(lines) + "\n")

    def mean(row, metric):
        return float(reports[row].values(metric).mean())

    def ttest(row_a, row_b, metric):
        return paired_ttest(reports[row_a].values(metric), reports[row_b].values(metric))

    h1 = ttest("voronoi-noise", "bicubic-noise", "psnr")
    h2_psnr = ttest("voronoi-noise", "voronoi-clean", "psnr")
    h2_l1 = ttest("voronoi-noise", "voronoi-clean", "l1")
    h3_psnr_diff = mean("voronoi-noise-video", "psnr") - mean("voronoi-noise", "psnr")
    h3_ssim_diff = mean("voronoi-noise-video", "ssim") - mean("voronoi-noise", "ssim")
    h3_gmsd_diff = mean("voronoi-noise-video", "gmsd") - mean("voronoi-noise", "gmsd")
    h4_diff = mean("sisr", "psnr") - mean("voronoi-noise", "psnr")

    hypotheses = {
        "H1": {
            "claim": "voronoi-kernel ZSSR beats bicubic-kernel ZSSR on PSNR",
            "comparison": ["voronoi-noise", "bicubic-noise"],
            "metric": "psnr",
            "mean_diff_db": h1.mean_diff,
            "margin_db": 0.5,
            "t": h1.statistic,
            "p": h1.pvalue,
            "pass": bool(h1.mean_diff >= 0.5 and h1.pvalue < 0.05),
        },
        "H2": {
            "claim": "noise-aware training beats noise-free training on noisy input",
            "comparison": ["voronoi-noise", "voronoi-clean"],
            "psnr": {
                "mean_diff": h2_psnr.mean_diff,
                "t": h2_psnr.statistic,
                "p": h2_psnr.pvalue,
            },
            "l1": {
                "mean_diff": h2_l1.mean_diff,
                "t": h2_l1.statistic,
                "p": h2_l1.pvalue,
            },
            "pass": bool(
                h2_psnr.mean_diff > 0
                and h2_psnr.pvalue < 0.05
                and h2_l1.mean_diff < 0
                and h2_l1.pvalue < 0.05
            ),
        },
        "H3": {
            "claim": "multi-frame training helps, but only slightly",
            "comparison": ["voronoi-noise-video", "voronoi-noise"],
            "psnr_diff_db": h3_psnr_diff,
            "ssim_diff": h3_ssim_diff,
            "gmsd_diff": h3_gmsd_diff,
            "pass": bool(
                h3_ssim_diff >= 0
                and h3_gmsd_diff <= 0
                and 0.0 <= h3_psnr_diff <= 1.5
            ),
        },
        "H4": {
            "claim": "supervised SISR is at least as good as zero-shot",
            "comparison": ["sisr", "voronoi-noise"],
            "psnr_diff_db": h4_diff,
            "pass": bool(h4_diff >= 0),
        },
        "timings_seconds": timings,
        "eval_videos": eval_names,
        "train_videos": train_names,
        "n_paired_frames": len(reports["baseline"].rows),
    }
    (out_dir / "hypotheses.json").write_text(
        json.dumps(hypotheses, indent=1, sort_keys=True)
    )
    return hypotheses


def cmd_ablate(args) -> int:
    resolved = _resolve(args)
    data_dir = Path(args.data)
    out_dir = Path(args.out)
    t0 = time.perf_counter()
    hypotheses = run_ablation(data_dir, out_dir, resolved)
    manifest = {
        "command": "ablate",
        "data": str(data_dir),
        "seed": resolved["seed"],
        "seconds": round(time.perf_counter() - t0, 3),
    }
    _write_run_files(out_dir, resolved, manifest)
    for name in ("H1", "H2", "H3", "H4"):
        h = hypotheses[name]
        status = "pass" if h["pass"] else "FAIL"
        print(f"{name}: {status} — {h['claim']}")
    return 0


# --- entry point ------------------------------------------------------------

_HANDLERS = {
    "pattern": cmd_pattern,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        if "numpy" in sys.modules:
            print(
                "warning: numpy already imported; --threads may not take effect",
                file=sys.stderr,
            )
        for var in _THREAD_ENV_VARS:
            os.environ[var] = str(args.threads)

    from .errors import ConfigurationError, FibreSRError, TrainingDivergedError

    try:
        return _HANDLERS[args.command](args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FibreSRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
