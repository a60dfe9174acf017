"""Flat key=value configuration files, presets, and typed resolution.

File format: one ``key = value`` per line, ``#`` starts a comment, blank
lines ignored. Keys are flat with dotted namespaces. The full schema (keys
and types) is CONFIG_SCHEMA below; unknown keys are rejected so typos fail
loudly. Booleans accept true/false/1/0/yes/no.

Resolution order: package defaults, then a named preset, then the config
file, then explicit overrides (CLI flags). Every run directory receives a
snapshot of the fully resolved configuration in the same format, which can
be passed back through ``--config`` to replay the run.
"""

from __future__ import annotations

from pathlib import Path

from .degrade import DegradeConfig, NoiseParams, NOISE_PRESETS
from .errors import ConfigurationError
from .loss import LossConfig
from .zssr import ScheduleConfig, TrainConfig

# key -> (type tag, default, help)
CONFIG_SCHEMA = {
    "seed": ("int", 0, "master seed for pattern jitter, training, and noise"),
    "epochs": ("int", 1000, "training iterations (one batch each)"),
    "eval_every": ("int", 100, "epochs between father evaluations; must divide epochs"),
    "batch_size": ("int", 8, "training items per iteration"),
    "crop_size": ("int", 340, "training crop side; shrunk to the largest even fit"),
    "frames_fraction": ("float", 0.1, "leading share of video frames used for training"),
    "pseudo_factor": ("int", 2, "pseudo-HR grid scale divisor"),
    "weight_decay": ("float", 0.0, "L2 penalty on conv weights; 0 disables"),
    "kernel": ("str", "voronoi", "downscaling kernel: voronoi or bicubic"),
    "bicubic_scale": ("int", 3, "bicubic kernel scale factor (>= 2)"),
    "noise.preset": ("str", "", "named noise preset: synthetic or original"),
    "noise.enabled": ("bool", True, "apply acquisition noise during degradation"),
    "noise.sigma_add": ("float", 0.03, "additive noise sigma"),
    "noise.sigma_mult": ("float", 0.05, "multiplicative noise sigma"),
    "noise.jitter_half_width": ("float", 0.025, "per-frame uniform sigma jitter half-width"),
    "loss.lambda_l1": ("float", 5.0, "weight of the L1 term"),
    "loss.perceptual": ("bool", True, "enable the perceptual feature term"),
    "lr0": ("float", 1e-3, "initial learning rate"),
    "decay_rate": ("float", 0.95, "learning-rate decay factor"),
    "decay_steps": ("int", 1000, "steps per decay factor application"),
    "lr_floor": ("float", 1e-7, "learning-rate floor"),
    "extractor_seed": ("int", 0, "seed of the builtin perceptual extractor"),
    "extractor_path": ("str", "", "optional extractor weights file"),
    "pattern.spacing": ("float", 0.0, "fibre lattice spacing in px; 0 = auto (7 px/fibre)"),
    "pattern.jitter": ("float", 0.2, "lattice jitter fraction"),
    "sim.size": ("int", 512, "synthetic frame side in px"),
    "sim.frames": ("int", 60, "frames per synthetic video"),
    "sim.drift": ("float", 1.5, "per-frame random-walk drift in px"),
    "eval_stride": ("int", 1, "evaluate every k-th frame in ablations"),
    "train_videos": ("int", 1, "trailing videos reserved for supervised training"),
}

PRESETS = {
    # desk: minutes-scale runs on a laptop core; used by the acceptance suite
    "desk": {
        "epochs": 240,
        # 20 self-supervised additions per run; at this cadence the video
        # row's extra training frames add coverage instead of drowning in
        # first-frame predictions
        "eval_every": 12,
        "batch_size": 4,
        "crop_size": 48,
        "sim.size": 128,
        # long drifting videos: the 10% training fraction is then 10 frames
        # with genuinely different content, as in a real probe sweep
        "sim.frames": 100,
        "sim.drift": 8.0,
        "eval_stride": 5,
        # strongly irregular lattice, as in real bundles; the voronoi-vs-
        # bicubic contrast lives in exactly that irregularity
        "pattern.jitter": 0.35,
        # strong (original-data strength) noise: at desk scale the weak
        # synthetic noise leaves the model grid within a fraction of a dB;
        # the directional contrasts need a real denoising problem
        "noise.sigma_add": 0.1,
        "noise.sigma_mult": 0.5,
    },
    # paper: full-scale settings from the reference experiments
    "paper": {
        "epochs": 1000,
        "eval_every": 100,
        "batch_size": 8,
        "crop_size": 340,
        "sim.size": 512,
        "sim.frames": 60,
        "eval_stride": 1,
    },
}


def _coerce(key: str, raw: str):
    if key not in CONFIG_SCHEMA:
        raise ConfigurationError(f"unknown configuration key {key!r}")
    kind = CONFIG_SCHEMA[key][0]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {exc}") from exc


def parse_config_text(text: str) -> dict:
    """Parse key = value lines into a typed dict (schema-checked)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, raw = stripped.split("=", 1)
        out[key.strip()] = _coerce(key.strip(), raw)
    return out


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    return parse_config_text(p.read_text())


def _apply_layer(resolved: dict, layer: dict) -> None:
    """Fold one configuration layer into ``resolved``.

    A ``noise.preset`` named in the layer expands to its sigma fields first,
    so explicit sigma values in the same or a later layer win over it.
    """
    name = layer.get("noise.preset")
    if name:
        if name not in NOISE_PRESETS:
            raise ConfigurationError(
                f"unknown noise preset {name!r}; choose from {sorted(NOISE_PRESETS)}"
            )
        base = NOISE_PRESETS[name]
        resolved["noise.preset"] = name
        resolved["noise.sigma_add"] = base.sigma_add
        resolved["noise.sigma_mult"] = base.sigma_mult
        resolved["noise.jitter_half_width"] = base.jitter_half_width
    for key, value in layer.items():
        if key == "noise.preset":
            continue
        if key not in CONFIG_SCHEMA:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        if value is not None:
            resolved[key] = value


def resolve_config(
    preset: str | None = None,
    config_file=None,
    overrides: dict | None = None,
) -> dict:
    """Defaults < preset < file < overrides, all schema-checked."""
    resolved = {k: spec[1] for k, spec in CONFIG_SCHEMA.items()}
    if preset:
        if preset not in PRESETS:
            raise ConfigurationError(
                f"unknown preset {preset!r}; choose from {sorted(PRESETS)}"
            )
        _apply_layer(resolved, PRESETS[preset])
    if config_file is not None:
        _apply_layer(resolved, load_config_file(config_file))
    _apply_layer(resolved, overrides or {})
    return resolved


def format_config(resolved: dict) -> str:
    """Snapshot in the same format parse_config_text reads."""
    lines = ["# resolved configuration snapshot"]
    for key in CONFIG_SCHEMA:
        value = resolved[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def train_config_from(resolved: dict) -> TrainConfig:
    """Build the typed training configuration from a resolved dict."""
    noise = NoiseParams(
        sigma_add=resolved["noise.sigma_add"],
        sigma_mult=resolved["noise.sigma_mult"],
        jitter_half_width=resolved["noise.jitter_half_width"],
        enabled=resolved["noise.enabled"],
    )
    degrade = DegradeConfig(
        kernel=resolved["kernel"],
        bicubic_scale=resolved["bicubic_scale"],
        noise=noise,
        seed=resolved["seed"],
    )
    loss = LossConfig(
        lambda_l1=resolved["loss.lambda_l1"],
        perceptual=resolved["loss.perceptual"],
        extractor_seed=resolved["extractor_seed"],
        extractor_path=resolved["extractor_path"] or None,
    )
    schedule = ScheduleConfig(
        lr0=resolved["lr0"],
        decay_rate=resolved["decay_rate"],
        decay_steps=resolved["decay_steps"],
        lr_floor=resolved["lr_floor"],
    )
    config = TrainConfig(
        epochs=resolved["epochs"],
        eval_every=resolved["eval_every"],
        batch_size=resolved["batch_size"],
        crop_size=resolved["crop_size"],
        frames_fraction=resolved["frames_fraction"],
        pseudo_factor=resolved["pseudo_factor"],
        weight_decay=resolved["weight_decay"],
        degrade=degrade,
        loss=loss,
        schedule=schedule,
        seed=resolved["seed"],
    )
    config.validate()
    return config
