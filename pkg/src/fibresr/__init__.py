"""Zero-shot super-resolution for fibre-bundle endomicroscopy.

The package trains a small residual network per video, self-supervised on
patch pairs manufactured from the video itself with a fibre-aware Voronoi
downscaling kernel and an acquisition noise model, then super-resolves the
original frames with an augmentation-median prediction. A supervised mode,
a bundle acquisition simulator, reference image-quality metrics, and an
ablation harness round out the toolkit.

Submodules are imported lazily so that ``import fibresr`` stays cheap and
the command-line front end can configure BLAS threading before numpy loads.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

# public name -> defining submodule
_EXPORTS = {
    "CartesianImage": "images",
    "load_image": "images",
    "save_image": "images",
    "FibrePattern": "geometry",
    "generate_quasi_hex_pattern": "geometry",
    "fit_pattern_to_grid": "geometry",
    "voronoi_labels": "geometry",
    "delaunay": "geometry",
    "auto_spacing": "geometry",
    "FibreSignals": "reconstruct",
    "sample_at_fibres": "reconstruct",
    "vectorise": "reconstruct",
    "reconstruct": "reconstruct",
    "make_pseudo_hr": "reconstruct",
    "NoiseParams": "degrade",
    "DegradeConfig": "degrade",
    "apply_noise": "degrade",
    "downscale_voronoi": "degrade",
    "downscale_bicubic": "degrade",
    "simulate_pcle": "degrade",
    "NetworkParams": "network",
    "init_network": "network",
    "forward": "network",
    "save_checkpoint": "network",
    "load_checkpoint": "network",
    "LossConfig": "loss",
    "FeatureExtractor": "loss",
    "build_extractor": "loss",
    "total_loss": "loss",
    "TrainConfig": "zssr",
    "TrainResult": "zssr",
    "train_zero_shot": "zssr",
    "train_supervised": "zssr",
    "predict_median8": "zssr",
    "process_video": "zssr",
    "psnr": "iqa",
    "ssim": "iqa",
    "gmsd": "iqa",
    "l1_metric": "iqa",
    "evaluate_pair": "iqa",
    "MetricReport": "iqa",
    "paired_ttest": "stats",
    "ZeroShotSuperResolver": "estimators",
    "SupervisedSuperResolver": "estimators",
    "FibreBundleSimulator": "estimators",
    "FibreSRError": "errors",
    "ConfigurationError": "errors",
    "GeometryError": "errors",
    "CheckpointError": "errors",
    "TrainingDivergedError": "errors",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    return getattr(importlib.import_module(f".{module}", __name__), name)


def __dir__():
    return __all__
