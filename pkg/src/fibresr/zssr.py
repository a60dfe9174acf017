"""Zero-shot self-supervised training and inference.

One network is trained per video, on patch pairs manufactured from the video
itself:

1. every training frame is turned into a pseudo high-resolution image by
   rendering its fibre signals on a grid scaled down by 2 (the input
   carries ~7 pixels per fibre, so the half grid preserves the information
   content while removing interpolation redundancy),
2. each iteration centre-crops an HR-role image, applies a random dihedral
   augmentation, and degrades it with the configured kernel (Voronoi cell
   averaging of the fibre pattern fitted to the crop grid, plus acquisition
   noise, plus mesh interpolation; or the bicubic baseline) to obtain its
   low-resolution counterpart,
3. the network learns LR -> HR; every ``eval_every`` epochs the current
   network's prediction on a central crop of the first input frame is
   appended to the training set, growing it by exactly one per round.

All HR-role images share one crop geometry, and one fibre pattern (the
acquisition's own, fitted to the crop grid) drives every degradation, so a
single cached kernel serves the whole run.

Inference runs the trained network on the original frame eight times, once
per dihedral augmentation, inverts each augmentation, and takes the
per-pixel median (the mean of the two middle order statistics).

The training/inference scale mismatch (the net trains on half-grid pairs
and predicts on the full grid) is inherent to the method and intentional.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .degrade import DegradeConfig, VoronoiDegrader, apply_noise_pixels
from .errors import ConfigurationError, GeometryError, TrainingDivergedError
from .geometry import FibrePattern, fit_pattern_to_grid
from .images import CartesianImage, largest_even_square
from .loss import LossConfig, resolve_extractor, total_loss_with_grad
from .network import (
    NetworkParams,
    OptimizerState,
    adam_step,
    backward,
    forward_with_cache,
    init_network,
    lr_schedule,
)
from .resample import resize_bicubic_masked


@dataclass(frozen=True)
class Augmentation:
    """One of the eight dihedral transforms: optional flip, then rotation."""

    rotation: int = 0  # quarter turns, 0..3
    flip: bool = False

    def apply(self, arr: np.ndarray) -> np.ndarray:
        arr = np.asarray(arr)
        if arr.shape[-1] != arr.shape[-2]:
            raise ConfigurationError(
                f"augmentation needs square images, got {arr.shape}"
            )
        out = np.flip(arr, axis=-1) if self.flip else arr
        return np.rot90(out, k=self.rotation, axes=(-2, -1))

    def invert(self, arr: np.ndarray) -> np.ndarray:
        arr = np.asarray(arr)
        if arr.shape[-1] != arr.shape[-2]:
            raise ConfigurationError(
                f"augmentation needs square images, got {arr.shape}"
            )
        out = np.rot90(arr, k=-self.rotation, axes=(-2, -1))
        return np.flip(out, axis=-1) if self.flip else out


ALL_AUGMENTATIONS = tuple(
    Augmentation(rotation=r, flip=f) for f in (False, True) for r in range(4)
)


@dataclass(frozen=True)
class ScheduleConfig:
    """Learning-rate schedule parameters (see network.lr_schedule)."""

    lr0: float = 1e-3
    decay_rate: float = 0.95
    decay_steps: int = 1000
    lr_floor: float = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of one zero-shot (or supervised) training run.

    ``weight_decay`` adds an optional L2 penalty gradient on the conv
    weights (not biases); 0 disables it.
    """

    epochs: int = 1000
    eval_every: int = 100
    batch_size: int = 8
    crop_size: int = 340
    frames_fraction: float = 0.1
    pseudo_factor: int = 2
    weight_decay: float = 0.0
    degrade: DegradeConfig = field(default_factory=DegradeConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.eval_every < 1:
            raise ConfigurationError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.epochs % self.eval_every != 0:
            raise ConfigurationError(
                f"eval_every ({self.eval_every}) must divide epochs ({self.epochs})"
            )
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.crop_size < 16:
            raise ConfigurationError(f"crop_size must be >= 16, got {self.crop_size}")
        if not 0.0 < self.frames_fraction <= 1.0:
            raise ConfigurationError(
                f"frames_fraction must be in (0, 1], got {self.frames_fraction}"
            )
        if int(self.pseudo_factor) != self.pseudo_factor or self.pseudo_factor < 1:
            raise ConfigurationError(
                f"pseudo_factor must be an integer >= 1, got {self.pseudo_factor}"
            )
        if self.weight_decay < 0:
            raise ConfigurationError(
                f"weight_decay must be >= 0, got {self.weight_decay}"
            )
        self.degrade.validate()
        self.loss.validate()


@dataclass
class TrainResult:
    """Outcome of a training run."""

    params: NetworkParams
    state: OptimizerState
    trace: list[tuple[int, float, float]]  # (epoch, loss, lr)
    train_set_size: int
    seconds: float


def _training_frame_count(n_frames: int, fraction: float) -> int:
    """Leading share of the video used for training (at least one frame)."""
    if n_frames == 1:
        return 1
    return min(n_frames, max(1, math.ceil(fraction * n_frames)))


class _Degrader:
    """HR-role -> LR degradation closure for one crop geometry.

    The fibre pattern is fitted to the crop grid once; per call only the
    noise draws change.
    """

    def __init__(self, pattern: FibrePattern, side: int, config: DegradeConfig):
        self.config = config
        self.side = int(side)
        if config.kernel == "voronoi":
            self.voronoi = VoronoiDegrader(pattern, self.side, self.side)
        else:
            self.voronoi = None

    def __call__(self, hr_role: CartesianImage, seed: int) -> CartesianImage:
        if self.voronoi is not None:
            return self.voronoi.degrade(hr_role, self.config.noise, seed)
        s = int(self.config.bicubic_scale)
        small = max(1, int(round(self.side / s)))
        down, down_mask = resize_bicubic_masked(
            hr_role.values, hr_role.mask, small, small, antialias=True
        )
        down = apply_noise_pixels(down, self.config.noise, seed)
        up, _ = resize_bicubic_masked(
            down, down_mask, self.side, self.side, antialias=True
        )
        return CartesianImage.from_array(up, hr_role.mask, clip=True)


def _draw_item_transform(iteration_seed: int) -> tuple[Augmentation, int]:
    """Augmentation and noise seed derived from one iteration seed.

    Both the public pair builder and the training loop use this, so a pair
    is fully determined by (HR-role image, pattern, config, iteration_seed).
    """
    rng = np.random.default_rng(iteration_seed)
    aug = ALL_AUGMENTATIONS[int(rng.integers(0, len(ALL_AUGMENTATIONS)))]
    noise_seed = int(rng.integers(0, 2**31 - 1))
    return aug, noise_seed


def _make_pair(
    hr_role: CartesianImage, degrader: _Degrader, iteration_seed: int
) -> tuple[CartesianImage, CartesianImage]:
    """(lr_patch, hr_patch) for one training draw; hr_role already cropped."""
    aug, noise_seed = _draw_item_transform(iteration_seed)
    hr_patch = CartesianImage(
        values=aug.apply(hr_role.values).copy(), mask=aug.apply(hr_role.mask).copy()
    )
    lr_patch = degrader(hr_patch, noise_seed)
    return lr_patch, hr_patch


def build_training_item(
    hr_role: CartesianImage,
    lr_pattern: FibrePattern,
    config: TrainConfig,
    iteration_seed: int,
) -> tuple[CartesianImage, CartesianImage]:
    """One (lr_patch, hr_patch) training pair from an HR-role image.

    The image is centre-cropped to the largest even square within
    config.crop_size, a uniformly random augmentation (derived from
    ``iteration_seed``) is applied, and the low-resolution patch is produced
    by the configured degradation with a noise seed also derived from
    ``iteration_seed``. Equal seeds therefore yield identical pairs.
    """
    config.validate()
    side = largest_even_square(*hr_role.shape, cap=config.crop_size)
    if side < 16:
        raise ConfigurationError(
            f"image {hr_role.shape} too small for a 16-pixel training crop"
        )
    degrader = _Degrader(lr_pattern, side, config.degrade)
    return _make_pair(hr_role.crop_center(side), degrader, iteration_seed)


def _run_training(
    items: list,
    sample_pair,
    config: TrainConfig,
    make_father=None,
    on_eval=None,
) -> TrainResult:
    """Shared optimisation loop for zero-shot and supervised training.

    ``items`` is the (growable) training set, sampled uniformly.
    ``sample_pair(item, iteration_seed)`` returns the (lr_values, hr_values)
    pair for one draw; zero-shot manufactures the LR patch by degradation,
    supervised training looks it up. ``make_father``, when given, is called
    with the current parameters after every eval round and its result is
    appended to the training set. ``on_eval(epoch, params, state)`` fires at
    the same cadence (for checkpointing).

    Each iteration draws, in a fixed order from a single generator seeded by
    config.seed: batch item indices, then per-item iteration seeds. The run
    is therefore reproducible bit for bit.
    """
    extractor = resolve_extractor(config.loss)
    params = init_network(config.seed, dtype=np.float32)
    state = OptimizerState.zeros_like(params)
    rng = np.random.default_rng(config.seed)
    trace: list[tuple[int, float, float]] = []
    t0 = time.perf_counter()
    items = list(items)

    for epoch in range(1, config.epochs + 1):
        idx = rng.integers(0, len(items), size=config.batch_size)
        iter_seeds = rng.integers(0, 2**31 - 1, size=config.batch_size)
        lrs, hrs = [], []
        for i, iseed in zip(idx, iter_seeds):
            lr_vals, hr_vals = sample_pair(items[int(i)], int(iseed))
            lrs.append(lr_vals)
            hrs.append(hr_vals)
        x = np.stack(lrs).astype(np.float32)
        ref = np.stack(hrs).astype(np.float32)

        y, cache = forward_with_cache(params, x)
        loss_val, gy = total_loss_with_grad(config.loss, extractor, ref, y)
        if not np.isfinite(loss_val):
            raise TrainingDivergedError(
                f"loss became non-finite at epoch {epoch}",
                params=params,
                state=state,
                epoch=epoch,
            )
        gweights, gbiases = backward(params, cache, gy.astype(np.float32))
        if config.weight_decay > 0:
            gweights = [
                g + np.float32(config.weight_decay) * w
                for g, w in zip(gweights, params.weights)
            ]
        lr = lr_schedule(
            state.step,
            lr0=config.schedule.lr0,
            decay_rate=config.schedule.decay_rate,
            decay_steps=config.schedule.decay_steps,
            lr_floor=config.schedule.lr_floor,
        )
        try:
            params, state = adam_step(params, gweights, gbiases, state, lr)
        except ConfigurationError as exc:
            raise TrainingDivergedError(
                f"non-finite gradients at epoch {epoch}: {exc}",
                params=params,
                state=state,
                epoch=epoch,
            ) from exc
        trace.append((epoch, float(loss_val), float(lr)))

        if epoch % config.eval_every == 0:
            if make_father is not None:
                try:
                    items.append(make_father(params))
                except ValueError as exc:
                    # a non-finite prediction is divergence even if the
                    # last loss value itself was still finite
                    raise TrainingDivergedError(
                        f"non-finite prediction at epoch {epoch}: {exc}",
                        params=params,
                        state=state,
                        epoch=epoch,
                    ) from exc
            if on_eval is not None:
                on_eval(epoch, params, state)

    return TrainResult(
        params=params,
        state=state,
        trace=trace,
        train_set_size=len(items),
        seconds=time.perf_counter() - t0,
    )


def prepare_fathers(
    frames: list[CartesianImage],
    pattern: FibrePattern,
    config: TrainConfig,
) -> tuple[list[CartesianImage], FibrePattern, int]:
    """Pseudo-HR images for the training frames, cropped to a common square.

    Returns (crops, scaled_pattern, crop_side). The crop side is the largest
    even square fitting both the pseudo grid and config.crop_size.
    """
    from .reconstruct import MIN_PSEUDO_GRID, make_pseudo_hr

    if not frames:
        raise ConfigurationError("no frames given")
    shape = frames[0].shape
    for f in frames:
        if f.shape != shape:
            raise ConfigurationError("all frames must share one shape")
    n_train = _training_frame_count(len(frames), config.frames_fraction)
    fitted = fit_pattern_to_grid(pattern, shape[1], shape[0])
    fathers = []
    scaled = None
    for f in frames[:n_train]:
        pseudo, scaled = make_pseudo_hr(f, fitted, config.pseudo_factor)
        fathers.append(pseudo)
    side = largest_even_square(*fathers[0].shape, cap=config.crop_size)
    if side < MIN_PSEUDO_GRID:
        raise GeometryError(f"pseudo grid too small for a {MIN_PSEUDO_GRID} crop")
    fathers = [f.crop_center(side) for f in fathers]
    return fathers, scaled, side


def train_zero_shot(
    frames: list[CartesianImage],
    pattern: FibrePattern,
    config: TrainConfig,
    on_eval=None,
) -> TrainResult:
    """Train one network on a video, self-supervised.

    ``pattern`` is the fibre pattern of the acquisition in the frames' own
    pixel units. With several frames, the leading ceil(frames_fraction * n)
    frames feed the initial training set; a single-frame video always trains
    on that frame. Every eval round the network's prediction on a central
    crop of the first input frame joins the set as a new HR father; its LR
    counterpart comes from the same fitted pattern as everything else, so
    one cached degradation kernel serves the whole run.
    """
    config.validate()
    fathers, _, side = prepare_fathers(frames, pattern, config)
    degrader = _Degrader(pattern, side, config.degrade)

    def sample_pair(item: CartesianImage, iteration_seed: int):
        lr_patch, hr_patch = _make_pair(item, degrader, iteration_seed)
        return lr_patch.values, hr_patch.values

    first_crop = frames[0].crop_center(min(side, min(frames[0].shape)))

    def make_father(params: NetworkParams) -> CartesianImage:
        return predict_median8(params, first_crop)

    return _run_training(fathers, sample_pair, config, make_father, on_eval)


def train_supervised(
    pairs: list[tuple[CartesianImage, CartesianImage]],
    config: TrainConfig,
    on_eval=None,
) -> TrainResult:
    """Supervised training on explicit (low-res, high-res) pairs.

    Uses the same optimiser, loss, schedule, and augmentation machinery as
    the zero-shot path, but LR patches come from the dataset: no degradation
    step and no HR-father growth. Augmentations apply jointly to both images
    of a pair. Pairs are centre-cropped to a common even square.
    """
    config.validate()
    if not pairs:
        raise ConfigurationError("no training pairs given")
    side = None
    for lr_img, hr_img in pairs:
        if lr_img.shape != hr_img.shape:
            raise ConfigurationError("paired images must share one shape")
        s = largest_even_square(*lr_img.shape, cap=config.crop_size)
        side = s if side is None else min(side, s)
    if side < 16:
        raise ConfigurationError(f"common crop {side} too small")
    items = [(lr.crop_center(side), hr.crop_center(side)) for lr, hr in pairs]

    def sample_pair(item, iteration_seed: int):
        lr_img, hr_img = item
        aug, _ = _draw_item_transform(iteration_seed)
        return aug.apply(lr_img.values), aug.apply(hr_img.values)

    return _run_training(items, sample_pair, config, make_father=None, on_eval=on_eval)


def predict_median8(params: NetworkParams, frame: CartesianImage) -> CartesianImage:
    """Median-of-eight augmented predictions for one frame.

    Each dihedral augmentation of the input is pushed through the network,
    the augmentation is inverted on the output, and the per-pixel median
    (mean of the two middle order statistics) is taken. The output mask
    equals the input mask; an identity network reproduces the input frame
    exactly. The frame must be square (centre-crop first if it is not).
    """
    h, w = frame.shape
    if h != w:
        raise ConfigurationError(
            f"inference frame must be square, got {w}x{h}; centre-crop first"
        )
    batch = np.stack([aug.apply(frame.values) for aug in ALL_AUGMENTATIONS])
    y, _ = forward_with_cache(params, batch.astype(np.float32), keep_cache=False)
    preds = [aug.invert(y[i]) for i, aug in enumerate(ALL_AUGMENTATIONS)]
    med = np.median(np.stack(preds), axis=0)
    return CartesianImage.from_array(med, frame.mask, clip=True)


def process_video(
    frames: list[CartesianImage],
    pattern: FibrePattern,
    config: TrainConfig,
    on_eval=None,
) -> tuple[list[CartesianImage], TrainResult]:
    """Train on the leading fraction of a video, then predict every frame."""
    result = train_zero_shot(frames, pattern, config, on_eval=on_eval)
    outputs = [predict_median8(result.params, f) for f in frames]
    return outputs, result
