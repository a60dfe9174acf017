"""Residual convolutional network with hand-rolled optimisation.

Architecture (fixed): eight convolutions operating on a single-channel
image. Layer 1 maps 1 -> 64 channels (3x3, ReLU), layers 2-7 map 64 -> 64
(3x3, ReLU), layer 8 maps 64 -> 1 (1x1, linear). The network output is
``input + residual`` with the last layer zero-initialised, so an untrained
network is exactly the identity.

All convolutions use reflect padding, so spatial size is preserved and the
network accepts any input with H, W >= 3. Canonical dtype is float32; every
op also runs in float64 when handed float64 parameters, which is what the
finite-difference gradient tests use.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .convops import conv2d_backward, conv2d_forward
from .errors import CheckpointError, ConfigurationError

HIDDEN_CHANNELS = 64
N_HIDDEN = 7  # 3x3 layers; one 1x1 output layer follows

LAYER_SHAPES = (
    [(HIDDEN_CHANNELS, 1, 3, 3)]
    + [(HIDDEN_CHANNELS, HIDDEN_CHANNELS, 3, 3)] * (N_HIDDEN - 1)
    + [(1, HIDDEN_CHANNELS, 1, 1)]
)


@dataclass
class NetworkParams:
    """Ordered convolution weights and biases."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def validate(self) -> None:
        if len(self.weights) != len(LAYER_SHAPES) or len(self.biases) != len(LAYER_SHAPES):
            raise ConfigurationError(
                f"expected {len(LAYER_SHAPES)} layers, got {len(self.weights)}"
            )
        for i, (w, b, shape) in enumerate(zip(self.weights, self.biases, LAYER_SHAPES)):
            if w.shape != shape:
                raise ConfigurationError(f"layer {i} weight shape {w.shape} != {shape}")
            if b.shape != (shape[0],):
                raise ConfigurationError(f"layer {i} bias shape {b.shape} != ({shape[0]},)")

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(
            weights=[w.astype(dtype) for w in self.weights],
            biases=[b.astype(dtype) for b in self.biases],
        )

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def flat_arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_network(seed: int = 0, dtype=np.float32) -> NetworkParams:
    """He-normal hidden layers, zero-initialised output layer and biases.

    Zero output weights make the freshly initialised network the exact
    identity map, which anchors training at the input frame.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, shape in enumerate(LAYER_SHAPES):
        fan_in = shape[1] * shape[2] * shape[3]
        if i == len(LAYER_SHAPES) - 1:
            w = np.zeros(shape, dtype=dtype)
        else:
            w = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        weights.append(w)
        biases.append(np.zeros(shape[0], dtype=dtype))
    return NetworkParams(weights=weights, biases=biases)


def _check_input(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None, :, :]
    if x.ndim != 3:
        raise ConfigurationError(f"network input must be (H, W) or (B, H, W), got {x.shape}")
    if x.shape[1] < 3 or x.shape[2] < 3:
        raise ConfigurationError(f"network input too small: {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("network input contains non-finite values")
    return x


def forward(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Network output for a (H, W) image or (B, H, W) batch."""
    squeeze = np.asarray(x).ndim == 2
    y, _ = forward_with_cache(params, x, keep_cache=False)
    return y[0] if squeeze else y


def forward_with_cache(params: NetworkParams, x: np.ndarray, keep_cache: bool = True):
    """Forward pass returning (output, cache) for the backward pass."""
    x3 = _check_input(x)
    dtype = params.dtype
    a = x3.astype(dtype, copy=False)[:, None, :, :]  # (B, 1, H, W)
    inp = a
    caches = []
    relu_masks = []
    n = params.n_layers
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        a, cache = conv2d_forward(a, w, b, stride=1)
        if i < n - 1:
            mask = a > 0
            a = a * mask
            relu_masks.append(mask if keep_cache else None)
        caches.append(cache if keep_cache else None)
    out = inp + a  # residual skip
    y = out[:, 0, :, :]
    return y, (caches, relu_masks)


def backward(params: NetworkParams, cache, gy: np.ndarray):
    """Parameter gradients given d(loss)/d(output).

    ``gy`` has shape (B, H, W) matching the forward output. Returns
    (gweights, gbiases) lists aligned with NetworkParams. The skip
    connection contributes only to the input, not to any parameter, so it
    does not appear here.
    """
    caches, relu_masks = cache
    g = np.asarray(gy, dtype=params.dtype)
    if g.ndim == 2:
        g = g[None]
    g = g[:, None, :, :]
    gweights = [None] * params.n_layers
    gbiases = [None] * params.n_layers
    for i in range(params.n_layers - 1, -1, -1):
        if i < params.n_layers - 1:
            g = g * relu_masks[i]
        need_input = i > 0
        g, gw, gb = conv2d_backward(g, params.weights[i], caches[i], need_input)
        gweights[i] = gw
        gbiases[i] = gb
    return gweights, gbiases


@dataclass
class OptimizerState:
    """Adam first/second moment estimates plus the global step counter."""

    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "OptimizerState":
        return cls(
            m_weights=[np.zeros_like(w) for w in params.weights],
            v_weights=[np.zeros_like(w) for w in params.weights],
            m_biases=[np.zeros_like(b) for b in params.biases],
            v_biases=[np.zeros_like(b) for b in params.biases],
            step=0,
        )


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(
    params: NetworkParams,
    gweights: list[np.ndarray],
    gbiases: list[np.ndarray],
    state: OptimizerState,
    lr: float,
) -> tuple[NetworkParams, OptimizerState]:
    """One Adam update with bias correction; functional (inputs untouched).

    Non-finite gradients raise ConfigurationError before any state is
    modified, so callers keep the last valid (params, state) pair.
    """
    for g in list(gweights) + list(gbiases):
        if not np.all(np.isfinite(g)):
            raise ConfigurationError("non-finite gradient passed to adam_step")
    t = state.step + 1
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t

    def upd(p, g, m, v):
        m2 = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v2 = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        mhat = m2 / bc1
        vhat = v2 / bc2
        p2 = p - (lr * mhat / (np.sqrt(vhat) + ADAM_EPS)).astype(p.dtype)
        return p2.astype(p.dtype), m2, v2

    new_w, new_b = [], []
    new_mw, new_vw, new_mb, new_vb = [], [], [], []
    for p, g, m, v in zip(params.weights, gweights, state.m_weights, state.v_weights):
        p2, m2, v2 = upd(p, g.astype(p.dtype), m, v)
        new_w.append(p2)
        new_mw.append(m2)
        new_vw.append(v2)
    for p, g, m, v in zip(params.biases, gbiases, state.m_biases, state.v_biases):
        p2, m2, v2 = upd(p, g.astype(p.dtype), m, v)
        new_b.append(p2)
        new_mb.append(m2)
        new_vb.append(v2)
    return (
        NetworkParams(weights=new_w, biases=new_b),
        OptimizerState(
            m_weights=new_mw, v_weights=new_vw, m_biases=new_mb, v_biases=new_vb, step=t
        ),
    )


def lr_schedule(
    step: int,
    lr0: float = 1e-3,
    decay_rate: float = 0.95,
    decay_steps: int = 1000,
    lr_floor: float = 1e-7,
) -> float:
    """Exponentially decayed learning rate with a hard floor.

    ``lr = max(lr_floor, lr0 * decay_rate ** (step / decay_steps))``; step 0
    returns exactly lr0.
    """
    if step < 0:
        raise ConfigurationError(f"negative step {step}")
    if decay_steps <= 0 or not 0 < decay_rate <= 1:
        raise ConfigurationError("invalid schedule parameters")
    if not 0 < lr_floor < lr0:
        raise ConfigurationError(
            f"schedule requires lr0 > lr_floor > 0, got lr0={lr0}, lr_floor={lr_floor}"
        )
    return max(lr_floor, lr0 * decay_rate ** (step / decay_steps))


# --- checkpoint container -------------------------------------------------
#
# Layout: magic(8) | version u16 | payload_len u64 | sha256(payload) (32) |
# payload. The payload serialises the parameter arrays, optional optimiser
# state, and a JSON metadata block. Integrity is checked on load.

CHECKPOINT_MAGIC = b"FBSRCKP1"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _write_array(buf: io.BytesIO, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    buf.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
    buf.write(arr.tobytes())


def _read_array(buf: io.BytesIO) -> np.ndarray:
    head = buf.read(2)
    if len(head) != 2:
        raise CheckpointError("truncated checkpoint payload")
    code, ndim = struct.unpack("<BB", head)
    if code not in _CODE_DTYPES:
        raise CheckpointError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{ndim}q", buf.read(8 * ndim))
    dtype = _CODE_DTYPES[code]
    n_bytes = int(np.prod(shape)) * dtype.itemsize if ndim else dtype.itemsize
    raw = buf.read(n_bytes)
    if len(raw) != n_bytes:
        raise CheckpointError("truncated checkpoint payload")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def save_checkpoint(
    path,
    params: NetworkParams,
    state: OptimizerState | None = None,
    meta: dict | None = None,
) -> None:
    """Serialise parameters (+ optional optimiser state, metadata) to disk."""
    params.validate()
    buf = io.BytesIO()
    buf.write(struct.pack("<I", params.n_layers))
    for w, b in zip(params.weights, params.biases):
        _write_array(buf, w)
        _write_array(buf, b)
    if state is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<B", 1))
        buf.write(struct.pack("<q", state.step))
        for group in (state.m_weights, state.v_weights, state.m_biases, state.v_biases):
            for arr in group:
                _write_array(buf, arr)
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    from pathlib import Path

    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HQ", CHECKPOINT_VERSION, len(payload)))
        fh.write(digest)
        fh.write(payload)


def load_checkpoint(path) -> tuple[NetworkParams, OptimizerState | None, dict]:
    """Load and verify a checkpoint; raises CheckpointError on corruption."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < 8 + 2 + 8 + 32 or blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, payload_len = struct.unpack("<HQ", blob[8:18])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest = blob[18:50]
    payload = blob[50:]
    if len(payload) != payload_len:
        raise CheckpointError(f"{path}: truncated checkpoint")
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    buf = io.BytesIO(payload)
    (n_layers,) = struct.unpack("<I", buf.read(4))
    weights, biases = [], []
    for _ in range(n_layers):
        weights.append(_read_array(buf))
        biases.append(_read_array(buf))
    params = NetworkParams(weights=weights, biases=biases)
    (has_state,) = struct.unpack("<B", buf.read(1))
    state = None
    if has_state:
        (step,) = struct.unpack("<q", buf.read(8))
        groups = []
        for _ in range(4):
            groups.append([_read_array(buf) for _ in range(n_layers)])
        state = OptimizerState(
            m_weights=groups[0],
            v_weights=groups[1],
            m_biases=groups[2],
            v_biases=groups[3],
            step=step,
        )
    (meta_len,) = struct.unpack("<I", buf.read(4))
    meta = json.loads(buf.read(meta_len).decode("utf-8"))
    return params, state, meta
