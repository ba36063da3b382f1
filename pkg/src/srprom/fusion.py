"""Per-pixel MLP fusion of three artifact feature heatmaps.

A 3-128-128-1 fully connected net with ReLU activations maps the per-pixel
feature vector (block DISTS, residual-variance, block-distortion composite)
to a prominence estimate. Training uses Adam, one example per step, with the
loss (mean-inside - prominence)^2 + (mean-outside)^2 on the raw outputs.
The output head is linear during training and clamped to [0, 1] at inference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (
    DISTORTION_HIGH,
    SRPM_MAGIC,
    BinaryMask,
    FormatError,
    Heatmap,
    ValidationError,
)

FEATURE_CHANNELS = ("dists", "ssm_jup", "bd_jup")
DEFAULT_LAYERS = (3, 128, 128, 1)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_LR = 1e-3


class TrainingDiverged(ValidationError):
    """Loss became non-finite during training."""

    def __init__(self, message: str, log: list[float]):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class FeatureStack:
    """Aligned per-pixel feature vectors with a fixed channel order."""

    data: np.ndarray
    channels: tuple[str, ...] = FEATURE_CHANNELS

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != len(self.channels):
            raise ValidationError(
                f"feature stack must be HxWx{len(self.channels)}, got {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise ValidationError("feature stack must be finite")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def stack_features(*, dists: Heatmap, ssm: Heatmap, bd: Heatmap) -> FeatureStack:
    """Stack the three feature heatmaps in the model's fixed channel order."""
    maps = {"dists": dists, "ssm_jup": ssm, "bd_jup": bd}
    shape = (dists.height, dists.width)
    for name, hm in maps.items():
        if (hm.height, hm.width) != shape:
            raise ValidationError(f"feature {name} has mismatched dimensions")
        if hm.polarity != DISTORTION_HIGH:
            raise ValidationError(f"feature {name} must be distortion-high")
    data = np.stack([maps[name].values for name in FEATURE_CHANNELS], axis=2)
    return FeatureStack(data=data)


@dataclass(frozen=True)
class TrainingExample:
    stack: FeatureStack
    mask: BinaryMask
    prominence: float

    def __post_init__(self) -> None:
        if (self.mask.height, self.mask.width) != (self.stack.height, self.stack.width):
            raise ValidationError("mask and feature stack dimensions differ")
        if not 0.0 <= self.prominence <= 1.0:
            raise ValidationError(f"prominence {self.prominence} outside [0, 1]")

    @property
    def degenerate(self) -> bool:
        """A usable example needs both inside and outside pixels."""
        return bool(self.mask.bits.all() or not self.mask.bits.any())


@dataclass
class FusionModel:
    """Dense ReLU MLP with per-channel input standardization.

    Parameters are float32 so the SRPM serialization round-trips bit-exactly;
    forward and gradient math runs in float64.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    feature_mean: np.ndarray
    feature_std: np.ndarray
    channels: tuple[str, ...] = FEATURE_CHANNELS
    seed: int | None = None
    epochs: int = 0

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValidationError("model needs matching weight/bias lists")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ValidationError("layer shapes are inconsistent")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValidationError("model parameters must be finite")
        if self.weights[0].shape[0] != len(self.channels):
            raise ValidationError("first layer width must match the channel count")
        if self.weights[-1].shape[1] != 1:
            raise ValidationError("output layer must have a single unit")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)


def _standardize(model: FusionModel, stack: FeatureStack) -> np.ndarray:
    if stack.channels != model.channels:
        raise ValidationError(
            f"stack channels {stack.channels} do not match the model contract {model.channels}"
        )
    return (stack.data - model.feature_mean) / model.feature_std


def standardize_stack(model: FusionModel, stack: FeatureStack) -> np.ndarray:
    """Apply the model's stored per-channel affine normalization."""
    return _standardize(model, stack)


def destandardize_stack(model: FusionModel, standardized: np.ndarray) -> np.ndarray:
    """Invert the stored affine normalization."""
    return np.asarray(standardized, dtype=np.float64) * model.feature_std + model.feature_mean


def _forward_raw(model: FusionModel, features: np.ndarray) -> np.ndarray:
    """(N, C) standardized features -> (N,) raw outputs in float64."""
    act = features
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        act = act @ w.astype(np.float64) + b.astype(np.float64)
        if i < last:
            act = np.maximum(act, 0.0)
    return act[:, 0]


def forward(model: FusionModel, stack: FeatureStack, clamp: bool = True) -> Heatmap:
    """Per-pixel evaluation; clamped to [0, 1] unless raw output is requested."""
    z = _standardize(model, stack).reshape(-1, len(model.channels))
    out = _forward_raw(model, z).reshape(stack.height, stack.width)
    if not np.isfinite(out).all():
        raise ValidationError("model produced non-finite outputs; parameters are corrupt")
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return Heatmap(values=out, polarity=DISTORTION_HIGH)


def loss(model: FusionModel, example: TrainingExample) -> float:
    """(mean-inside - prominence)^2 + (mean-outside)^2 on raw outputs."""
    if example.degenerate:
        raise ValidationError("degenerate mask: needs both inside and outside pixels")
    z = _standardize(model, example.stack).reshape(-1, len(model.channels))
    out = _forward_raw(model, z)
    inside = example.mask.bits.ravel()
    mean_in = out[inside].mean()
    mean_out = out[~inside].mean()
    return float((mean_in - example.prominence) ** 2 + mean_out**2)


# ---------------------------------------------------------------------------
# Training internals (float64 master parameters)


def _loss_and_grads(
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    features: np.ndarray,
    inside: np.ndarray,
    prominence: float,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    last = len(weights) - 1
    acts = [features]
    act = features
    for i, (w, b) in enumerate(zip(weights, biases)):
        act = act @ w + b
        if i < last:
            act = np.maximum(act, 0.0)
        acts.append(act)
    out = acts[-1][:, 0]

    n_in = int(inside.sum())
    n_out = out.size - n_in
    mean_in = out[inside].mean()
    mean_out = out[~inside].mean()
    value = float((mean_in - prominence) ** 2 + mean_out**2)

    dout = np.where(
        inside, 2.0 * (mean_in - prominence) / n_in, 2.0 * mean_out / n_out
    )[:, None]
    grads_w: list[np.ndarray] = [np.empty(0)] * len(weights)
    grads_b: list[np.ndarray] = [np.empty(0)] * len(weights)
    delta = dout
    for i in range(last, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (acts[i] > 0.0)
    return value, grads_w, grads_b


def _init_params(
    layer_sizes: tuple[int, ...], rng: np.random.Generator
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return weights, biases


def _feature_norm(examples: list[TrainingExample]) -> tuple[np.ndarray, np.ndarray]:
    pixels = np.concatenate([ex.stack.data.reshape(-1, len(FEATURE_CHANNELS)) for ex in examples])
    mean = pixels.mean(axis=0)
    std = pixels.std(axis=0)
    std[std == 0.0] = 1.0
    return mean, std


@dataclass
class TrainResult:
    model: FusionModel
    epoch_losses: list[float] = field(default_factory=list)
    skipped_examples: int = 0


def train(
    examples: list[TrainingExample],
    epochs: int,
    lr: float = DEFAULT_LR,
    seed: int = 0,
    layer_sizes: tuple[int, ...] = DEFAULT_LAYERS,
) -> TrainResult:
    """Adam training, one example per step, shuffled each epoch by the seed.

    Returns the model with float32-snapped parameters plus the per-epoch mean
    losses. Degenerate examples (single-region masks) are skipped and counted.
    """
    usable = [ex for ex in examples if not ex.degenerate]
    skipped = len(examples) - len(usable)
    if not usable:
        raise ValidationError("training requires at least one non-degenerate example")
    if epochs < 0:
        raise ValidationError("epochs must be non-negative")

    mean, std = _feature_norm(usable)
    prepared = [
        (
            ((ex.stack.data - mean) / std).reshape(-1, len(FEATURE_CHANNELS)),
            ex.mask.bits.ravel(),
            ex.prominence,
        )
        for ex in usable
    ]

    rng = np.random.default_rng(seed)
    weights, biases = _init_params(layer_sizes, rng)
    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]

    epoch_losses: list[float] = []
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(prepared))
        total = 0.0
        for idx in order:
            features, inside, prom = prepared[idx]
            value, gw, gb = _loss_and_grads(weights, biases, features, inside, prom)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"loss became non-finite at step {step}", epoch_losses
                )
            total += value
            step += 1
            corr1 = 1.0 - ADAM_BETA1**step
            corr2 = 1.0 - ADAM_BETA2**step
            for params, grads, ms, vs in (
                (weights, gw, m_w, v_w),
                (biases, gb, m_b, v_b),
            ):
                for p, g, m, v in zip(params, grads, ms, vs):
                    m *= ADAM_BETA1
                    m += (1.0 - ADAM_BETA1) * g
                    v *= ADAM_BETA2
                    v += (1.0 - ADAM_BETA2) * g * g
                    p -= lr * (m / corr1) / (np.sqrt(v / corr2) + ADAM_EPS)
        epoch_losses.append(total / len(prepared))

    model = FusionModel(
        weights=[w.astype(np.float32) for w in weights],
        biases=[b.astype(np.float32) for b in biases],
        feature_mean=mean,
        feature_std=std,
        seed=seed,
        epochs=epochs,
    )
    return TrainResult(model=model, epoch_losses=epoch_losses, skipped_examples=skipped)


# ---------------------------------------------------------------------------
# SRPM model serialization


def save_model(model: FusionModel, path: str | Path) -> None:
    header = {
        "layers": list(model.layer_sizes),
        "mean": [float(x) for x in model.feature_mean],
        "std": [float(x) for x in model.feature_std],
        "channels": list(model.channels),
        "seed": model.seed,
        "epochs": model.epochs,
    }
    chunks = []
    for w, b in zip(model.weights, model.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(SRPM_MAGIC)
        fh.write((json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode("ascii"))
        for chunk in chunks:
            fh.write(chunk)


def load_model(path: str | Path) -> FusionModel:
    raw = Path(path).read_bytes()
    if not raw.startswith(SRPM_MAGIC):
        raise FormatError(f"{path}: bad magic, not an SRPM file")
    nl = raw.find(b"\n", len(SRPM_MAGIC))
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    try:
        header = json.loads(raw[len(SRPM_MAGIC) : nl].decode("ascii"))
        layers = tuple(int(x) for x in header["layers"])
        mean = np.asarray(header["mean"], dtype=np.float64)
        std = np.asarray(header["std"], dtype=np.float64)
        channels = tuple(str(c) for c in header["channels"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed SRPM header ({exc})") from exc
    expected = sum(
        fan_in * fan_out + fan_out for fan_in, fan_out in zip(layers[:-1], layers[1:])
    )
    payload = raw[nl + 1 :]
    if len(payload) != expected * 4:
        raise FormatError(
            f"{path}: payload length {len(payload)} does not match {expected} float32 parameters"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(layers[:-1], layers[1:]):
        weights.append(flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        biases.append(flat[pos : pos + fan_out].copy())
        pos += fan_out
    try:
        return FusionModel(
            weights=weights,
            biases=biases,
            feature_mean=mean,
            feature_std=std,
            channels=channels,
            seed=header.get("seed"),
            epochs=int(header.get("epochs", 0)),
        )
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc
