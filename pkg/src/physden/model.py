"""Convolutional denoiser over multi-channel time series.

Architecture: four 1-d convolutions with kernel sizes 7, 5, 3, 3 and same
zero-padding, ReLU between layers, linear output layer. The network maps a
c x T block to a c x T block of the same channels, so the length doesn't
change and no pooling or striding is involved. Inputs are z-scored with
frozen training statistics and the output is mapped back to physical units.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, conv1d, relu
from .data import SampleWindow

__all__ = [
    "KERNEL_SIZES",
    "ModelParams",
    "init_params",
    "param_count",
    "forward",
    "Denoiser",
    "denoise",
    "save_checkpoint",
    "load_checkpoint",
]

KERNEL_SIZES = (7, 5, 3, 3)


@dataclass
class ModelParams:
    """Trainable tensors, layer by layer: weights (c_out, c_in, k), biases (c_out,)."""

    weights: list[Tensor]
    biases: list[Tensor]

    def all_tensors(self) -> list[Tensor]:
        out: list[Tensor] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_params(
    channels: int,
    widths: Sequence[int] = (128, 256, 128),
    rng: np.random.Generator | int | None = None,
) -> ModelParams:
    """Fan-in scaled uniform init U(-1/sqrt(c_in*k), +1/sqrt(c_in*k)), zero biases."""
    if channels < 1:
        raise ValueError(f"init_params: channels must be >= 1, got {channels}")
    widths = tuple(int(w) for w in widths)
    if len(widths) != 3 or any(w < 1 for w in widths):
        raise ValueError(f"init_params: widths must be three positive ints, got {widths}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    dims = (channels, *widths, channels)
    weights: list[Tensor] = []
    biases: list[Tensor] = []
    for layer, k in enumerate(KERNEL_SIZES):
        c_in, c_out = dims[layer], dims[layer + 1]
        bound = 1.0 / np.sqrt(c_in * k)
        w = rng.uniform(-bound, bound, size=(c_out, c_in, k))
        weights.append(Tensor(w, requires_grad=True))
        biases.append(Tensor(np.zeros(c_out), requires_grad=True))
    return ModelParams(weights=weights, biases=biases)


def param_count(params: ModelParams) -> int:
    return sum(int(t.data.size) for t in params.all_tensors())


def forward(params: ModelParams, x: Tensor) -> Tensor:
    """Run the network on a c x T block; returns a c x T block."""
    if x.data.ndim != 2:
        raise ValueError(f"forward: expected a 2-d c x T input, got shape {x.data.shape}")
    expected = params.weights[0].data.shape[1]
    if x.data.shape[0] != expected:
        raise ValueError(
            f"forward: input has {x.data.shape[0]} channels, model expects {expected}"
        )
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = conv1d(h, w, b)
        if i != last:
            h = relu(h)
    return h


@dataclass
class Denoiser:
    """Model plus the channel subset it reconstructs and its frozen z-score stats.

    With predict_residual the network learns a correction added to its input
    (in z-scored space) instead of the signal itself; off by default.
    """

    params: ModelParams
    channels: list[str]
    norm_mean: np.ndarray
    norm_std: np.ndarray
    predict_residual: bool = False

    def __post_init__(self):
        self.norm_mean = np.asarray(self.norm_mean, dtype=np.float64)
        self.norm_std = np.asarray(self.norm_std, dtype=np.float64)
        n = len(self.channels)
        if self.norm_mean.shape != (n,) or self.norm_std.shape != (n,):
            raise ValueError(
                f"Denoiser: norm stats must have shape ({n},) to match channels, "
                f"got mean {self.norm_mean.shape} and std {self.norm_std.shape}"
            )
        if np.any(self.norm_std <= 0):
            raise ValueError("Denoiser: norm_std entries must be positive")
        expected = self.params.weights[0].data.shape[1]
        if n != expected:
            raise ValueError(
                f"Denoiser: model expects {expected} channels but {n} names were given"
            )


def denoise(denoiser: Denoiser, window: SampleWindow) -> SampleWindow:
    """Reconstruct the denoiser's channels; every other row passes through as-is."""
    idx = []
    for name in denoiser.channels:
        if name not in window.channels:
            raise ValueError(f"denoise: window is missing channel {name!r}")
        idx.append(window.channels.index(name))
    x = window.values[idx, :]
    z = (x - denoiser.norm_mean[:, None]) / denoiser.norm_std[:, None]
    y = forward(denoiser.params, Tensor(z)).data
    if denoiser.predict_residual:
        y = z + y
    restored = y * denoiser.norm_std[:, None] + denoiser.norm_mean[:, None]
    merged = window.values.copy()
    merged[idx, :] = restored
    return SampleWindow(
        channels=list(window.channels), values=merged, dt=window.dt, units=list(window.units)
    )


def save_checkpoint(denoiser: Denoiser, path) -> None:
    """Write the denoiser to an npz file; float64 arrays round-trip bit-exactly."""
    arrays: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(zip(denoiser.params.weights, denoiser.params.biases)):
        arrays[f"weight_{i}"] = w.data
        arrays[f"bias_{i}"] = b.data
    arrays["norm_mean"] = denoiser.norm_mean
    arrays["norm_std"] = denoiser.norm_std
    arrays["channels"] = np.array(denoiser.channels, dtype=str)
    arrays["n_layers"] = np.array(len(denoiser.params.weights))
    arrays["predict_residual"] = np.array(denoiser.predict_residual)
    arrays["format_version"] = np.array(1)
    np.savez(path, **arrays)


def load_checkpoint(path) -> Denoiser:
    with np.load(path, allow_pickle=False) as bundle:
        version = int(bundle["format_version"])
        if version != 1:
            raise ValueError(f"unsupported checkpoint format version {version}")
        n_layers = int(bundle["n_layers"])
        weights = [Tensor(bundle[f"weight_{i}"], requires_grad=True) for i in range(n_layers)]
        biases = [Tensor(bundle[f"bias_{i}"], requires_grad=True) for i in range(n_layers)]
        return Denoiser(
            params=ModelParams(weights=weights, biases=biases),
            channels=[str(c) for c in bundle["channels"]],
            norm_mean=bundle["norm_mean"],
            norm_std=bundle["norm_std"],
            predict_residual=bool(bundle["predict_residual"]),
        )
