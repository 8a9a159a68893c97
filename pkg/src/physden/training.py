"""Two-phase denoiser training with physics-balanced loss.

Phase 1 (a configurable fraction of the epochs) minimizes reconstruction
alone and never evaluates the physics residual; phase 2 adds the residual
term with a weight that is either fixed or rebalanced every iteration to
the ratio of the two losses, so both contribute equally at the evaluation
point. The weight itself is always treated as a constant during
differentiation; only the residual term carries gradient.

Batches re-noise the observed windows on the fly: the model sees window
plus fresh noise and is trained to reproduce the window, which is what
makes the denoiser generalize instead of memorizing.
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import (
    AdamState,
    NumericalError,
    Tape,
    Tensor,
    adam_step,
    add,
    backward,
    concat,
    mse,
    mul,
    narrow,
)
from .data import (
    NoiseSpec,
    SampleWindow,
    compute_norm_stats,
    corrupt,
    inject_noise,
    NormStats,
    simulate_hvac,
)
from .model import Denoiser, ModelParams, denoise, forward, init_params
from .physics import (
    DENOISE_CHANNELS,
    HvacEnvironment,
    PhysicsSpec,
    default_channel_map,
    physics_loss,
    physics_loss_tensor,
)

__all__ = [
    "NoiseSpec",
    "TrainConfig",
    "LogRow",
    "TrainResult",
    "TrainingAborted",
    "combined_loss",
    "train",
    "write_log_csv",
    "read_log_csv",
    "BiasDemoReport",
    "bias_demo",
]

LAMBDA_MIN = 1e-8
LAMBDA_MAX = 1e8


@dataclass
class TrainConfig:
    """Optimization settings.

    lambda_mode is "adaptive" (weight = l_rec/l_phy each iteration, clamped
    to [1e-8, 1e8]) or "fixed" (weight = lambda_value throughout phase 2).
    deterministic records that runs must be reproducible; execution is
    single-threaded with a fixed reduction order either way, so the flag is
    an assertion of intent rather than a behavioral switch.
    """

    lr: float = 1e-4
    batch_size: int = 16
    epochs_total: int = 50
    pretrain_fraction: float = 0.2
    lambda_mode: str = "adaptive"
    lambda_value: float = 1.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    deterministic: bool = True
    widths: tuple[int, int, int] = (128, 256, 128)
    predict_residual: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"TrainConfig: lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"TrainConfig: batch_size must be >= 1, got {self.batch_size}")
        if self.epochs_total < 1:
            raise ValueError(f"TrainConfig: epochs_total must be >= 1, got {self.epochs_total}")
        if not 0.0 <= self.pretrain_fraction <= 1.0:
            raise ValueError(
                f"TrainConfig: pretrain_fraction must be in [0,1], got {self.pretrain_fraction}"
            )
        if self.lambda_mode not in ("adaptive", "fixed"):
            raise ValueError(
                f"TrainConfig: lambda_mode must be 'adaptive' or 'fixed', got {self.lambda_mode!r}"
            )
        if self.lambda_value < 0:
            raise ValueError(f"TrainConfig: lambda_value must be >= 0, got {self.lambda_value}")


@dataclass
class LogRow:
    """One optimizer step. l_phy and lam are None during phase 1."""

    epoch: int
    iteration: int
    phase: int
    l_rec: float
    l_phy: float | None
    lam: float | None
    total: float


@dataclass
class TrainResult:
    denoiser: Denoiser
    log: list[LogRow]

    @property
    def params(self) -> ModelParams:
        return self.denoiser.params


class TrainingAborted(RuntimeError):
    """Raised on non-finite loss or gradients; carries the last good state."""

    def __init__(self, message: str, denoiser: Denoiser, log: list[LogRow]):
        super().__init__(message)
        self.denoiser = denoiser
        self.log = log


def write_log_csv(log: Sequence[LogRow], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "iter", "phase", "l_rec", "l_phy", "lambda", "total"])
        for row in log:
            writer.writerow(
                [
                    row.epoch,
                    row.iteration,
                    row.phase,
                    f"{row.l_rec:.17g}",
                    "" if row.l_phy is None else f"{row.l_phy:.17g}",
                    "" if row.lam is None else f"{row.lam:.17g}",
                    f"{row.total:.17g}",
                ]
            )


def read_log_csv(path) -> list[LogRow]:
    out: list[LogRow] = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            out.append(
                LogRow(
                    epoch=int(rec["epoch"]),
                    iteration=int(rec["iter"]),
                    phase=int(rec["phase"]),
                    l_rec=float(rec["l_rec"]),
                    l_phy=float(rec["l_phy"]) if rec["l_phy"] else None,
                    lam=float(rec["lambda"]) if rec["lambda"] else None,
                    total=float(rec["total"]),
                )
            )
    return out


def _lambda_for(l_rec: float, l_phy: float, mode: str, value: float) -> float:
    if mode == "fixed":
        return float(value)
    if l_phy == 0.0:
        # Perfectly satisfied constraint: the ratio is unbounded, so the
        # weight sits at the upper clamp (the term contributes 0 anyway).
        return LAMBDA_MAX
    return float(min(max(l_rec / l_phy, LAMBDA_MIN), LAMBDA_MAX))


def combined_loss(
    denoised: SampleWindow,
    target: SampleWindow,
    spec: PhysicsSpec,
    lambda_mode: str = "adaptive",
    lambda_value: float = 1.0,
) -> tuple[float, float, float, float]:
    """(total, l_rec, l_phy, weight) for one window pair.

    l_rec is the full-window mean squared error against the target; l_phy the
    mean squared physics residual of the denoised window. The weight never
    carries gradient; here everything is plain evaluation.
    """
    if denoised.channels != target.channels or denoised.values.shape != target.values.shape:
        raise ValueError("combined_loss: denoised and target windows must match in layout")
    l_rec = float(np.mean((denoised.values - target.values) ** 2))
    l_phy = physics_loss(denoised, spec)
    lam = _lambda_for(l_rec, l_phy, lambda_mode, lambda_value)
    return l_rec + lam * l_phy, l_rec, l_phy, lam


# ---------------------------------------------------------------------------
# Training loop


def _merged_forward(
    params: ModelParams,
    input_values: np.ndarray,
    base_values: np.ndarray,
    den_idx: Sequence[int],
    mean: np.ndarray,
    std: np.ndarray,
    predict_residual: bool,
) -> Tensor:
    """Model applied to the denoised rows of input_values, merged over base_values.

    Returns a c x T tensor whose denoised rows are the de-normalized model
    output and whose remaining rows are the base window's, as constants.
    """
    t_len = input_values.shape[1]
    z = (input_values[den_idx, :] - mean[:, None]) / std[:, None]
    y = forward(params, Tensor(z))
    if predict_residual:
        y = add(y, Tensor(z))
    std_block = Tensor(np.broadcast_to(std[:, None], (len(den_idx), t_len)).copy())
    mean_block = Tensor(np.broadcast_to(mean[:, None], (len(den_idx), t_len)).copy())
    restored = add(mul(y, std_block), mean_block)

    position = {row: j for j, row in enumerate(den_idx)}
    parts: list[Tensor] = []
    for row in range(base_values.shape[0]):
        if row in position:
            parts.append(narrow(restored, 0, position[row], 1))
        else:
            parts.append(Tensor(base_values[row : row + 1, :]))
    if len(parts) == 1:
        return parts[0]
    return concat(parts, axis=0)


def _mean_of(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for term in terms[1:]:
        acc = add(acc, term)
    if len(terms) == 1:
        return acc
    return mul(acc, 1.0 / len(terms))


def _snapshot(params: ModelParams) -> list[np.ndarray]:
    return [t.data.copy() for t in params.all_tensors()]


def _params_from_snapshot(params: ModelParams, snap: list[np.ndarray]) -> ModelParams:
    tensors = [Tensor(arr.copy(), requires_grad=True) for arr in snap]
    n = len(params.weights)
    return ModelParams(weights=[tensors[2 * i] for i in range(n)], biases=[tensors[2 * i + 1] for i in range(n)])


def train(
    windows: Sequence[SampleWindow],
    spec: PhysicsSpec,
    cfg: TrainConfig,
    denoise_channels: Sequence[str] | None = None,
    norm_stats: NormStats | None = None,
) -> TrainResult:
    """Fit a denoiser on observed windows.

    Epoch layout: the first round(pretrain_fraction * epochs_total) epochs
    are reconstruction-only (phase 1, residual never evaluated); the rest
    add the weighted residual (phase 2). Windows are shuffled each epoch and
    batched; each batch's losses are means over its windows. All randomness
    (init, shuffling, injected noise) derives from cfg.seed, so runs repeat
    bitwise. Raises TrainingAborted on non-finite loss or gradient, carrying
    the last epoch-end parameters.
    """
    windows = list(windows)
    if not windows:
        raise ValueError("train: need at least one window")
    layout = windows[0].channels
    for w in windows:
        if w.channels != layout:
            raise ValueError("train: all windows must share one channel layout")
    if denoise_channels is None:
        denoise_channels = DENOISE_CHANNELS[spec.family]
    denoise_channels = [str(c) for c in denoise_channels]
    missing = [c for c in denoise_channels if c not in layout]
    if missing:
        raise ValueError(f"train: windows lack denoise channels: {', '.join(missing)}")
    if norm_stats is None:
        norm_stats = compute_norm_stats(windows)
    mean, std = norm_stats.subset(denoise_channels)
    den_idx = [layout.index(c) for c in denoise_channels]

    seed_init, seed_shuffle, seed_noise = np.random.SeedSequence(cfg.seed).spawn(3)
    params = init_params(len(den_idx), cfg.widths, np.random.default_rng(seed_init))
    tensors = params.all_tensors()
    state = AdamState.for_params(tensors)
    rng_shuffle = np.random.default_rng(seed_shuffle)
    rng_noise = np.random.default_rng(seed_noise)

    pretrain_epochs = int(round(cfg.pretrain_fraction * cfg.epochs_total))
    log: list[LogRow] = []
    last_good = _snapshot(params)

    def as_denoiser(snap: list[np.ndarray] | None = None) -> Denoiser:
        p = params if snap is None else _params_from_snapshot(params, snap)
        return Denoiser(
            params=p,
            channels=list(denoise_channels),
            norm_mean=mean.copy(),
            norm_std=std.copy(),
            predict_residual=cfg.predict_residual,
        )

    for epoch in range(cfg.epochs_total):
        phase = 1 if epoch < pretrain_epochs else 2
        order = rng_shuffle.permutation(len(windows))
        for iteration, start in enumerate(range(0, len(windows), cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            with Tape() as tape:
                rec_terms: list[Tensor] = []
                phy_terms: list[Tensor] = []
                for wi in batch:
                    target = windows[int(wi)]
                    noisy_in = inject_noise(target, cfg.noise, rng_noise)
                    merged = _merged_forward(
                        params,
                        noisy_in.values,
                        target.values,
                        den_idx,
                        mean,
                        std,
                        cfg.predict_residual,
                    )
                    rec_terms.append(mse(merged, Tensor(target.values)))
                    if phase == 2:
                        phy_terms.append(physics_loss_tensor(merged, spec))
                l_rec_t = _mean_of(rec_terms)
                l_rec = float(l_rec_t.data)
                if phase == 2:
                    l_phy_t = _mean_of(phy_terms)
                    l_phy = float(l_phy_t.data)
                    lam = _lambda_for(l_rec, l_phy, cfg.lambda_mode, cfg.lambda_value)
                    total_t = add(l_rec_t, mul(l_phy_t, lam))
                else:
                    l_phy = None
                    lam = None
                    total_t = l_rec_t
                total = float(total_t.data)

            if not np.isfinite(total):
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch} iteration {iteration}",
                    denoiser=as_denoiser(last_good),
                    log=log,
                )
            grads = backward(total_t, tape)
            try:
                adam_step(tensors, grads, state, lr=cfg.lr)
            except NumericalError as err:
                raise TrainingAborted(
                    f"aborted at epoch {epoch} iteration {iteration}: {err}",
                    denoiser=as_denoiser(last_good),
                    log=log,
                ) from err
            log.append(LogRow(epoch, iteration, phase, l_rec, l_phy, lam, total))
        last_good = _snapshot(params)

    return TrainResult(denoiser=as_denoiser(), log=log)


# ---------------------------------------------------------------------------
# Naive-denoiser bias demonstration


@dataclass
class BiasDemoReport:
    """Mean output error of a reconstruction-only vs physics-weighted denoiser.

    Errors are on the biased channel against the clean truth, averaged per
    window and then across windows; stderr is over the per-window means.
    A reconstruction-only model targets the observations, so its mean error
    approaches the inherent bias; the physics term pulls it back toward the
    constraint-consistent value.
    """

    channel: str
    eta_frac: float
    eta_abs: float
    channel_std: float
    n_windows: int
    rec_mean_error: float
    rec_stderr: float
    phys_mean_error: float
    phys_stderr: float

    @property
    def rec_error_frac(self) -> float:
        return self.rec_mean_error / self.channel_std

    @property
    def phys_error_frac(self) -> float:
        return self.phys_mean_error / self.channel_std


def _mean_error_stats(
    denoiser: Denoiser,
    noisy: Sequence[SampleWindow],
    clean: Sequence[SampleWindow],
    channel: str,
) -> tuple[float, float]:
    per_window = []
    for obs, truth in zip(noisy, clean):
        restored = denoise(denoiser, obs)
        per_window.append(float(np.mean(restored.row(channel) - truth.row(channel))))
    per_window = np.asarray(per_window)
    return float(per_window.mean()), float(per_window.std(ddof=1) / np.sqrt(len(per_window)))


def bias_demo(
    eta_frac: float,
    cfg: TrainConfig | None = None,
    n_windows: int = 48,
    n_timesteps: int = 48,
    seed: int = 11,
) -> BiasDemoReport:
    """Train twin denoisers on biased observations and report their mean errors.

    Builds an air-handler dataset whose supply-air channel carries a constant
    inherent bias of eta_frac times its clean pooled std (plus zero-mean
    gaussian inherent noise on all channels), then trains a reconstruction-
    only model (pretrain_fraction 1, the naive denoiser) and a physics-
    weighted model on identical observations, and evaluates both against the
    clean truth on all windows.
    """
    if cfg is None:
        cfg = TrainConfig(
            lr=3e-3,
            batch_size=16,
            epochs_total=600,
            pretrain_fraction=0.2,
            lambda_mode="adaptive",
            noise=NoiseSpec(kind="gaussian", scale=0.2),
            seed=0,
            widths=(16, 32, 16),
            predict_residual=True,
        )
    dt = 60.0
    duration = (n_timesteps - 1) * dt
    env = HvacEnvironment(dt=dt, mass_flow=1.0, specific_heat=1006.0)
    ss = np.random.SeedSequence(seed)
    sim_seeds = ss.spawn(n_windows)
    noise_seeds = ss.spawn(n_windows)

    clean = [simulate_hvac(duration, dt, env, seed=sim_seeds[i])[0] for i in range(n_windows)]
    channel = "t_sa"
    pooled = compute_norm_stats(clean)
    channel_std = float(pooled.std[clean[0].channel_index(channel)])
    eta_abs = eta_frac * channel_std
    bias_vec = np.zeros(len(clean[0].channels))
    bias_vec[clean[0].channel_index(channel)] = eta_abs

    inherent = NoiseSpec(kind="gaussian", scale=0.15)
    noisy = [
        corrupt(w, inherent, bias=bias_vec, rng=np.random.default_rng(noise_seeds[i]))
        for i, w in enumerate(clean)
    ]
    spec = PhysicsSpec(
        family="hvac",
        environment=env,
        channel_map=default_channel_map("hvac", clean[0].channels),
    )
    norm = compute_norm_stats(noisy)
    channels = DENOISE_CHANNELS["hvac"]

    rec_cfg = dataclasses.replace(cfg, pretrain_fraction=1.0)
    rec = train(noisy, spec, rec_cfg, denoise_channels=channels, norm_stats=norm)
    phys = train(noisy, spec, cfg, denoise_channels=channels, norm_stats=norm)

    rec_mean, rec_se = _mean_error_stats(rec.denoiser, noisy, clean, channel)
    phys_mean, phys_se = _mean_error_stats(phys.denoiser, noisy, clean, channel)
    return BiasDemoReport(
        channel=channel,
        eta_frac=eta_frac,
        eta_abs=eta_abs,
        channel_std=channel_std,
        n_windows=n_windows,
        rec_mean_error=rec_mean,
        rec_stderr=rec_se,
        phys_mean_error=phys_mean,
        phys_stderr=phys_se,
    )
