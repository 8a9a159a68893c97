"""Synthetic data generation, corruption, splitting, and CSV/manifest plumbing.

Simulators produce ground truth that satisfies the matching residual family
by construction: the CO2 and HVAC generators reuse the residual's own
arithmetic (same helper functions, same association order), so their clean
output cancels to exactly 0.0; the inertial generator is limited only by the
finite-difference stencil, giving a documented O(dt^2) mean-square residual.

File formats: one window per CSV with header ``t,<channel names>`` and a
strictly increasing, uniformly spaced time column; a dataset is an INI
manifest naming the window files, the physics family, environment constants,
units, and the train/test split.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .physics import (
    CHANNEL_NAMES,
    CHANNEL_UNITS,
    DENOISE_CHANNELS,
    Co2Environment,
    HvacEnvironment,
    InsEnvironment,
    PhysicsSpec,
    Quaternion,
    co2_known_terms,
    default_channel_map,
    hvac_heat_capacity_rate,
    quat_exp,
    quat_mul,
    quat_normalize,
    quat_to_rotmat,
    stacked_residual,
)

__all__ = [
    "SampleWindow",
    "NormStats",
    "NoiseSpec",
    "Dataset",
    "SimulateConfig",
    "simulate_ins",
    "simulate_co2",
    "simulate_hvac",
    "inject_noise",
    "corrupt",
    "alignment_score",
    "split_by_alignment",
    "compute_norm_stats",
    "save_csv",
    "load_csv",
    "save_dataset",
    "load_manifest",
    "generate_dataset",
]


# ---------------------------------------------------------------------------
# Core containers


@dataclass
class SampleWindow:
    """One c x T block of named, uniformly sampled sensor channels."""

    channels: list[str]
    values: np.ndarray
    dt: float
    units: list[str]

    def __post_init__(self):
        self.channels = [str(c) for c in self.channels]
        self.values = np.asarray(self.values, dtype=np.float64)
        self.units = [str(u) for u in self.units]
        if self.values.ndim != 2:
            raise ValueError(f"SampleWindow: values must be c x T, got shape {self.values.shape}")
        c, t_len = self.values.shape
        if c < 1 or t_len < 3:
            raise ValueError(f"SampleWindow: need c >= 1 and T >= 3, got shape {self.values.shape}")
        if len(self.channels) != c:
            raise ValueError(f"SampleWindow: {len(self.channels)} names for {c} rows")
        if len(set(self.channels)) != c:
            raise ValueError("SampleWindow: channel names must be unique")
        if len(self.units) != c:
            raise ValueError(f"SampleWindow: {len(self.units)} units for {c} rows")
        if not self.dt > 0:
            raise ValueError(f"SampleWindow: dt must be positive, got {self.dt}")

    @property
    def n_timesteps(self) -> int:
        return self.values.shape[1]

    def channel_index(self, name: str) -> int:
        try:
            return self.channels.index(name)
        except ValueError:
            raise ValueError(f"window has no channel {name!r}") from None

    def row(self, name: str) -> np.ndarray:
        return self.values[self.channel_index(name), :]

    def copy(self) -> "SampleWindow":
        return SampleWindow(
            channels=list(self.channels),
            values=self.values.copy(),
            dt=self.dt,
            units=list(self.units),
        )


@dataclass
class NormStats:
    """Per-channel mean and population std pooled over windows and timesteps."""

    channels: list[str]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        n = len(self.channels)
        if self.mean.shape != (n,) or self.std.shape != (n,):
            raise ValueError("NormStats: mean/std must match the channel list")
        if np.any(self.std <= 0):
            raise ValueError("NormStats: std entries must be positive")

    def subset(self, names: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        idx = [self.channels.index(n) for n in names]
        return self.mean[idx], self.std[idx]


def compute_norm_stats(windows: Sequence[SampleWindow]) -> NormStats:
    """Pool all timesteps of all windows; zero-variance channels get std 1."""
    if not windows:
        raise ValueError("compute_norm_stats: need at least one window")
    channels = windows[0].channels
    for w in windows:
        if w.channels != channels:
            raise ValueError("compute_norm_stats: windows must share a channel layout")
    stacked = np.concatenate([w.values for w in windows], axis=1)
    mean = stacked.mean(axis=1)
    std = stacked.std(axis=1)
    std = np.where(std > 0, std, 1.0)
    return NormStats(channels=list(channels), mean=mean, std=std)


NOISE_KINDS = ("gaussian", "uniform", "zero-mask")


@dataclass
class NoiseSpec:
    """Additive noise description.

    scale is a fraction of each channel's own std within the window (gaussian
    std, or uniform half-width); zero-mask instead zeroes a mask_fraction of
    timesteps chosen uniformly per channel.
    """

    kind: str = "gaussian"
    scale: float = 0.1
    mask_fraction: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"NoiseSpec: kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.scale < 0:
            raise ValueError(f"NoiseSpec: scale must be >= 0, got {self.scale}")
        if not 0.0 <= self.mask_fraction <= 1.0:
            raise ValueError(f"NoiseSpec: mask_fraction must be in [0,1], got {self.mask_fraction}")


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _noisy_values(values: np.ndarray, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    c, t_len = values.shape
    if spec.kind == "zero-mask":
        out = values.copy()
        n_mask = int(round(spec.mask_fraction * t_len))
        for i in range(c):
            idx = rng.choice(t_len, size=n_mask, replace=False)
            out[i, idx] = 0.0
        return out
    per_channel = spec.scale * values.std(axis=1)
    if spec.kind == "gaussian":
        draw = rng.standard_normal((c, t_len))
    else:
        draw = rng.uniform(-1.0, 1.0, size=(c, t_len))
    return values + per_channel[:, None] * draw


def inject_noise(window: SampleWindow, spec: NoiseSpec, rng) -> SampleWindow:
    """Fresh noisy view of a window; deterministic given the generator state."""
    out = window.copy()
    out.values = _noisy_values(out.values, spec, _as_rng(rng))
    return out


def corrupt(
    clean: SampleWindow,
    noise: NoiseSpec | None = None,
    bias: np.ndarray | Sequence[float] | None = None,
    rng=None,
) -> SampleWindow:
    """Observed window: clean + drawn noise + constant per-channel bias."""
    out = clean.copy()
    if noise is not None:
        generator = _as_rng(rng if rng is not None else noise.seed)
        out.values = _noisy_values(out.values, noise, generator)
    if bias is not None:
        offsets = np.asarray(bias, dtype=np.float64)
        if offsets.shape != (out.values.shape[0],):
            raise ValueError(
                f"corrupt: bias must have one entry per channel, got shape {offsets.shape}"
            )
        out.values = out.values + offsets[:, None]
    return out


# ---------------------------------------------------------------------------
# Simulators


def _sum_of_modes(amp: np.ndarray, freq: np.ndarray, phase: np.ndarray, t: np.ndarray) -> np.ndarray:
    """sum_k amp[...,k] sin(2 pi freq[...,k] t + phase[...,k]), shape (..., len(t))."""
    arg = 2.0 * np.pi * freq[..., None] * t + phase[..., None]
    return np.sum(amp[..., None] * np.sin(arg), axis=-2)


def _sum_of_modes_ddot(amp: np.ndarray, freq: np.ndarray, phase: np.ndarray, t: np.ndarray) -> np.ndarray:
    arg = 2.0 * np.pi * freq[..., None] * t + phase[..., None]
    w2 = (2.0 * np.pi * freq[..., None]) ** 2
    return np.sum(-amp[..., None] * w2 * np.sin(arg), axis=-2)


def _timesteps(duration: float, dt: float) -> int:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    t_len = int(round(duration / dt)) + 1
    if t_len < 3:
        raise ValueError(f"duration {duration} with dt {dt} gives T={t_len}, need >= 3")
    return t_len


def simulate_ins(
    duration: float,
    dt: float,
    motion_scale: float = 1.0,
    rotation_scale: float = 0.5,
    n_modes: int = 4,
    seed: int | None = None,
) -> tuple[SampleWindow, InsEnvironment]:
    """Smooth inertial trajectory with self-consistent sensor channels.

    Positions and angular rates are superpositions of random sinusoids whose
    coefficients are drawn before any time sampling, so regenerating with a
    halved dt (same seed) samples the same continuous motion. Orientation is
    integrated with the left-endpoint incremental rotation
    q[t+1] = q[t] * exp(0.5 w[t] dt), which leaves the orientation-rate
    residual at O(dt) per entry: its mean square is bounded by
    dt^2 * max_t |w_dot(t)|^2 / 16 and shrinks by ~4x when dt is halved.
    Accelerometer rows use the analytic second derivative of position, so the
    specific-force residual carries only the O(dt^2) stencil truncation.
    """
    t_len = _timesteps(duration, dt)
    rng = np.random.default_rng(seed)
    amp_p = rng.uniform(-motion_scale, motion_scale, size=(3, n_modes))
    freq_p = rng.uniform(0.05, 0.4, size=(3, n_modes))
    phase_p = rng.uniform(0.0, 2.0 * np.pi, size=(3, n_modes))
    amp_w = rng.uniform(-rotation_scale, rotation_scale, size=(3, n_modes))
    freq_w = rng.uniform(0.05, 0.4, size=(3, n_modes))
    phase_w = rng.uniform(0.0, 2.0 * np.pi, size=(3, n_modes))

    t = np.arange(t_len) * dt
    p = _sum_of_modes(amp_p, freq_p, phase_p, t)
    pdd = _sum_of_modes_ddot(amp_p, freq_p, phase_p, t)
    w = _sum_of_modes(amp_w, freq_w, phase_w, t)

    env = InsEnvironment(dt=dt)
    q = np.empty((4, t_len))
    q[:, 0] = (1.0, 0.0, 0.0, 0.0)
    for k in range(t_len - 1):
        step = quat_exp(0.5 * dt * w[:, k])
        nxt = quat_normalize(quat_mul(Quaternion(*q[:, k]), step))
        q[:, k + 1] = nxt.as_array()

    a = np.empty((3, t_len))
    for k in range(t_len):
        rot = quat_to_rotmat(Quaternion(*q[:, k]))
        a[:, k] = rot.T @ (pdd[:, k] - env.gravity)

    window = SampleWindow(
        channels=list(CHANNEL_NAMES["ins"]),
        values=np.vstack([p, q, w, a]),
        dt=dt,
        units=list(CHANNEL_UNITS["ins"]),
    )
    return window, env


def _random_occupancy(t_len: int, rng: np.random.Generator, max_occupants: int = 4) -> np.ndarray:
    occ = np.zeros(t_len)
    i = 0
    while i < t_len:
        seg = int(rng.integers(5, 20))
        occ[i : i + seg] = float(rng.integers(0, max_occupants + 1))
        i += seg
    return occ


def simulate_co2(
    duration: float,
    dt: float,
    env: Co2Environment,
    occupancy: np.ndarray | float | None = None,
    seed: int | None = None,
    outdoor_offset: float = 0.0,
) -> tuple[SampleWindow, Co2Environment]:
    """Room CO2 evolved by the exact discrete mass balance.

    The returned environment carries the final occupancy schedule (given,
    taken from env, or drawn as a random piecewise-constant profile). The
    update uses the residual's own accumulated-supply helper and association
    order, so the residual of the clean output is exactly 0.0 bitwise when
    room_volume is a power of two (the default elsewhere in the package);
    for other volumes it is zero up to the final rounding step.

    c_out is modeled as the well-mixed room value plus outdoor_offset.
    """
    t_len = _timesteps(duration, dt)
    if abs(dt - env.dt) > 1e-12 * max(dt, env.dt):
        raise ValueError(f"simulate_co2: dt {dt} does not match env.dt {env.dt}")
    rng = np.random.default_rng(seed)
    if occupancy is None:
        if np.ndim(env.occupants) > 0 or float(np.asarray(env.occupants)) != 0.0:
            occupancy = env.occupants
        else:
            occupancy = _random_occupancy(t_len, rng)
    env_out = dataclasses.replace(env, occupants=occupancy)

    base, flow = co2_known_terms(env_out, t_len)
    volume = env.room_volume
    c_room = np.empty(t_len)
    c_out = np.empty(t_len)
    removed = 0.0
    for k in range(t_len):
        c_room[k] = (base[k] - removed) / volume
        c_out[k] = c_room[k] + outdoor_offset
        removed = removed + (c_out[k] * flow[k]) * env.dt

    window = SampleWindow(
        channels=list(CHANNEL_NAMES["co2"]),
        values=np.vstack([c_room, c_out]),
        dt=dt,
        units=list(CHANNEL_UNITS["co2"]),
    )
    return window, env_out


def simulate_hvac(
    duration: float,
    dt: float,
    env: HvacEnvironment,
    coil_power: np.ndarray | float | None = None,
    seed: int | None = None,
    mix_base: float = 295.0,
    mix_scale: float = 2.0,
    power_scale: float = 2000.0,
    n_modes: int = 3,
) -> tuple[SampleWindow, HvacEnvironment]:
    """Air-handler temperatures consistent with the coil power balance.

    Draws a smooth mixed-air temperature and (unless given) a smooth coil
    power schedule, then sets t_sa = t_mix + dq/(m c). The stored power row
    is recomputed as m*c*(t_sa - t_mix), the residual's exact expression, so
    the clean residual is 0.0 bitwise.
    """
    t_len = _timesteps(duration, dt)
    if abs(dt - env.dt) > 1e-12 * max(dt, env.dt):
        raise ValueError(f"simulate_hvac: dt {dt} does not match env.dt {env.dt}")
    rng = np.random.default_rng(seed)
    t = np.arange(t_len) * dt

    amp_m = rng.uniform(-mix_scale, mix_scale, size=n_modes)
    freq_m = rng.uniform(0.2, 2.0, size=n_modes) / (t_len * dt)
    phase_m = rng.uniform(0.0, 2.0 * np.pi, size=n_modes)
    t_mix = mix_base + _sum_of_modes(amp_m, freq_m, phase_m, t)

    if coil_power is None:
        amp_q = rng.uniform(-power_scale, power_scale, size=n_modes)
        freq_q = rng.uniform(0.2, 2.0, size=n_modes) / (t_len * dt)
        phase_q = rng.uniform(0.0, 2.0 * np.pi, size=n_modes)
        dq = _sum_of_modes(amp_q, freq_q, phase_q, t)
    else:
        dq = np.broadcast_to(np.asarray(coil_power, dtype=np.float64), (t_len,)).copy()

    mc = hvac_heat_capacity_rate(env, t_len)
    degenerate = np.flatnonzero(mc == 0.0)
    if degenerate.size:
        raise ValueError(
            f"simulate_hvac: degenerate environment, m*c is zero at timestep {degenerate[0]}"
        )
    t_sa = t_mix + dq / mc
    dq_stored = mc * (t_sa - t_mix)

    window = SampleWindow(
        channels=list(CHANNEL_NAMES["hvac"]),
        values=np.vstack([t_sa, t_mix, dq_stored]),
        dt=dt,
        units=list(CHANNEL_UNITS["hvac"]),
    )
    return window, env


# ---------------------------------------------------------------------------
# Alignment split


def alignment_score(window: SampleWindow, spec: PhysicsSpec) -> float:
    """Sum of squared residual entries; the split's ranking statistic."""
    r = stacked_residual(Tensor(window.values), spec).data
    return float(np.sum(r * r))


def split_by_alignment(
    windows: Sequence[SampleWindow], spec: PhysicsSpec
) -> tuple[list[int], list[int]]:
    """Best-aligned half trains, the rest tests.

    Ranks windows by alignment_score ascending with ties broken by original
    index (stable sort); the ceil(N/2) smallest go to train.
    """
    if len(windows) < 2:
        raise ValueError(f"split_by_alignment: need at least 2 windows, got {len(windows)}")
    scores = np.array([alignment_score(w, spec) for w in windows])
    order = np.argsort(scores, kind="stable")
    n_train = (len(windows) + 1) // 2
    train = sorted(int(i) for i in order[:n_train])
    test = sorted(int(i) for i in order[n_train:])
    return train, test


# ---------------------------------------------------------------------------
# Dataset container


@dataclass
class Dataset:
    """Observed windows plus their physics wiring, split, and train-split stats.

    clean holds the pre-corruption ground truth when the data came from a
    simulator (evaluation only); denoise_channels names the rows a model
    should reconstruct, the rest pass through.
    """

    windows: list[SampleWindow]
    spec: PhysicsSpec
    split: tuple[list[int], list[int]]
    norm_stats: NormStats
    clean: list[SampleWindow] | None = None
    denoise_channels: list[str] = field(default_factory=list)

    def __post_init__(self):
        train, test = self.split
        both = sorted(train) + sorted(test)
        if sorted(both) != list(range(len(self.windows))):
            raise ValueError("Dataset: split must partition window indices")
        if set(train) & set(test):
            raise ValueError("Dataset: split lists must be disjoint")
        if self.clean is not None and len(self.clean) != len(self.windows):
            raise ValueError("Dataset: clean list must pair 1:1 with windows")
        if not self.denoise_channels:
            self.denoise_channels = list(DENOISE_CHANNELS[self.spec.family])

    @property
    def train_windows(self) -> list[SampleWindow]:
        return [self.windows[i] for i in self.split[0]]

    @property
    def test_windows(self) -> list[SampleWindow]:
        return [self.windows[i] for i in self.split[1]]


# ---------------------------------------------------------------------------
# CSV window files


def save_csv(window: SampleWindow, path) -> None:
    """Write one window as ``t,<channels>`` rows at 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + list(window.channels))
        for k in range(window.n_timesteps):
            row = [f"{k * window.dt:.17g}"]
            row.extend(f"{v:.17g}" for v in window.values[:, k])
            writer.writerow(row)


def load_csv(path, schema: Sequence[str] | None = None, units: Sequence[str] | None = None) -> SampleWindow:
    """Read a window CSV; dt is inferred from the time column.

    schema, when given, lists channel names that must be present (extra
    columns are kept, file order preserved). Errors carry path:line.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}:1: empty file")
    header = rows[0]
    if not header or header[0] != "t":
        raise ValueError(f"{path}:1: header must start with 't', got {header[:1]}")
    names = header[1:]
    if not names:
        raise ValueError(f"{path}:1: no channel columns")
    if schema is not None:
        missing = [n for n in schema if n not in names]
        if missing:
            raise ValueError(f"{path}:1: missing channels: {', '.join(missing)}")

    n_cols = len(header)
    parsed = np.empty((len(rows) - 1, n_cols))
    for k, row in enumerate(rows[1:]):
        line = k + 2
        if len(row) != n_cols:
            raise ValueError(f"{path}:{line}: expected {n_cols} columns, got {len(row)}")
        try:
            parsed[k, :] = [float(v) for v in row]
        except ValueError:
            raise ValueError(f"{path}:{line}: non-numeric value in row") from None

    if parsed.shape[0] < 3:
        raise ValueError(f"{path}: need at least 3 data rows, got {parsed.shape[0]}")
    t = parsed[:, 0]
    steps = np.diff(t)
    bad = np.flatnonzero(steps <= 0)
    if bad.size:
        raise ValueError(f"{path}:{bad[0] + 3}: time column not strictly increasing")
    dt = float(t[1] - t[0])
    off = np.flatnonzero(np.abs(steps - dt) > 1e-6 * dt)
    if off.size:
        raise ValueError(f"{path}:{off[0] + 3}: non-uniform time step")

    if units is None:
        units = ["1"] * len(names)
    return SampleWindow(channels=names, values=parsed[:, 1:].T.copy(), dt=dt, units=list(units))


# ---------------------------------------------------------------------------
# Dataset manifest (INI)

_SERIES_MARK = "@series"

_CO2_SCALARS = ("room_volume", "emission_rate", "initial_ppm")
_CO2_SERIES = ("flow", "inflow_ppm", "occupants")
_HVAC_SERIES = ("mass_flow", "specific_heat")


def _format_scalar(v: float) -> str:
    return f"{float(v):.17g}"


def _env_sections(spec: PhysicsSpec) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """[environment] key/values plus any per-timestep series to store aside."""
    env = spec.environment
    out: dict[str, str] = {"dt": _format_scalar(env.dt)}
    series: dict[str, np.ndarray] = {}
    if spec.family == "ins":
        out["gravity"] = ",".join(_format_scalar(g) for g in env.gravity)
    elif spec.family == "co2":
        for name in _CO2_SCALARS:
            out[name] = _format_scalar(getattr(env, name))
        for name in _CO2_SERIES:
            value = getattr(env, name)
            if np.ndim(value) > 0:
                out[name] = _SERIES_MARK
                series[name] = np.asarray(value, dtype=np.float64)
            else:
                out[name] = _format_scalar(value)
    elif spec.family == "hvac":
        for name in _HVAC_SERIES:
            value = getattr(env, name)
            if np.ndim(value) > 0:
                out[name] = _SERIES_MARK
                series[name] = np.asarray(value, dtype=np.float64)
            else:
                out[name] = _format_scalar(value)
    return out, series


def _env_from_section(family: str, section, base_dir: Path):
    dt = float(section["dt"])
    if family == "ins":
        gravity = np.array([float(v) for v in section["gravity"].split(",")])
        return InsEnvironment(dt=dt, gravity=gravity)

    series_window = None
    if section.get("series_csv"):
        series_window = load_csv(base_dir / section["series_csv"])

    def value_of(name: str):
        raw = section[name]
        if raw == _SERIES_MARK:
            if series_window is None:
                raise ValueError(f"manifest: {name} marked {_SERIES_MARK} but no series_csv given")
            return series_window.row(name).copy()
        return float(raw)

    if family == "co2":
        return Co2Environment(
            room_volume=float(section["room_volume"]),
            emission_rate=float(section["emission_rate"]),
            initial_ppm=float(section["initial_ppm"]),
            dt=dt,
            flow=value_of("flow"),
            inflow_ppm=value_of("inflow_ppm"),
            occupants=value_of("occupants"),
        )
    if family == "hvac":
        return HvacEnvironment(
            dt=dt,
            mass_flow=value_of("mass_flow"),
            specific_heat=value_of("specific_heat"),
        )
    raise ValueError(f"manifest: unknown family {family!r}")


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write window CSVs, any environment series, and manifest.ini; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = configparser.ConfigParser()
    cfg.optionxform = str

    cfg["dataset"] = {
        "family": dataset.spec.family,
        "count": str(len(dataset.windows)),
        "denoise": ",".join(dataset.denoise_channels),
    }

    env_kv, series = _env_sections(dataset.spec)
    if series:
        names = sorted(series)
        series_window = SampleWindow(
            channels=names,
            values=np.vstack([series[n] for n in names]),
            dt=dataset.spec.dt,
            units=["1"] * len(names),
        )
        save_csv(series_window, out_dir / "env_series.csv")
        env_kv["series_csv"] = "env_series.csv"
    cfg["environment"] = env_kv

    cfg["units"] = {
        name: unit for name, unit in zip(dataset.windows[0].channels, dataset.windows[0].units)
    }
    cfg["split"] = {
        "train": ",".join(str(i) for i in dataset.split[0]),
        "test": ",".join(str(i) for i in dataset.split[1]),
    }

    files: dict[str, str] = {}
    for i, w in enumerate(dataset.windows):
        name = f"noisy_{i:03d}.csv"
        save_csv(w, out_dir / name)
        files[f"noisy_{i:03d}"] = name
    if dataset.clean is not None:
        for i, w in enumerate(dataset.clean):
            name = f"clean_{i:03d}.csv"
            save_csv(w, out_dir / name)
            files[f"clean_{i:03d}"] = name
    cfg["windows"] = files

    manifest = out_dir / "manifest.ini"
    with manifest.open("w") as fh:
        cfg.write(fh)
    return manifest


def load_manifest(path) -> Dataset:
    """Rebuild a Dataset from a manifest.ini written by save_dataset."""
    path = Path(path)
    if not path.exists():
        raise ValueError(f"manifest not found: {path}")
    base = path.parent
    cfg = configparser.ConfigParser()
    cfg.optionxform = str
    cfg.read(path)
    for section in ("dataset", "environment", "windows"):
        if section not in cfg:
            raise ValueError(f"{path}: manifest is missing the [{section}] section")

    family = cfg["dataset"]["family"].lower()
    count = int(cfg["dataset"]["count"])
    denoise = [c for c in cfg["dataset"].get("denoise", "").split(",") if c]

    env = _env_from_section(family, cfg["environment"], base)
    units = dict(cfg["units"]) if "units" in cfg else {}

    windows: list[SampleWindow] = []
    clean: list[SampleWindow] = []
    for i in range(count):
        key = f"noisy_{i:03d}"
        if key not in cfg["windows"]:
            raise ValueError(f"{path}: [windows] is missing {key}")
        w = load_csv(base / cfg["windows"][key], schema=CHANNEL_NAMES[family])
        if units:
            w.units = [units.get(name, "1") for name in w.channels]
        windows.append(w)
        clean_key = f"clean_{i:03d}"
        if clean_key in cfg["windows"]:
            clean.append(load_csv(base / cfg["windows"][clean_key], schema=CHANNEL_NAMES[family]))

    if clean and len(clean) != count:
        raise ValueError(f"{path}: expected 0 or {count} clean windows, got {len(clean)}")

    spec = PhysicsSpec(
        family=family,
        environment=env,
        channel_map=default_channel_map(family, windows[0].channels),
    )

    if "split" in cfg and cfg["split"].get("train"):
        train = [int(v) for v in cfg["split"]["train"].split(",") if v]
        test = [int(v) for v in cfg["split"]["test"].split(",") if v != ""]
        split = (train, test)
    else:
        split = split_by_alignment(windows, spec)

    stats = compute_norm_stats([windows[i] for i in split[0]] or windows)
    return Dataset(
        windows=windows,
        spec=spec,
        split=split,
        norm_stats=stats,
        clean=clean or None,
        denoise_channels=denoise,
    )


# ---------------------------------------------------------------------------
# One-call generation


_FAMILY_DEFAULTS = {
    "ins": {"duration": 2.0, "dt": 0.01},
    "co2": {"duration": 3600.0, "dt": 30.0},
    "hvac": {"duration": 3840.0, "dt": 60.0},
}


@dataclass
class SimulateConfig:
    """Everything needed to manufacture a corrupted synthetic dataset."""

    family: str = "ins"
    count: int = 8
    duration: float | None = None
    dt: float | None = None
    seed: int = 0
    noise_kind: str = "gaussian"
    noise_scale: float = 0.1
    mask_fraction: float = 0.0
    bias_frac: dict[str, float] = field(default_factory=dict)
    # ins motion
    motion_scale: float = 1.0
    rotation_scale: float = 0.5
    n_modes: int = 4
    # co2 environment (room_volume defaults to a power of two: the clean
    # residual then cancels bitwise, see simulate_co2)
    room_volume: float = 64.0
    emission_rate: float = 10.0
    initial_ppm: float = 420.0
    flow: float = 0.03
    inflow_ppm: float = 420.0
    outdoor_offset: float = 0.0
    # hvac environment
    mass_flow: float = 1.0
    specific_heat: float = 1006.0

    def __post_init__(self):
        self.family = self.family.lower()
        if self.family not in _FAMILY_DEFAULTS:
            raise ValueError(f"unknown family {self.family!r}")
        if self.count < 2:
            raise ValueError(f"count must be >= 2 (split needs both halves), got {self.count}")
        defaults = _FAMILY_DEFAULTS[self.family]
        if self.duration is None:
            self.duration = defaults["duration"]
        if self.dt is None:
            self.dt = defaults["dt"]


def generate_dataset(cfg: SimulateConfig) -> Dataset:
    """Simulate clean windows, corrupt them, split, and pool norm stats.

    Windows share one environment. For the CO2 family the driving schedules
    live in that shared environment, so every clean window in a dataset is
    the same trajectory and only the noise differs; the inertial and HVAC
    generators draw fresh schedules per window.
    """
    ss = np.random.SeedSequence(cfg.seed)
    sim_seeds = ss.spawn(cfg.count)
    noise_seeds = ss.spawn(cfg.count)

    clean: list[SampleWindow] = []
    env = None
    for i in range(cfg.count):
        if cfg.family == "ins":
            w, env_i = simulate_ins(
                cfg.duration,
                cfg.dt,
                motion_scale=cfg.motion_scale,
                rotation_scale=cfg.rotation_scale,
                n_modes=cfg.n_modes,
                seed=sim_seeds[i],
            )
            if env is None:
                env = env_i
        elif cfg.family == "co2":
            if env is None:
                base_env = Co2Environment(
                    room_volume=cfg.room_volume,
                    emission_rate=cfg.emission_rate,
                    initial_ppm=cfg.initial_ppm,
                    dt=cfg.dt,
                    flow=cfg.flow,
                    inflow_ppm=cfg.inflow_ppm,
                )
                w, env = simulate_co2(
                    cfg.duration, cfg.dt, base_env, seed=sim_seeds[i], outdoor_offset=cfg.outdoor_offset
                )
            else:
                w, _ = simulate_co2(
                    cfg.duration, cfg.dt, env, seed=sim_seeds[i], outdoor_offset=cfg.outdoor_offset
                )
        else:
            if env is None:
                env = HvacEnvironment(
                    dt=cfg.dt, mass_flow=cfg.mass_flow, specific_heat=cfg.specific_heat
                )
            w, _ = simulate_hvac(cfg.duration, cfg.dt, env, seed=sim_seeds[i])
        clean.append(w)

    bias = None
    if cfg.bias_frac:
        channels = clean[0].channels
        unknown = sorted(set(cfg.bias_frac) - set(channels))
        if unknown:
            raise ValueError(f"bias_frac names unknown channels: {', '.join(unknown)}")
        pooled = compute_norm_stats(clean)
        bias = np.zeros(len(channels))
        for name, frac in cfg.bias_frac.items():
            i = channels.index(name)
            bias[i] = frac * pooled.std[i]

    noise = NoiseSpec(kind=cfg.noise_kind, scale=cfg.noise_scale, mask_fraction=cfg.mask_fraction)
    windows = [
        corrupt(w, noise, bias=bias, rng=np.random.default_rng(noise_seeds[i]))
        for i, w in enumerate(clean)
    ]

    spec = PhysicsSpec(
        family=cfg.family,
        environment=env,
        channel_map=default_channel_map(cfg.family, windows[0].channels),
    )
    split = split_by_alignment(windows, spec)
    stats = compute_norm_stats([windows[i] for i in split[0]])
    return Dataset(
        windows=windows,
        spec=spec,
        split=split,
        norm_stats=stats,
        clean=clean,
        denoise_channels=list(DENOISE_CHANNELS[cfg.family]),
    )
