"""Differentiable physics residuals for three sensor families.

Families:
  ins  - inertial kinematics: accelerometer vs. position/orientation, and
         orientation rate vs. gyroscope.
  co2  - room CO2 mass balance with ventilation and occupant emission.
  hvac - air-handler coil power balance in rate form (watts).

Residuals are written with the autodiff operations, so the same code path
serves plain evaluation (metrics, splitting) and gradient-based training.
All quaternions are scalar-first Hamilton convention. Accelerometers measure
specific force: a = R_q^T (p_ddot - g0) with g0 = (0, 0, -9.80665) in the
world frame, so a stationary level device reads (0, 0, +9.80665).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, TYPE_CHECKING

import numpy as np

from .autodiff import (
    Tensor,
    concat,
    exclusive_prefix_sum_values,
    mul,
    narrow,
    neg,
    prefix_sum_exclusive,
    reduce_mean,
    sqrt,
    sub,
)

if TYPE_CHECKING:  # pragma: no cover - typing only, avoids a module cycle
    from .data import SampleWindow

__all__ = [
    "Quaternion",
    "quat_mul",
    "quat_normalize",
    "quat_to_rotmat",
    "quat_exp",
    "InsEnvironment",
    "Co2Environment",
    "HvacEnvironment",
    "PhysicsSpec",
    "FAMILIES",
    "CHANNEL_NAMES",
    "CHANNEL_UNITS",
    "DENOISE_CHANNELS",
    "default_channel_map",
    "time_derivative",
    "residual_ins_accel",
    "residual_ins_quat",
    "residual_co2",
    "residual_hvac",
    "stacked_residual",
    "physics_loss",
    "physics_loss_tensor",
    "STANDARD_GRAVITY",
]

STANDARD_GRAVITY = 9.80665  # m/s^2


# ---------------------------------------------------------------------------
# Quaternion math (plain numpy; used by simulators and spot checks)


@dataclass(frozen=True)
class Quaternion:
    """Scalar-first quaternion (w, x, y, z)."""

    w: float
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def norm(self) -> float:
        return float(np.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2))


def quat_mul(q1: Quaternion, q2: Quaternion) -> Quaternion:
    """Hamilton product q1 * q2 (scalar-first)."""
    w1, x1, y1, z1 = q1.w, q1.x, q1.y, q1.z
    w2, x2, y2, z2 = q2.w, q2.x, q2.y, q2.z
    return Quaternion(
        w=w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        x=w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        y=w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        z=w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    )


def quat_normalize(q: Quaternion) -> Quaternion:
    n = q.norm()
    if n < 1e-12:
        raise ValueError("quat_normalize: zero-norm quaternion")
    return Quaternion(q.w / n, q.x / n, q.y / n, q.z / n)


def quat_to_rotmat(q: Quaternion) -> np.ndarray:
    """Rotation matrix of the orientation q (body frame to world frame)."""
    q = quat_normalize(q)
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_exp(v: np.ndarray) -> Quaternion:
    """Exponential of the pure quaternion (0, v): (cos|v|, sin|v| * v_hat)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"quat_exp: expected a 3-vector, got shape {v.shape}")
    theta = float(np.linalg.norm(v))
    # sin(theta)/theta, continuous at zero.
    s = float(np.sinc(theta / np.pi))
    return Quaternion(np.cos(theta), s * v[0], s * v[1], s * v[2])


# ---------------------------------------------------------------------------
# Environments


def _as_gravity(g) -> np.ndarray:
    arr = np.asarray(g, dtype=np.float64)
    if arr.shape != (3,):
        raise ValueError(f"gravity must be a 3-vector, got shape {arr.shape}")
    return arr


@dataclass
class InsEnvironment:
    """Sampling interval and world-frame gravity for the inertial family."""

    dt: float
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -STANDARD_GRAVITY]))

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"InsEnvironment: dt must be positive, got {self.dt}")
        self.gravity = _as_gravity(self.gravity)


@dataclass
class Co2Environment:
    """Room constants and known flow/occupancy series for the CO2 balance.

    Series fields accept a scalar (constant over time) or an array of length
    T. Flow is volumetric (m^3/s); per-person emission is in ppm*m^3/s.
    """

    room_volume: float
    emission_rate: float
    initial_ppm: float
    dt: float
    flow: float | np.ndarray = 0.0
    inflow_ppm: float | np.ndarray = 0.0
    occupants: float | np.ndarray = 0.0

    def __post_init__(self):
        if self.room_volume <= 0:
            raise ValueError(f"Co2Environment: room_volume must be positive, got {self.room_volume}")
        if self.dt <= 0:
            raise ValueError(f"Co2Environment: dt must be positive, got {self.dt}")
        if np.any(np.asarray(self.occupants) < 0):
            raise ValueError("Co2Environment: occupants must be non-negative")


@dataclass
class HvacEnvironment:
    """Air mass flow (kg/s) and specific heat (J/(kg K)) series for the coil balance."""

    dt: float
    mass_flow: float | np.ndarray = 1.0
    specific_heat: float | np.ndarray = 1006.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"HvacEnvironment: dt must be positive, got {self.dt}")
        if np.any(np.asarray(self.mass_flow) < 0):
            raise ValueError("HvacEnvironment: mass_flow must be non-negative")
        if np.any(np.asarray(self.specific_heat) <= 0):
            raise ValueError("HvacEnvironment: specific_heat must be positive")


FAMILIES = ("ins", "co2", "hvac")

CHANNEL_NAMES: dict[str, list[str]] = {
    "ins": ["px", "py", "pz", "qw", "qx", "qy", "qz", "wx", "wy", "wz", "ax", "ay", "az"],
    "co2": ["c_room", "c_out"],
    "hvac": ["t_sa", "t_mix", "dq"],
}

CHANNEL_UNITS: dict[str, list[str]] = {
    "ins": ["m", "m", "m", "1", "1", "1", "1", "rad/s", "rad/s", "rad/s", "m/s^2", "m/s^2", "m/s^2"],
    "co2": ["ppm", "ppm"],
    "hvac": ["K", "K", "W"],
}

# Channels the denoiser reconstructs by default; the rest of the window
# (gyro/accel for ins, coil power for hvac) is kept as observed and feeds
# the residual unchanged.
DENOISE_CHANNELS: dict[str, list[str]] = {
    "ins": ["px", "py", "pz", "qw", "qx", "qy", "qz"],
    "co2": ["c_room", "c_out"],
    "hvac": ["t_sa", "t_mix"],
}


def default_channel_map(family: str, channels: Sequence[str]) -> dict[str, int]:
    """Map the family's residual symbols onto rows of a channel list by name."""
    if family not in FAMILIES:
        raise ValueError(f"unknown physics family {family!r}; expected one of {FAMILIES}")
    missing = [name for name in CHANNEL_NAMES[family] if name not in channels]
    if missing:
        raise ValueError(f"{family} residual needs missing channels: {', '.join(missing)}")
    return {name: list(channels).index(name) for name in CHANNEL_NAMES[family]}


@dataclass
class PhysicsSpec:
    """Which residual family applies, with its environment and channel wiring."""

    family: str
    environment: InsEnvironment | Co2Environment | HvacEnvironment
    channel_map: dict[str, int]

    def __post_init__(self):
        self.family = str(self.family).lower()
        if self.family not in FAMILIES:
            raise ValueError(f"unknown physics family {self.family!r}; expected one of {FAMILIES}")
        missing = [n for n in CHANNEL_NAMES[self.family] if n not in self.channel_map]
        if missing:
            raise ValueError(
                f"channel_map for {self.family} is missing symbols: {', '.join(missing)}"
            )

    @property
    def dt(self) -> float:
        return self.environment.dt


# ---------------------------------------------------------------------------
# Differentiable building blocks


def time_derivative(series, dt: float, order: int) -> Tensor:
    """Central-difference derivative of a C x T series, boundaries trimmed.

    order 1: (x[t+1] - x[t-1]) / (2 dt); order 2: (x[t+1] - 2 x[t] + x[t-1]) / dt^2.
    Returns a C x (T-2) tensor on interior timesteps.
    """
    series = series if isinstance(series, Tensor) else Tensor(series)
    if series.data.ndim != 2:
        raise ValueError(f"time_derivative: expected a 2-d series, got {series.data.ndim}-d")
    if dt <= 0:
        raise ValueError(f"time_derivative: dt must be positive, got {dt}")
    t_len = series.data.shape[1]
    if t_len < 3:
        raise ValueError(f"time_derivative: series too short (T={t_len}, need >= 3)")
    ahead = narrow(series, 1, 2, t_len - 2)
    here = narrow(series, 1, 1, t_len - 2)
    behind = narrow(series, 1, 0, t_len - 2)
    if order == 1:
        return mul(sub(ahead, behind), 1.0 / (2.0 * dt))
    if order == 2:
        return mul(sub(sub(ahead, mul(here, 2.0)), neg(behind)), 1.0 / (dt * dt))
    raise ValueError(f"time_derivative: order must be 1 or 2, got {order}")


def _row(x: Tensor, i: int) -> Tensor:
    return narrow(x, 0, i, 1)


def _interior(x: Tensor) -> Tensor:
    t_len = x.data.shape[1]
    return narrow(x, 1, 1, t_len - 2)


def _hamilton_rows(a: Sequence[Tensor], b: Sequence[Tensor]) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Per-timestep Hamilton product of two row-quaternion quadruples."""
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return (
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    )


def _normalized_quat_rows(q: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Split a 4 x M quaternion block into unit-norm rows, on the tape."""
    w, x, y, z = (_row(q, i) for i in range(4))
    n2 = w * w + x * x + y * y + z * z
    if float(np.min(n2.data)) <= 1e-24:
        raise ValueError("zero-norm quaternion sample in channel data")
    n = sqrt(n2)
    return (w / n, x / n, y / n, z / n)


def _check_series_block(name: str, x: Tensor, rows: int, t_len: int | None) -> int:
    if x.data.ndim != 2 or x.data.shape[0] != rows:
        raise ValueError(f"{name}: expected {rows} x T, got shape {x.data.shape}")
    if t_len is not None and x.data.shape[1] != t_len:
        raise ValueError(f"{name}: length {x.data.shape[1]} does not match T={t_len}")
    return x.data.shape[1]


def _series(value, t_len: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(t_len, float(arr))
    if arr.shape != (t_len,):
        raise ValueError(f"environment series {name!r} has length {arr.shape}, expected ({t_len},)")
    return arr


# ---------------------------------------------------------------------------
# Residual families


def residual_ins_accel(p, q, a, env: InsEnvironment) -> Tensor:
    """Specific-force residual a - R_q^T (p_ddot - g0) on interior timesteps.

    p: 3 x T positions, q: 4 x T orientations (renormalized per timestep on
    the tape), a: 3 x T accelerometer readings. Returns 3 x (T-2).
    """
    p = p if isinstance(p, Tensor) else Tensor(p)
    q = q if isinstance(q, Tensor) else Tensor(q)
    a = a if isinstance(a, Tensor) else Tensor(a)
    t_len = _check_series_block("residual_ins_accel: p", p, 3, None)
    _check_series_block("residual_ins_accel: q", q, 4, t_len)
    _check_series_block("residual_ins_accel: a", a, 3, t_len)

    pdd = time_derivative(p, env.dt, 2)  # 3 x (T-2)
    qn = tuple(_interior(r) for r in _normalized_quat_rows(q))
    m = t_len - 2
    zero = Tensor(np.zeros((1, m)))
    v = tuple(_row(pdd, i) - float(env.gravity[i]) for i in range(3))
    # R_q^T v via the conjugation q^-1 (0, v) q with unit q, q^-1 = conj(q).
    conj = (qn[0], neg(qn[1]), neg(qn[2]), neg(qn[3]))
    half = _hamilton_rows(conj, (zero, v[0], v[1], v[2]))
    rot = _hamilton_rows(half, qn)
    predicted = concat([rot[1], rot[2], rot[3]], axis=0)
    return sub(_interior(a), predicted)


def residual_ins_quat(q, w, env: InsEnvironment) -> Tensor:
    """Orientation-rate residual dq/dt - 0.5 q (0, w) on interior timesteps.

    q: 4 x T orientations, w: 3 x T angular rates (rad/s). The derivative is
    taken of the renormalized series. Returns 4 x (T-2).
    """
    q = q if isinstance(q, Tensor) else Tensor(q)
    w = w if isinstance(w, Tensor) else Tensor(w)
    t_len = _check_series_block("residual_ins_quat: q", q, 4, None)
    _check_series_block("residual_ins_quat: w", w, 3, t_len)

    qn_rows = _normalized_quat_rows(q)
    qn = concat(list(qn_rows), axis=0)  # 4 x T, unit per timestep
    qd = time_derivative(qn, env.dt, 1)  # 4 x (T-2)
    qi = tuple(_interior(r) for r in qn_rows)
    m = t_len - 2
    zero = Tensor(np.zeros((1, m)))
    wi = tuple(_interior(_row(w, i)) for i in range(3))
    prod = _hamilton_rows(qi, (zero, wi[0], wi[1], wi[2]))
    return sub(qd, mul(concat(list(prod), axis=0), 0.5))


def co2_known_terms(env: Co2Environment, t_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Accumulated known-supply side of the CO2 balance and the flow series.

    base[t] = c0*V + sum_{s<t} c_in[s]*v[s]*dt + sum_{s<t} n[s]*q*dt.
    The simulator consumes the same arrays and association order, which is
    what lets clean data cancel the residual exactly.
    """
    v = _series(env.flow, t_len, "flow")
    cin = _series(env.inflow_ppm, t_len, "inflow_ppm")
    occ = _series(env.occupants, t_len, "occupants")
    s_in = exclusive_prefix_sum_values((cin * v) * env.dt)
    s_occ = exclusive_prefix_sum_values((occ * env.emission_rate) * env.dt)
    base = (env.initial_ppm * env.room_volume + s_in) + s_occ
    return base, v


def residual_co2(c_room, c_out, env: Co2Environment) -> Tensor:
    """Mass-balance residual of room CO2 in ppm*m^3, length T.

    residual[t] = c_room[t]*V - (c0*V + sum_{s<t} c_in v dt + sum_{s<t} n q dt
                  - sum_{s<t} c_out v dt).
    Prefix sums exclude the current timestep, so residual[0] compares c_room[0]
    against the initial condition alone.
    """
    c_room = c_room if isinstance(c_room, Tensor) else Tensor(c_room)
    c_out = c_out if isinstance(c_out, Tensor) else Tensor(c_out)
    t_len = _check_series_block("residual_co2: c_room", c_room, 1, None)
    _check_series_block("residual_co2: c_out", c_out, 1, t_len)
    base, v = co2_known_terms(env, t_len)

    term_out = mul(mul(c_out, Tensor(v[None, :])), env.dt)
    s_out = prefix_sum_exclusive(term_out)
    supplied = sub(Tensor(base[None, :]), s_out)
    return sub(mul(c_room, float(env.room_volume)), supplied)


def hvac_heat_capacity_rate(env: HvacEnvironment, t_len: int) -> np.ndarray:
    """m*c series in W/K; shared between residual and simulator."""
    m = _series(env.mass_flow, t_len, "mass_flow")
    c = _series(env.specific_heat, t_len, "specific_heat")
    return m * c


def residual_hvac(t_sa, t_mix, dq, env: HvacEnvironment) -> Tensor:
    """Coil power-balance residual dq - m*c*(t_sa - t_mix) in watts, length T."""
    t_sa = t_sa if isinstance(t_sa, Tensor) else Tensor(t_sa)
    t_mix = t_mix if isinstance(t_mix, Tensor) else Tensor(t_mix)
    dq = dq if isinstance(dq, Tensor) else Tensor(dq)
    t_len = _check_series_block("residual_hvac: t_sa", t_sa, 1, None)
    _check_series_block("residual_hvac: t_mix", t_mix, 1, t_len)
    _check_series_block("residual_hvac: dq", dq, 1, t_len)
    mc = hvac_heat_capacity_rate(env, t_len)
    return sub(dq, mul(Tensor(mc[None, :]), sub(t_sa, t_mix)))


# ---------------------------------------------------------------------------
# Family dispatch


def _gather(values: Tensor, spec: PhysicsSpec, names: Sequence[str]) -> Tensor:
    rows = values.data.shape[0]
    for name in names:
        idx = spec.channel_map[name]
        if not 0 <= idx < rows:
            raise ValueError(
                f"channel_map points {name!r} at row {idx}, but the window has {rows} rows"
            )
    if len(names) == 1:
        return _row(values, spec.channel_map[names[0]])
    return concat([_row(values, spec.channel_map[n]) for n in names], axis=0)


def stacked_residual(values, spec: PhysicsSpec) -> Tensor:
    """All residual rows of the given physics family over a c x T value block.

    The inertial family stacks the specific-force rows (3) on top of the
    orientation-rate rows (4); the scalar families return their single row.
    """
    values = values if isinstance(values, Tensor) else Tensor(values)
    if values.data.ndim != 2:
        raise ValueError(f"stacked_residual: expected c x T values, got shape {values.data.shape}")
    env = spec.environment
    if spec.family == "ins":
        p = _gather(values, spec, ("px", "py", "pz"))
        q = _gather(values, spec, ("qw", "qx", "qy", "qz"))
        w = _gather(values, spec, ("wx", "wy", "wz"))
        a = _gather(values, spec, ("ax", "ay", "az"))
        g1 = residual_ins_accel(p, q, a, env)
        g2 = residual_ins_quat(q, w, env)
        return concat([g1, g2], axis=0)
    if spec.family == "co2":
        return residual_co2(
            _gather(values, spec, ("c_room",)), _gather(values, spec, ("c_out",)), env
        )
    if spec.family == "hvac":
        return residual_hvac(
            _gather(values, spec, ("t_sa",)),
            _gather(values, spec, ("t_mix",)),
            _gather(values, spec, ("dq",)),
            env,
        )
    raise ValueError(f"unknown physics family {spec.family!r}")


def physics_loss_tensor(values: Tensor, spec: PhysicsSpec) -> Tensor:
    """Mean squared residual as a differentiable scalar."""
    r = stacked_residual(values, spec)
    return reduce_mean(mul(r, r))


def physics_loss(window: "SampleWindow", spec: PhysicsSpec) -> float:
    """Mean squared residual of the given physics family on one window."""
    if abs(window.dt - spec.dt) > 1e-9 * max(window.dt, spec.dt):
        raise ValueError(
            f"window dt {window.dt} does not match environment dt {spec.dt}"
        )
    return float(physics_loss_tensor(Tensor(window.values), spec).data)
