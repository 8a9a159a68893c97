"""Residual definitions: quaternion algebra, balance equations, exact-zero floors."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from physden.autodiff import Tensor
from physden.data import simulate_co2, simulate_hvac, simulate_ins
from physden.physics import (
    CHANNEL_NAMES,
    Co2Environment,
    HvacEnvironment,
    InsEnvironment,
    PhysicsSpec,
    Quaternion,
    default_channel_map,
    hvac_heat_capacity_rate,
    physics_loss,
    physics_loss_tensor,
    quat_exp,
    quat_mul,
    quat_normalize,
    quat_to_rotmat,
    residual_co2,
    residual_hvac,
    residual_ins_accel,
    residual_ins_quat,
    stacked_residual,
    time_derivative,
)

GRAVITY_Z = -9.80665


# ---------------------------------------------------------------------------
# Quaternion algebra


def test_quaternion_basis_products():
    i = Quaternion(0.0, 1.0, 0.0, 0.0)
    j = Quaternion(0.0, 0.0, 1.0, 0.0)
    k = Quaternion(0.0, 0.0, 0.0, 1.0)
    assert quat_mul(i, j).as_array().tolist() == [0.0, 0.0, 0.0, 1.0]
    assert quat_mul(j, k).as_array().tolist() == [0.0, 1.0, 0.0, 0.0]
    assert quat_mul(i, i).as_array().tolist() == [-1.0, 0.0, 0.0, 0.0]


def test_quat_mul_is_not_commutative():
    i = Quaternion(0.0, 1.0, 0.0, 0.0)
    j = Quaternion(0.0, 0.0, 1.0, 0.0)
    assert quat_mul(j, i).as_array().tolist() == [0.0, 0.0, 0.0, -1.0]


def test_rotation_quarter_turn_about_z():
    half = np.pi / 4.0
    q = Quaternion(np.cos(half), 0.0, 0.0, np.sin(half))
    rotated = quat_to_rotmat(q) @ np.array([1.0, 0.0, 0.0])
    assert np.allclose(rotated, [0.0, 1.0, 0.0], atol=1e-12)


def test_identity_quaternion_rotates_nothing():
    r = quat_to_rotmat(Quaternion(1.0, 0.0, 0.0, 0.0))
    assert np.array_equal(r, np.eye(3))


def test_quat_exp_zero_is_identity():
    q = quat_exp(np.zeros(3))
    assert q.as_array().tolist() == [1.0, 0.0, 0.0, 0.0]


def test_quat_exp_axis_angle():
    theta = 0.3
    q = quat_exp(np.array([theta, 0.0, 0.0]))
    assert np.allclose(q.as_array(), [np.cos(theta), np.sin(theta), 0.0, 0.0], atol=1e-15)


def test_quat_normalize_rejects_zero():
    with pytest.raises(ValueError, match="zero-norm"):
        quat_normalize(Quaternion(0.0, 0.0, 0.0, 0.0))


@given(st.integers(0, 2**32 - 1))
def test_rotation_preserves_vector_norm(seed):
    rng = np.random.default_rng(seed)
    q = quat_normalize(Quaternion(*rng.normal(size=4)))
    v = rng.normal(size=3)
    assert np.isclose(np.linalg.norm(quat_to_rotmat(q) @ v), np.linalg.norm(v), rtol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_quat_mul_preserves_norm_product(seed):
    rng = np.random.default_rng(seed)
    q1 = Quaternion(*rng.normal(size=4))
    q2 = Quaternion(*rng.normal(size=4))
    assert np.isclose(quat_mul(q1, q2).norm(), q1.norm() * q2.norm(), rtol=1e-12)


# ---------------------------------------------------------------------------
# Finite differences


def test_time_derivative_exact_on_quadratic():
    t = np.arange(6, dtype=np.float64)
    series = Tensor((t * t)[None, :])
    first = time_derivative(series, 1.0, 1)
    second = time_derivative(series, 1.0, 2)
    # Central stencils are exact on polynomials up to degree 2.
    assert np.array_equal(first.data, (2.0 * t[1:-1])[None, :])
    assert np.array_equal(second.data, np.full((1, 4), 2.0))


def test_time_derivative_validation():
    with pytest.raises(ValueError, match="too short"):
        time_derivative(Tensor(np.zeros((1, 2))), 1.0, 1)
    with pytest.raises(ValueError, match="order"):
        time_derivative(Tensor(np.zeros((1, 5))), 1.0, 3)
    with pytest.raises(ValueError, match="dt"):
        time_derivative(Tensor(np.zeros((1, 5))), 0.0, 1)


# ---------------------------------------------------------------------------
# Inertial residuals


def stationary_ins_values(t_len=8):
    """Level, motionless platform: accelerometer reads pure reaction to gravity."""
    values = np.zeros((13, t_len))
    values[3, :] = 1.0  # identity orientation
    values[12, :] = -GRAVITY_Z  # az
    return values


def test_stationary_platform_residual_is_exactly_zero():
    env = InsEnvironment(dt=0.01)
    spec = PhysicsSpec(
        family="ins",
        environment=env,
        channel_map=default_channel_map("ins", list(CHANNEL_NAMES["ins"])),
    )
    r = stacked_residual(Tensor(stationary_ins_values()), spec)
    assert r.data.shape == (7, 6)
    assert np.all(r.data == 0.0)


def test_accel_residual_detects_wrong_gravity_sign():
    values = stationary_ins_values()
    values[12, :] = GRAVITY_Z  # accelerometer reporting the wrong sign
    env = InsEnvironment(dt=0.01)
    r = residual_ins_accel(values[0:3], values[3:7], values[10:13], env)
    assert np.allclose(r.data[2], 2.0 * GRAVITY_Z)


def test_orientation_rate_residual_shapes_and_zero_case():
    t_len = 10
    env = InsEnvironment(dt=0.05)
    q = np.zeros((4, t_len))
    q[0, :] = 1.0
    w = np.zeros((3, t_len))
    r = residual_ins_quat(q, w, env)
    assert r.data.shape == (4, t_len - 2)
    assert np.all(r.data == 0.0)


def test_quat_rows_are_renormalized_before_derivative():
    # A constant-direction quaternion with varying magnitude has zero
    # derivative after renormalization.
    t_len = 6
    env = InsEnvironment(dt=0.1)
    scale = np.linspace(1.0, 3.0, t_len)
    q = np.vstack([scale, np.zeros((3, t_len))])
    r = residual_ins_quat(q, np.zeros((3, t_len)), env)
    assert np.allclose(r.data, 0.0, atol=1e-15)


def test_zero_norm_quaternion_sample_rejected():
    values = stationary_ins_values()
    values[3, 4] = 0.0  # orientation sample collapses to the zero quaternion
    env = InsEnvironment(dt=0.01)
    with pytest.raises(ValueError, match="zero-norm quaternion sample"):
        residual_ins_quat(values[3:7], values[7:10], env)


def test_clean_ins_simulation_residual_is_small():
    window, env = simulate_ins(duration=1.0, dt=0.005, seed=5)
    spec = PhysicsSpec(
        family="ins",
        environment=env,
        channel_map=default_channel_map("ins", window.channels),
    )
    # Discretization floor only: orders of magnitude below signal power.
    assert physics_loss(window, spec) < 1e-4


# ---------------------------------------------------------------------------
# Room CO2 balance


def test_sealed_room_closed_form():
    # No airflow: concentration grows linearly, c[t] = c0 + n q t dt / V.
    # Power-of-two volume keeps every term exactly representable.
    env = Co2Environment(
        room_volume=64.0, emission_rate=10.0, initial_ppm=420.0, dt=30.0, occupants=2.0
    )
    t = np.arange(12)
    c_room = 420.0 + 2.0 * 10.0 * 30.0 * t / 64.0
    r = residual_co2(c_room[None, :], np.zeros((1, 12)), env)
    assert np.all(r.data == 0.0)


def test_balanced_flow_steady_state_is_exact():
    # Ventilation in equals ventilation out at identical concentration:
    # the room holds steady and every term is integer-valued.
    env = Co2Environment(
        room_volume=50.0, emission_rate=0.0, initial_ppm=420.0, dt=2.0,
        flow=0.5, inflow_ppm=420.0, occupants=0.0,
    )
    c = np.full((1, 9), 420.0)
    r = residual_co2(c, c, env)
    assert np.all(r.data == 0.0)


def test_co2_residual_first_timestep_checks_initial_condition():
    env = Co2Environment(room_volume=64.0, emission_rate=10.0, initial_ppm=400.0, dt=30.0)
    c_room = np.full((1, 5), 410.0)
    r = residual_co2(c_room, np.zeros((1, 5)), env)
    # residual[0] = (c_room[0] - c0) * V regardless of any flow history.
    assert r.data[0, 0] == (410.0 - 400.0) * 64.0


def test_clean_co2_simulation_residual_is_exactly_zero():
    env = Co2Environment(
        room_volume=64.0, emission_rate=10.0, initial_ppm=420.0, dt=30.0,
        flow=0.03, inflow_ppm=420.0,
    )
    window, env_out = simulate_co2(1800.0, 30.0, env, seed=3)
    spec = PhysicsSpec(
        family="co2",
        environment=env_out,
        channel_map=default_channel_map("co2", window.channels),
    )
    assert physics_loss(window, spec) == 0.0


def test_co2_environment_accepts_series_flow():
    t_len = 6
    env = Co2Environment(
        room_volume=64.0, emission_rate=10.0, initial_ppm=420.0, dt=30.0,
        flow=np.linspace(0.01, 0.05, t_len), inflow_ppm=420.0, occupants=2.0,
    )
    window, env_out = simulate_co2((t_len - 1) * 30.0, 30.0, env, seed=9)
    spec = PhysicsSpec(
        family="co2",
        environment=env_out,
        channel_map=default_channel_map("co2", window.channels),
    )
    assert physics_loss(window, spec) == 0.0


def test_co2_environment_series_length_must_match():
    env = Co2Environment(
        room_volume=64.0, emission_rate=10.0, initial_ppm=420.0, dt=30.0,
        flow=np.ones(4),
    )
    with pytest.raises(ValueError, match="length"):
        residual_co2(np.zeros((1, 6)), np.zeros((1, 6)), env)


# ---------------------------------------------------------------------------
# Air-handler heat balance


def test_hvac_residual_hand_values():
    env = HvacEnvironment(dt=60.0, mass_flow=2.0, specific_heat=1000.0)
    t_sa = np.full((1, 4), 295.0)
    t_mix = np.full((1, 4), 293.0)
    dq = np.full((1, 4), 4000.0)  # exactly m c (t_sa - t_mix)
    assert np.all(residual_hvac(t_sa, t_mix, dq, env).data == 0.0)
    short = residual_hvac(t_sa, t_mix, np.full((1, 4), 1000.0), env)
    assert np.all(short.data == -3000.0)


def test_clean_hvac_simulation_residual_is_exactly_zero():
    env = HvacEnvironment(dt=60.0, mass_flow=1.0, specific_heat=1006.0)
    window, env_out = simulate_hvac(1800.0, 60.0, env, seed=4)
    spec = PhysicsSpec(
        family="hvac",
        environment=env_out,
        channel_map=default_channel_map("hvac", window.channels),
    )
    assert physics_loss(window, spec) == 0.0


def test_degenerate_heat_capacity_rate_rejected():
    env = HvacEnvironment(dt=60.0, mass_flow=0.0, specific_heat=1006.0)
    with pytest.raises(ValueError, match="m\\*c is zero at timestep 0"):
        simulate_hvac(600.0, 60.0, env, seed=0)


def test_heat_capacity_rate_series():
    env = HvacEnvironment(dt=60.0, mass_flow=np.array([1.0, 2.0, 3.0]), specific_heat=1000.0)
    assert np.array_equal(hvac_heat_capacity_rate(env, 3), [1000.0, 2000.0, 3000.0])


# ---------------------------------------------------------------------------
# Family dispatch and loss


def test_physics_spec_normalizes_family_case():
    env = InsEnvironment(dt=0.01)
    cmap = default_channel_map("ins", list(CHANNEL_NAMES["ins"]))
    spec = PhysicsSpec(family="INS", environment=env, channel_map=cmap)
    assert spec.family == "ins"
    assert spec.dt == 0.01


def test_unknown_family_rejected():
    with pytest.raises(ValueError, match="unknown physics family"):
        default_channel_map("acoustics", ["a", "b"])


def test_channel_map_must_cover_family():
    env = HvacEnvironment(dt=60.0)
    with pytest.raises(ValueError, match="t_mix"):
        PhysicsSpec(family="hvac", environment=env, channel_map={"t_sa": 0, "dq": 1})


def test_default_channel_map_reports_missing_channels():
    with pytest.raises(ValueError, match="missing channels"):
        default_channel_map("hvac", ["t_sa", "dq"])


def test_stacked_residual_orders_rate_then_orientation():
    window, env = simulate_ins(duration=0.5, dt=0.01, seed=2)
    spec = PhysicsSpec(
        family="ins",
        environment=env,
        channel_map=default_channel_map("ins", window.channels),
    )
    values = Tensor(window.values)
    stacked = stacked_residual(values, spec)
    accel = residual_ins_accel(window.values[0:3], window.values[3:7], window.values[10:13], env)
    quat = residual_ins_quat(window.values[3:7], window.values[7:10], env)
    assert stacked.data.shape == (7, window.n_timesteps - 2)
    assert np.array_equal(stacked.data[:3], accel.data)
    assert np.array_equal(stacked.data[3:], quat.data)


def test_physics_loss_matches_stacked_mean_square():
    window, env = simulate_ins(duration=0.5, dt=0.01, seed=8)
    spec = PhysicsSpec(
        family="ins",
        environment=env,
        channel_map=default_channel_map("ins", window.channels),
    )
    r = stacked_residual(Tensor(window.values), spec).data
    assert physics_loss(window, spec) == float(np.mean(r * r))
    assert physics_loss_tensor(Tensor(window.values), spec).item() == float(np.mean(r * r))


def test_physics_loss_rejects_dt_mismatch():
    window, env = simulate_ins(duration=0.5, dt=0.01, seed=8)
    spec = PhysicsSpec(
        family="ins",
        environment=InsEnvironment(dt=0.02),
        channel_map=default_channel_map("ins", window.channels),
    )
    with pytest.raises(ValueError, match="dt"):
        physics_loss(window, spec)
