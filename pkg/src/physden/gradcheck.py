"""Finite-difference verification of every differentiable operation.

Each case builds a scalar loss from randomized inputs, computes reverse-mode
gradients, and compares them entry by entry against central differences.
The relative error uses max(1, |analytic|, |numeric|) as denominator so
near-zero gradients are compared absolutely. Inputs are drawn away from
non-smooth points (relu kinks, sqrt at zero, division near zero).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    add,
    backward,
    concat,
    conv1d,
    div,
    mse,
    mul,
    narrow,
    neg,
    prefix_sum_exclusive,
    reduce_mean,
    reduce_sum,
    relu,
    sqrt,
    sub,
)
from .model import ModelParams, forward, init_params
from .physics import (
    Co2Environment,
    HvacEnvironment,
    InsEnvironment,
    PhysicsSpec,
    CHANNEL_NAMES,
    default_channel_map,
    stacked_residual,
)

__all__ = ["CheckResult", "check_gradient", "run_suite", "SUITE_FAMILIES"]


@dataclass
class CheckResult:
    """Worst relative error over all instances of one operation family."""

    name: str
    instances: int
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def check_gradient(
    fn: Callable[[list[Tensor]], Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-6,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    fn maps a list of tensors to a scalar tensor and must be a pure function
    of them; it is re-evaluated ~2 x total-entry-count times.
    """
    base = [np.array(v, dtype=np.float64) for v in inputs]
    with Tape() as tape:
        xs = [Tensor(v.copy(), requires_grad=True) for v in base]
        loss = fn(xs)
    grads = backward(loss, tape)

    def value() -> float:
        return float(fn([Tensor(v) for v in base]).data)

    worst = 0.0
    for i, x in enumerate(xs):
        analytic = grads[x]
        arr = base[i]
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            f_plus = value()
            arr[idx] = orig - eps
            f_minus = value()
            arr[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[idx])
            denom = max(1.0, abs(a), abs(numeric))
            worst = max(worst, abs(a - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# Case construction


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return reduce_sum(mul(out, Tensor(weights)))


def _away_from_zero(x: np.ndarray, margin: float = 0.1) -> np.ndarray:
    s = np.where(x >= 0, 1.0, -1.0)
    return x + s * margin


def _unit_like_quat(rng: np.random.Generator, t_len: int) -> np.ndarray:
    signs = rng.choice([-1.0, 1.0], size=(4, t_len))
    return signs * rng.uniform(0.3, 1.0, size=(4, t_len))


def _ins_case(rng: np.random.Generator) -> tuple[Callable, list[np.ndarray]]:
    t_len = 6
    vals = rng.uniform(-1.0, 1.0, size=(13, t_len))
    vals[3:7, :] = _unit_like_quat(rng, t_len)
    env = InsEnvironment(dt=0.05)
    spec = PhysicsSpec("ins", env, default_channel_map("ins", CHANNEL_NAMES["ins"]))
    w = rng.uniform(-1.0, 1.0, size=(7, t_len - 2))

    def fn(xs: list[Tensor]) -> Tensor:
        return _weighted_sum(stacked_residual(xs[0], spec), w)

    return fn, [vals]


def _co2_case(rng: np.random.Generator) -> tuple[Callable, list[np.ndarray]]:
    t_len = 6
    env = Co2Environment(
        room_volume=64.0,
        emission_rate=0.5,
        initial_ppm=4.0,
        dt=2.0,
        flow=rng.uniform(0.05, 0.2, size=t_len),
        inflow_ppm=4.0,
        occupants=rng.integers(0, 3, size=t_len).astype(float),
    )
    spec = PhysicsSpec("co2", env, default_channel_map("co2", CHANNEL_NAMES["co2"]))
    vals = rng.uniform(3.0, 5.0, size=(2, t_len))
    w = rng.uniform(-1.0, 1.0, size=(1, t_len))

    def fn(xs: list[Tensor]) -> Tensor:
        return _weighted_sum(stacked_residual(xs[0], spec), w)

    return fn, [vals]


def _hvac_case(rng: np.random.Generator) -> tuple[Callable, list[np.ndarray]]:
    t_len = 6
    env = HvacEnvironment(
        dt=1.0,
        mass_flow=rng.uniform(0.5, 1.5, size=t_len),
        specific_heat=1.0,
    )
    spec = PhysicsSpec("hvac", env, default_channel_map("hvac", CHANNEL_NAMES["hvac"]))
    vals = rng.uniform(-2.0, 2.0, size=(3, t_len))
    w = rng.uniform(-1.0, 1.0, size=(1, t_len))

    def fn(xs: list[Tensor]) -> Tensor:
        return _weighted_sum(stacked_residual(xs[0], spec), w)

    return fn, [vals]


def _model_case(rng: np.random.Generator) -> tuple[Callable, list[np.ndarray]]:
    c, t_len = 2, 9
    params = init_params(c, (2, 3, 2), rng)
    x = rng.uniform(-1.0, 1.0, size=(c, t_len))
    target = rng.uniform(-1.0, 1.0, size=(c, t_len))
    arrays = [x]
    for w, b in zip(params.weights, params.biases):
        arrays.append(w.data)
        arrays.append(b.data)

    def fn(xs: list[Tensor]) -> Tensor:
        p = ModelParams(
            weights=[xs[1], xs[3], xs[5], xs[7]],
            biases=[xs[2], xs[4], xs[6], xs[8]],
        )
        return mse(forward(p, xs[0]), Tensor(target))

    return fn, arrays


def _cases_for(name: str, rng: np.random.Generator) -> tuple[Callable, list[np.ndarray]]:
    if name in ("add", "sub", "mul", "div"):
        op = {"add": add, "sub": sub, "mul": mul, "div": div}[name]
        a = rng.uniform(-2.0, 2.0, size=(2, 3))
        if name == "div":
            b = _away_from_zero(rng.uniform(-1.5, 1.5, size=(2, 3)), 0.5)
        else:
            b = rng.uniform(-2.0, 2.0, size=(2, 3))
        if rng.uniform() < 0.3:
            b = np.array(float(_away_from_zero(rng.uniform(-1.5, 1.5, size=()), 0.5)))
        w = rng.uniform(-1.0, 1.0, size=(2, 3))
        return (lambda xs: _weighted_sum(op(xs[0], xs[1]), w)), [a, b]
    if name == "neg":
        a = rng.uniform(-2.0, 2.0, size=(2, 3))
        w = rng.uniform(-1.0, 1.0, size=(2, 3))
        return (lambda xs: _weighted_sum(neg(xs[0]), w)), [a]
    if name == "sqrt":
        a = rng.uniform(0.5, 3.0, size=(2, 3))
        w = rng.uniform(-1.0, 1.0, size=(2, 3))
        return (lambda xs: _weighted_sum(sqrt(xs[0]), w)), [a]
    if name == "relu":
        a = _away_from_zero(rng.uniform(-2.0, 2.0, size=(2, 5)))
        w = rng.uniform(-1.0, 1.0, size=(2, 5))
        return (lambda xs: _weighted_sum(relu(xs[0]), w)), [a]
    if name == "reduce_sum":
        a = rng.uniform(-2.0, 2.0, size=(2, 4))
        return (lambda xs: reduce_sum(xs[0])), [a]
    if name == "reduce_mean":
        a = rng.uniform(-2.0, 2.0, size=(2, 4))
        return (lambda xs: reduce_mean(xs[0])), [a]
    if name == "narrow":
        a = rng.uniform(-2.0, 2.0, size=(3, 7))
        axis = int(rng.integers(0, 2))
        size = a.shape[axis]
        length = int(rng.integers(1, size))
        start = int(rng.integers(0, size - length + 1))
        w_shape = list(a.shape)
        w_shape[axis] = length
        w = rng.uniform(-1.0, 1.0, size=w_shape)
        return (lambda xs: _weighted_sum(narrow(xs[0], axis, start, length), w)), [a]
    if name == "concat":
        axis = int(rng.integers(0, 2))
        if axis == 0:
            a = rng.uniform(-2.0, 2.0, size=(2, 3))
            b = rng.uniform(-2.0, 2.0, size=(1, 3))
            w = rng.uniform(-1.0, 1.0, size=(3, 3))
        else:
            a = rng.uniform(-2.0, 2.0, size=(2, 3))
            b = rng.uniform(-2.0, 2.0, size=(2, 4))
            w = rng.uniform(-1.0, 1.0, size=(2, 7))
        return (lambda xs: _weighted_sum(concat([xs[0], xs[1]], axis=axis), w)), [a, b]
    if name == "prefix_sum_exclusive":
        a = rng.uniform(-2.0, 2.0, size=(2, 5))
        w = rng.uniform(-1.0, 1.0, size=(2, 5))
        return (lambda xs: _weighted_sum(prefix_sum_exclusive(xs[0]), w)), [a]
    if name == "conv1d":
        k = int(rng.choice([3, 5]))
        x = rng.uniform(-1.0, 1.0, size=(2, 8))
        wgt = rng.uniform(-1.0, 1.0, size=(3, 2, k))
        b = rng.uniform(-1.0, 1.0, size=(3,))
        w = rng.uniform(-1.0, 1.0, size=(3, 8))
        return (lambda xs: _weighted_sum(conv1d(xs[0], xs[1], xs[2]), w)), [x, wgt, b]
    if name == "mse":
        a = rng.uniform(-2.0, 2.0, size=(2, 5))
        b = rng.uniform(-2.0, 2.0, size=(2, 5))
        return (lambda xs: mse(xs[0], xs[1])), [a, b]
    if name == "residual_ins":
        return _ins_case(rng)
    if name == "residual_co2":
        return _co2_case(rng)
    if name == "residual_hvac":
        return _hvac_case(rng)
    if name == "model_forward":
        return _model_case(rng)
    raise ValueError(f"unknown gradient-check family {name!r}")


SUITE_FAMILIES = (
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "sqrt",
    "relu",
    "reduce_sum",
    "reduce_mean",
    "narrow",
    "concat",
    "prefix_sum_exclusive",
    "conv1d",
    "mse",
    "residual_ins",
    "residual_co2",
    "residual_hvac",
    "model_forward",
)


def run_suite(
    seed: int = 0,
    instances: int = 20,
    rel_tol: float = 1e-5,
    families: Sequence[str] = SUITE_FAMILIES,
) -> list[CheckResult]:
    """Check `instances` random cases per family; one result row per family."""
    rng = np.random.default_rng(seed)
    results = []
    for name in families:
        worst = 0.0
        for _ in range(instances):
            fn, inputs = _cases_for(name, rng)
            worst = max(worst, check_gradient(fn, inputs))
        results.append(CheckResult(name=name, instances=instances, max_rel_err=worst, tol=rel_tol))
    return results
