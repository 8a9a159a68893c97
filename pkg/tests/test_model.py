"""Convolutional denoiser: sizing, init, forward contract, checkpoint fidelity."""
import numpy as np
import pytest

from physden.autodiff import Tape, Tensor, backward, reduce_sum
from physden.data import SampleWindow
from physden.model import (
    KERNEL_SIZES,
    Denoiser,
    denoise,
    forward,
    init_params,
    load_checkpoint,
    param_count,
    save_checkpoint,
)


def make_window(values, names=None):
    values = np.asarray(values, dtype=np.float64)
    names = names or [f"ch{i}" for i in range(values.shape[0])]
    return SampleWindow(channels=names, values=values, dt=0.5, units=["u"] * values.shape[0])


# ---------------------------------------------------------------------------
# Architecture and parameter counts


def test_kernel_ladder():
    assert KERNEL_SIZES == (7, 5, 3, 3)


def test_param_count_production_size():
    # 7->128 (k7), 128->256 (k5), 256->128 (k3), 128->7 (k3), plus biases:
    # 6400 + 164096 + 98432 + 2695.
    assert param_count(init_params(7)) == 271_623


def test_param_count_minimal_size():
    assert param_count(init_params(1, widths=(1, 1, 1))) == 22


def test_init_zero_biases_and_bounded_weights():
    params = init_params(3, widths=(4, 5, 4), rng=0)
    dims = (3, 4, 5, 4, 3)
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        c_in, k = dims[layer], KERNEL_SIZES[layer]
        bound = 1.0 / np.sqrt(c_in * k)
        assert np.all(b.data == 0.0)
        assert np.all(np.abs(w.data) <= bound)
        assert w.requires_grad and b.requires_grad


def test_init_is_deterministic_per_seed():
    a = init_params(2, widths=(3, 3, 3), rng=42)
    b = init_params(2, widths=(3, 3, 3), rng=42)
    c = init_params(2, widths=(3, 3, 3), rng=43)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa.data, wb.data)
    assert not np.array_equal(a.weights[0].data, c.weights[0].data)


def test_init_validation():
    with pytest.raises(ValueError, match="channels"):
        init_params(0)
    with pytest.raises(ValueError, match="widths"):
        init_params(2, widths=(3, 3))
    with pytest.raises(ValueError, match="widths"):
        init_params(2, widths=(3, 0, 3))


# ---------------------------------------------------------------------------
# Forward contract


def test_forward_shape_preserved():
    params = init_params(3, widths=(4, 6, 4), rng=1)
    out = forward(params, Tensor(np.random.default_rng(0).normal(size=(3, 17))))
    assert out.data.shape == (3, 17)


def test_forward_validates_input():
    params = init_params(2, widths=(2, 2, 2), rng=0)
    with pytest.raises(ValueError, match="2-d"):
        forward(params, Tensor(np.zeros(5)))
    with pytest.raises(ValueError, match="channels"):
        forward(params, Tensor(np.zeros((3, 5))))


def test_final_layer_is_linear():
    # Zeroing the last-layer weights pins the output at the last bias
    # regardless of input; a trailing relu would clip the negative bias.
    params = init_params(1, widths=(2, 2, 2), rng=0)
    params.weights[-1].data[:] = 0.0
    params.biases[-1].data[:] = -5.0
    out = forward(params, Tensor(np.random.default_rng(1).normal(size=(1, 9))))
    assert np.all(out.data == -5.0)


def test_forward_is_differentiable_end_to_end():
    params = init_params(2, widths=(3, 3, 3), rng=5)
    x = Tensor(np.random.default_rng(2).normal(size=(2, 11)), requires_grad=True)
    with Tape() as tape:
        loss = reduce_sum(forward(params, x))
    grads = backward(loss, tape)
    assert grads[x].shape == (2, 11)
    for w in params.weights:
        assert w in grads


# ---------------------------------------------------------------------------
# Denoiser wrapper


def test_denoiser_validates_stats_and_channels():
    params = init_params(2, widths=(2, 2, 2), rng=0)
    with pytest.raises(ValueError, match="norm stats"):
        Denoiser(params, ["a", "b"], np.zeros(3), np.ones(3))
    with pytest.raises(ValueError, match="positive"):
        Denoiser(params, ["a", "b"], np.zeros(2), np.array([1.0, 0.0]))
    with pytest.raises(ValueError, match="expects 2 channels"):
        Denoiser(params, ["a", "b", "c"], np.zeros(3), np.ones(3))


def test_denoise_merges_only_its_channels():
    params = init_params(1, widths=(2, 2, 2), rng=3)
    den = Denoiser(params, ["sig"], np.array([0.0]), np.array([1.0]))
    window = make_window(np.arange(8.0).reshape(2, 4), names=["sig", "aux"])
    restored = denoise(den, window)
    assert restored.channels == window.channels
    assert np.array_equal(restored.row("aux"), window.row("aux"))
    assert not np.array_equal(restored.row("sig"), window.row("sig"))
    # the input window is left untouched
    assert np.array_equal(window.values[0], np.arange(4.0))


def test_denoise_requires_all_model_channels():
    params = init_params(2, widths=(2, 2, 2), rng=3)
    den = Denoiser(params, ["sig", "gone"], np.zeros(2), np.ones(2))
    window = make_window(np.ones((1, 5)), names=["sig"])
    with pytest.raises(ValueError, match="gone"):
        denoise(den, window)


def test_denoise_applies_zscore_normalization():
    # With zeroed weights the network emits its bias; the wrapper must map
    # that z-score back through the channel's std and mean.
    params = init_params(1, widths=(2, 2, 2), rng=0)
    for w in params.weights:
        w.data[:] = 0.0
    params.biases[-1].data[:] = 1.0
    den = Denoiser(params, ["sig"], np.array([10.0]), np.array([4.0]))
    restored = denoise(den, make_window(np.zeros((1, 5)), names=["sig"]))
    assert np.all(restored.row("sig") == 14.0)


def test_predict_residual_adds_in_z_space():
    params = init_params(1, widths=(2, 2, 2), rng=0)
    for w in params.weights:
        w.data[:] = 0.0
    plain = Denoiser(params, ["sig"], np.array([0.0]), np.array([2.0]))
    residual = Denoiser(
        params, ["sig"], np.array([0.0]), np.array([2.0]), predict_residual=True
    )
    window = make_window(np.array([[1.0, 3.0, -2.0, 0.5, 4.0]]), names=["sig"])
    # zeroed network: plain mode collapses to the mean, residual mode to identity
    assert np.all(denoise(plain, window).row("sig") == 0.0)
    assert np.array_equal(denoise(residual, window).row("sig"), window.row("sig"))


# ---------------------------------------------------------------------------
# Checkpoints


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    params = init_params(3, widths=(5, 8, 5), rng=11)
    for w in params.weights:
        w.data += np.pi * 1e-7  # non-trivial mantissas
    den = Denoiser(
        params,
        ["a", "b", "c"],
        np.array([1.0, -2.0, 3.5]),
        np.array([0.5, 1.25, 2.0]),
        predict_residual=True,
    )
    path = tmp_path / "model.npz"
    save_checkpoint(den, path)
    loaded = load_checkpoint(path)

    assert loaded.channels == den.channels
    assert loaded.predict_residual is True
    assert np.array_equal(loaded.norm_mean, den.norm_mean)
    assert np.array_equal(loaded.norm_std, den.norm_std)
    for orig, back in zip(den.params.weights, loaded.params.weights):
        assert np.array_equal(orig.data, back.data)
    for orig, back in zip(den.params.biases, loaded.params.biases):
        assert np.array_equal(orig.data, back.data)

    window = make_window(np.random.default_rng(7).normal(size=(3, 16)), names=["a", "b", "c"])
    assert np.array_equal(denoise(den, window).values, denoise(loaded, window).values)


def test_checkpoint_rejects_unknown_format_version(tmp_path):
    params = init_params(1, widths=(1, 1, 1), rng=0)
    den = Denoiser(params, ["a"], np.zeros(1), np.ones(1))
    path = tmp_path / "model.npz"
    save_checkpoint(den, path)
    blob = dict(np.load(path))
    blob["format_version"] = np.array(99)
    np.savez(path, **blob)
    with pytest.raises(ValueError, match="format"):
        load_checkpoint(path)


def test_loaded_params_are_trainable(tmp_path):
    params = init_params(1, widths=(2, 2, 2), rng=1)
    den = Denoiser(params, ["a"], np.zeros(1), np.ones(1))
    path = tmp_path / "model.npz"
    save_checkpoint(den, path)
    loaded = load_checkpoint(path)
    assert all(t.requires_grad for t in loaded.params.all_tensors())
