import math
import struct

import numpy as np
import pytest

from lstmamp.model import (MAGIC, BadMagicError, CellState, LstmLayerParams, LstmParams,
                           ModelConfig, ModelFileError, NonFiniteWeightError, TruncatedFileError,
                           VersionMismatchError, forward_batch, forward_window, load_model,
                           lstm_cell_step, save_model)
from lstmamp.tensor import Rng, ShapeError
from lstmamp.training import init_params


def random_params(config, seed=0, scale=0.5):
    rng = Rng(seed)
    params = LstmParams.zeros(config)
    for a in params.arrays():
        a[...] = rng.uniform(-scale, scale, a.shape)
    return params


def scalar_lstm(x_seq, w, u, b, w_out, b_out):
    """One-unit LSTM unrolled with plain floats; w/u/b are (f, i, o, g) tuples."""
    sig = lambda z: 1.0 / (1.0 + math.exp(-z))
    c = h = 0.0
    for x in x_seq:
        f = sig(w[0] * x + u[0] * h + b[0])
        i = sig(w[1] * x + u[1] * h + b[1])
        o = sig(w[2] * x + u[2] * h + b[2])
        g = math.tanh(w[3] * x + u[3] * h + b[3])
        c = f * c + i * g
        h = o * math.tanh(c)
    return w_out * h + b_out


# -- cell ------------------------------------------------------------------

def test_zero_params_kill_candidate():
    layer = LstmLayerParams.zeros(1, 3)
    state, h = lstm_cell_step(layer, [0.5], CellState.zeros(3))
    np.testing.assert_array_equal(state.c, 0.0)
    np.testing.assert_array_equal(h, 0.0)


def test_saturated_forget_gate_wipes_state():
    layer = LstmLayerParams.zeros(1, 2)
    layer.b_f[:] = -1e3
    layer.b_g[:] = 0.3
    prev = CellState(np.array([5.0, -7.0]), np.zeros(2))
    state, _ = lstm_cell_step(layer, [0.2], prev)
    expected = 0.5 * math.tanh(0.3)   # i = 0.5, g = tanh(0.3)
    np.testing.assert_allclose(state.c, expected, rtol=1e-15)


def test_half_open_gates_hand_value():
    layer = LstmLayerParams.zeros(1, 1)
    state, h = lstm_cell_step(layer, [0.0], CellState(np.array([1.0]), np.array([0.0])))
    assert state.c[0] == 0.5
    assert h[0] == pytest.approx(0.5 * math.tanh(0.5), abs=1e-15)
    assert h[0] == pytest.approx(0.231059, abs=5e-7)


def test_gate_ranges_and_constant_cell():
    layer = LstmLayerParams.zeros(1, 4)
    layer.b_f[:] = 1e3    # keep everything
    layer.b_i[:] = -1e3   # add nothing
    rng = Rng(1)
    layer.W[...] = 0.0
    state = CellState(np.array([0.3, -0.2, 0.9, 0.0]), np.zeros(4))
    c0 = state.c.copy()
    for x in rng.uniform(-1, 1, 20):
        state, h = lstm_cell_step(layer, [x], state)
        assert np.all(np.abs(h) < 1)
    np.testing.assert_array_equal(state.c, c0)


def test_cell_rejects_wrong_input_dim():
    with pytest.raises(ShapeError):
        lstm_cell_step(LstmLayerParams.zeros(2, 3), [0.1], CellState.zeros(3))


# -- forward ---------------------------------------------------------------

def test_zero_network_and_constant_head():
    config = ModelConfig(num_step=5, num_hidden=3)
    params = LstmParams.zeros(config)
    assert forward_window(config, params, np.linspace(-1, 1, 5)) == 0.0
    params = random_params(config)
    params.W_out[...] = 0.0
    params.b_out[0] = 0.75
    assert forward_window(config, params, Rng(2).uniform(-1, 1, 5)) == 0.75


def test_two_step_window_matches_scalar_unroll():
    config = ModelConfig(num_step=2, num_hidden=1)
    w, u, b = (0.7, -0.4, 1.1, 0.9), (0.3, 0.5, -0.6, 0.8), (1.0, 0.1, -0.2, 0.05)
    params = LstmParams.zeros(config)
    layer = params.layers[0]
    layer.W[:, 0], layer.U[:, 0], layer.b[:] = w, u, b
    params.W_out[0, 0], params.b_out[0] = 1.5, -0.25
    window = [0.4, -0.8]
    expected = scalar_lstm(window, w, u, b, 1.5, -0.25)
    assert forward_window(config, params, window) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("num_layer,num_feature", [(1, 1), (1, 2), (2, 1), (2, 2)])
def test_forward_matches_cell_steps(num_layer, num_feature):
    config = ModelConfig(num_step=6, num_hidden=4, num_layer=num_layer, num_feature=num_feature)
    params = random_params(config, seed=5)
    window = Rng(6).uniform(-1, 1, (6, num_feature))
    seq = window
    for layer in params.layers:
        state, outs = CellState.zeros(4), []
        for x in seq:
            state, h = lstm_cell_step(layer, x, state)
            outs.append(h)
        seq = np.array(outs)
    expected = params.W_out[0] @ seq[-1] + params.b_out[0]
    assert forward_window(config, params, window) == pytest.approx(expected, rel=1e-12, abs=1e-14)


def test_batch_rows_are_independent():
    config = ModelConfig(num_step=7, num_hidden=5, num_feature=2)
    params = random_params(config, seed=9)
    X = Rng(10).uniform(-1, 1, (150, 7, 2))
    out = forward_batch(config, params, X)
    assert out.shape == (150,)
    same = forward_batch(config, params, np.repeat(X[:1], 10, axis=0))
    assert len(set(same.tolist())) == 1
    perm = Rng(11).permutation(150)
    assert forward_batch(config, params, X[perm]).tobytes() == out[perm].tobytes()
    assert forward_window(config, params, X[3]) == out[3]


def test_forward_is_deterministic():
    config = ModelConfig(num_step=9, num_hidden=6, num_layer=2)
    params = random_params(config, seed=1)
    X = Rng(3).uniform(-1, 1, (100, 9, 1))
    assert forward_batch(config, params, X).tobytes() == forward_batch(config, params, X).tobytes()


def test_forward_shape_errors():
    config = ModelConfig(num_step=4, num_hidden=3, num_feature=2)
    params = random_params(config)
    with pytest.raises(ShapeError):
        forward_batch(config, params, np.zeros((2, 4, 1)))
    with pytest.raises(ShapeError):
        forward_window(config, params, np.zeros((5, 2)))
    with pytest.raises(ShapeError):
        forward_batch(ModelConfig(num_step=4, num_hidden=5, num_feature=2), params, np.zeros((1, 4, 2)))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(num_layer=3)
    with pytest.raises(ValueError):
        ModelConfig(num_feature=0)
    with pytest.raises(ValueError):
        ModelConfig(num_hidden=0)


def test_float32_inference_close_to_float64():
    config = ModelConfig(num_step=16, num_hidden=8)
    params = random_params(config, seed=4)
    X = Rng(5).uniform(-1, 1, (64, 16, 1))
    out64 = forward_batch(config, params, X)
    out32 = forward_batch(config, params.astype(np.float32), X)
    assert out32.dtype == np.float32
    np.testing.assert_allclose(out32, out64, atol=1e-5)


# -- persistence -----------------------------------------------------------

def test_round_trip_bitwise(tmp_path):
    config = ModelConfig(num_step=10, num_hidden=6, num_layer=2, num_feature=2, sample_rate=44100)
    params = init_params(config, "he", Rng(8))
    path = tmp_path / "m.bin"
    save_model(config, params, path)
    config2, params2 = load_model(path)
    assert config2 == config
    for a, b in zip(params.arrays(), params2.arrays()):
        assert a.tobytes() == b.tobytes()
    X = Rng(1).uniform(-1, 1, (50, 10, 2))
    assert forward_batch(config, params, X).tobytes() == forward_batch(config2, params2, X).tobytes()


def test_file_layout_is_gate_major(tmp_path):
    config = ModelConfig(num_step=3, num_hidden=2, num_feature=1, sample_rate=8000)
    params = random_params(config, seed=12)
    path = tmp_path / "m.bin"
    save_model(config, params, path)
    raw = path.read_bytes()
    assert raw[:8] == b"LSTMAMP1"
    assert struct.unpack_from("<6I", raw, 8) == (1, 1, 2, 3, 1, 8000)
    layer = params.layers[0]
    order = ([getattr(layer, f"W_{g}") for g in "fiog"] + [getattr(layer, f"U_{g}") for g in "fiog"]
             + [getattr(layer, f"b_{g}") for g in "fiog"] + [params.W_out, params.b_out])
    expected = b"".join(np.asarray(a, dtype="<f8").tobytes() for a in order)
    assert raw[32:] == expected


def _saved(tmp_path):
    config = ModelConfig(num_step=4, num_hidden=3)
    path = tmp_path / "m.bin"
    save_model(config, random_params(config), path)
    return path


def test_bad_magic(tmp_path):
    path = _saved(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[0:8] = b"NOTAMODL"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        load_model(path)


def test_version_mismatch(tmp_path):
    path = _saved(tmp_path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 8, 2)
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatchError):
        load_model(path)


def test_truncated(tmp_path):
    path = _saved(tmp_path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(TruncatedFileError):
        load_model(path)
    path.write_bytes(MAGIC + b"\x01\x00")
    with pytest.raises(TruncatedFileError):
        load_model(path)


def test_non_finite_weight(tmp_path):
    path = _saved(tmp_path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<d", raw, 32 + 8 * 5, float("nan"))
    path.write_bytes(bytes(raw))
    with pytest.raises(NonFiniteWeightError) as info:
        load_model(path)
    assert "W_i" in str(info.value)


def test_error_codes_are_distinct():
    codes = {cls.code for cls in (BadMagicError, VersionMismatchError, TruncatedFileError,
                                  NonFiniteWeightError)}
    assert len(codes) == 4
    assert all(issubclass(cls, ModelFileError) for cls in
               (BadMagicError, VersionMismatchError, TruncatedFileError, NonFiniteWeightError))


def test_refuses_to_save_non_finite(tmp_path):
    config = ModelConfig(num_step=2, num_hidden=2)
    params = LstmParams.zeros(config)
    params.b_out[0] = np.inf
    with pytest.raises(NonFiniteWeightError):
        save_model(config, params, tmp_path / "m.bin")
    assert not (tmp_path / "m.bin").exists()


def test_loaded_model_rejects_wrong_feature_count(tmp_path):
    path = _saved(tmp_path)
    config, params = load_model(path)
    with pytest.raises(ShapeError):
        forward_batch(config, params, np.zeros((3, 4, 2)))
