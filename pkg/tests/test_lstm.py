import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genid import lstm
from genid.dataset import Dataset, Direction, Role, SampleSet, make_sample_set
from genid.errors import InvalidArgumentError, ShapeError, TrainingDivergedError
from genid.series import MultiSeries
from oracles import lstm_gradient_error


def zero_model(hidden=3, layers=2):
    m = lstm.LstmModel.init(2, hidden, layers, 2)
    for k in m.params:
        m.params[k] = np.zeros_like(m.params[k])
    return m


def toy_set(n=5, t_len=100, seed=0):
    """Stable linear plant y_t = 0.8 y_{t-1} + 0.5 x_t driven by smooth inputs."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x = np.cumsum(rng.normal(scale=0.3, size=(t_len, 2)), axis=0)
        x -= x.mean(0)
        y = np.zeros((t_len, 2))
        for t in range(1, t_len):
            y[t] = 0.8 * y[t - 1] + 0.5 * x[t] @ np.array([[1.0, 0.3], [-0.2, 1.0]])
        out.append(Dataset(MultiSeries(10.0, ("V", "phi"), x), MultiSeries(10.0, ("P", "Q"), y)))
    return SampleSet(out)


def small_cfg(**kw):
    base = dict(epochs=3, base_window_len=16, window_len_jitter=4, batch_size=2, seed=0,
                weight_drop_prob=0.2, learning_rate=1e-2)
    base.update(kw)
    return lstm.TrainConfig(**base)


def test_zero_weights_give_zero_output():
    x = np.random.default_rng(0).normal(size=(12, 3, 2))
    y, _, _ = lstm.forward(zero_model(), x)
    assert np.array_equal(y, np.zeros((12, 3, 2)))


def test_zero_drop_probability_is_unmasked():
    model = lstm.LstmModel.init(2, 5, 2, 2, seed=1)
    x = np.random.default_rng(1).normal(size=(9, 2, 2))
    assert lstm.drop_masks(model, 0.0, np.random.default_rng(0)) is None
    ones = [np.ones((5, 20)) for _ in range(2)]
    a = lstm.forward(model, x)[0]
    b = lstm.forward(model, x, masks=ones)[0]
    assert np.array_equal(a, b)


def test_single_cell_hand_trace():
    model = zero_model(hidden=1, layers=1)
    # gate order (i, f, g, o); only the candidate pre-activation is non-zero
    model.params["b0"][2] = math.atanh(0.5)
    model.params["Wy"][0, 0] = 1.0
    y, state, _ = lstm.forward(model, np.zeros((1, 2)))
    i = f = o = 0.5
    g = 0.5
    c = f * 0.0 + i * g
    h = o * math.tanh(c)
    assert y[0, 0] == pytest.approx(h, abs=1e-15)
    assert y[0, 0] == pytest.approx(0.5 * math.tanh(0.5 * 0.5), abs=1e-15)
    assert state[0][1][0, 0] == pytest.approx(0.25, abs=1e-15)


def test_forget_bias_and_init_range():
    model = lstm.LstmModel.init(2, 16, 2, 2, seed=3)
    k = 1 / math.sqrt(16)
    for layer in range(2):
        b = model.params[f"b{layer}"]
        assert np.all(b[16:32] == 1.0)
        assert np.all(np.abs(model.params[f"U{layer}"]) <= k)
        assert np.all(np.abs(model.params[f"W{layer}"]) <= k)


def test_forward_shape_error():
    model = lstm.LstmModel.init(2, 4, 1, 2)
    with pytest.raises(ShapeError):
        lstm.forward(model, np.zeros((5, 3)))
    with pytest.raises(ShapeError):
        lstm.forward(model, np.zeros((5, 2)), masks=[np.ones((3, 3))])


@settings(max_examples=30, deadline=None)
@given(t_len=st.integers(1, 40), batch=st.integers(1, 4), layers=st.integers(1, 3))
def test_output_length_matches_window(t_len, batch, layers):
    model = lstm.LstmModel.init(2, 3, layers, 2, seed=t_len)
    y, _, _ = lstm.forward(model, np.ones((t_len, batch, 2)))
    assert y.shape == (t_len, batch, 2)
    y2, _, _ = lstm.forward(model, np.ones((t_len, 2)))
    assert y2.shape == (t_len, 2)


def test_state_carry_equals_full_sequence():
    model = lstm.LstmModel.init(2, 6, 2, 2, seed=4)
    x = np.random.default_rng(4).normal(size=(30, 2, 2))
    full = lstm.forward(model, x)[0]
    a, state, _ = lstm.forward(model, x[:11])
    b, _, _ = lstm.forward(model, x[11:], state=state)
    assert np.allclose(np.concatenate([a, b]), full, atol=1e-14)


def test_gradient_matches_finite_differences():
    assert lstm_gradient_error(100) < 1e-5


def test_gradient_zero_when_targets_equal_outputs():
    model = lstm.LstmModel.init(2, 4, 2, 2, seed=5)
    x = np.random.default_rng(5).normal(size=(8, 2, 2))
    y, _, cache = lstm.forward(model, x)
    grads = lstm.backward(model, cache, y, y.copy())
    assert all(np.all(g == 0) for g in grads.values())


def test_weight_decay_gradient():
    model = lstm.LstmModel.init(2, 4, 2, 2, seed=6)
    x = np.random.default_rng(6).normal(size=(5, 1, 2))
    y, _, cache = lstm.forward(model, x)
    grads = lstm.backward(model, cache, y, y.copy(), weight_decay=0.05)
    for name, g in grads.items():
        expected = np.zeros_like(g) if name.startswith("b") else 2 * 0.05 * model.params[name]
        assert np.allclose(g, expected, rtol=0, atol=1e-15)


def test_backward_shape_error():
    model = lstm.LstmModel.init(2, 4, 1, 2)
    y, _, cache = lstm.forward(model, np.zeros((5, 2)))
    with pytest.raises(ShapeError):
        lstm.backward(model, cache, y, np.zeros((4, 2)))


def test_dropconnect_expectation_matches_unmasked():
    # tiny weights keep every gate near-linear, so E[forward(masked)] ~ forward(unmasked)
    rng = np.random.default_rng(7)
    model = lstm.LstmModel.init(2, 4, 1, 2, seed=7, forget_bias=0.0)
    for k in model.params:
        model.params[k] = rng.uniform(-1e-3, 1e-3, model.params[k].shape)
    model.params["Wy"] = rng.normal(size=(4, 2))
    x = rng.uniform(-1, 1, (1, 1, 2))
    h0 = rng.uniform(-1, 1, (1, 4))
    state = [(h0, np.zeros((1, 4)))]
    pre = x[0] @ model.params["W0"] + h0 @ (model.params["U0"] * 2) + model.params["b0"]
    assert np.max(np.abs(pre)) < 0.01
    ref = lstm.forward(model, x, state=state)[0][0, 0]
    outs = np.array([lstm.forward(model, x, lstm.drop_masks(model, 0.5, rng), state)[0][0, 0]
                     for _ in range(10_000)])
    se = outs.std(axis=0) / math.sqrt(len(outs))
    assert np.all(np.abs(outs.mean(axis=0) - ref) < 4 * se + 1e-9)


def test_train_config_validation():
    with pytest.raises(InvalidArgumentError):
        lstm.TrainConfig(weight_drop_prob=1.0).validate()
    with pytest.raises(InvalidArgumentError):
        lstm.TrainConfig(base_window_len=10, window_len_jitter=9).validate()
    with pytest.raises(InvalidArgumentError):
        lstm.TrainConfig(grad_clip_norm=0).validate()
    lstm.TrainConfig().validate()


def test_zero_learning_rate_leaves_model_unchanged():
    data = toy_set(3, 40)
    model = lstm.LstmModel.init(2, 5, 2, 2, seed=8)
    trained, report = lstm.train(model, data, None, small_cfg(learning_rate=0.0,
                                                               weight_drop_prob=0.0))
    assert all(np.array_equal(trained.params[k], model.params[k]) for k in model.params)
    assert report.train_mse == pytest.approx([report.train_mse[0]] * 3, rel=1e-12)


def test_training_learns_toy_plant():
    data = toy_set()
    model = lstm.LstmModel.init(2, 8, 1, 2, seed=0)
    before = lstm.evaluate_mse(model, data)
    cfg = small_cfg(epochs=50, weight_drop_prob=0.0)
    trained, report = lstm.train(model, data, data, cfg)
    assert len(report.train_mse) == len(report.valid_mse) == len(report.wall_time) == 50
    assert lstm.evaluate_mse(trained, data) < 0.1 * before


def test_training_is_deterministic():
    data = toy_set(4, 60)
    model = lstm.LstmModel.init(2, 5, 2, 2, seed=9)
    a, ra = lstm.train(model, data, data, small_cfg())
    b, rb = lstm.train(model, data, data, small_cfg())
    assert ra.train_mse == rb.train_mse and ra.valid_mse == rb.valid_mse
    assert np.array_equal(a.flat(), b.flat())
    c, _ = lstm.train(model, data, data, small_cfg(seed=1))
    assert not np.array_equal(a.flat(), c.flat())


def test_training_does_not_touch_input_model():
    data = toy_set(2, 40)
    model = lstm.LstmModel.init(2, 4, 1, 2, seed=10)
    before = model.flat().copy()
    lstm.train(model, data, None, small_cfg())
    assert np.array_equal(model.flat(), before)


def test_diverged_training_raises():
    data = toy_set(2, 40)
    bad = SampleSet([Dataset(d.inputs, d.outputs.with_data(d.outputs.data * 1e200)) for d in data])
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDivergedError):
            lstm.train(lstm.LstmModel.init(2, 4, 1, 2), bad, None, small_cfg(epochs=1))


def test_shape_mismatch_in_training():
    data = toy_set(2, 40)
    with pytest.raises(ShapeError):
        lstm.train(lstm.LstmModel.init(3, 4, 1, 2), data, None, small_cfg())


def test_fine_tune_zero_epochs_is_identity():
    data = toy_set(2, 40)
    model = lstm.LstmModel.init(2, 4, 1, 2, seed=11)
    tuned, report = lstm.fine_tune(model, data, small_cfg(epochs=0))
    assert np.array_equal(tuned.flat(), model.flat())
    assert report.train_mse == []


def test_fine_tune_on_original_data_does_not_forget():
    train = toy_set(6, 80, seed=1)
    held = toy_set(3, 80, seed=2)
    model = lstm.LstmModel.init(2, 8, 1, 2, seed=0)
    model, _ = lstm.train(model, train, held, small_cfg(epochs=30, weight_drop_prob=0.0))
    before = lstm.evaluate_mse(model, held)
    tuned, _ = lstm.fine_tune(model, train, small_cfg(epochs=10, weight_drop_prob=0.0))
    assert lstm.evaluate_mse(tuned, held) <= 1.1 * before


def test_checkpoint_round_trip(tmp_path):
    model = lstm.LstmModel.init(2, 6, 2, 2, seed=12)
    path = tmp_path / "m.ckpt"
    lstm.save_checkpoint(model, path, config={"a": 1}, seed=12, extra={"k": "v"})
    back, header = lstm.load_checkpoint(path)
    assert np.array_equal(back.flat(), model.flat())
    assert header["seed"] == 12 and header["extra"] == {"k": "v"}
    assert header["dims"]["hidden_dim"] == 6


def test_checkpoint_validates_dims(tmp_path):
    model = lstm.LstmModel.init(2, 4, 1, 2)
    path = tmp_path / "m.ckpt"
    lstm.save_checkpoint(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ShapeError):
        lstm.load_checkpoint(path)
    path.write_bytes(raw.replace(b'"hidden_dim": 4', b'"hidden_dim": 5'))
    with pytest.raises(ShapeError):
        lstm.load_checkpoint(path)
    (tmp_path / "junk").write_bytes(b"not a checkpoint")
    with pytest.raises(ShapeError):
        lstm.load_checkpoint(tmp_path / "junk")


def test_prediction_pipeline_equals_manual_standardization():
    from genid.experiment import lstm_predict, lstm_sets

    rng = np.random.default_rng(13)
    labels = ("P", "Q", "V", "phi", "fault")
    series = [MultiSeries(10.0, labels, rng.normal(3, 2, (30, 5))) for _ in range(4)]
    st_, raw, (std_train, std_test) = lstm_sets(series[:3], series[3:])
    model = lstm.LstmModel.init(2, 4, 2, 2, seed=13)
    preds = lstm_predict(model, st_, raw[1])
    x = (series[3].select(("V", "phi")).data - [st_.inputs[k][0] for k in ("V", "phi")]) / [
        st_.inputs[k][1] for k in ("V", "phi")]
    y = lstm.forward(model, x)[0]
    manual = y * [st_.outputs[k][1] for k in ("P", "Q")] + [st_.outputs[k][0] for k in ("P", "Q")]
    assert np.allclose(preds[0].data, manual, rtol=0, atol=1e-12)
    assert np.array_equal(std_test[0].inputs.data, st_.apply(raw[1])[0].inputs.data)
    assert make_sample_set(series[3:], Direction.VPHI_TO_PQ, Role.TEST).output_labels == ("P", "Q")
