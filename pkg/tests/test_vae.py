import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oscmode import dataset, synthgen, vae
from oscmode.errors import DataError, FormatError, ShapeError
from oscmode.rng import Rng

from oracles import gradient_check, random_draw


def zero_model(m):
    model = vae.build_model(m, seed=0)
    for p in model.params():
        p[...] = 0.0
    return model


@pytest.mark.parametrize("m,widths", [(160, [160, 128, 43, 8, 2]), (240, [240, 192, 65, 8, 2]),
                                      (80, [80, 64, 22, 8, 2])])
def test_widths(m, widths):
    model = vae.build_model(m, seed=1)
    assert model.widths() == widths
    dec = [model.latent_dim] + [l.n_out for l in model.decoder]
    assert dec == widths[::-1]
    assert model.decoder[-1].activation == vae.SIGMOID
    assert all(l.activation == vae.RELU for l in model.encoder + model.decoder[:-1])


def test_hidden_width_floor_and_small_m():
    assert vae.hidden_widths(10) == (8, 8)
    with pytest.raises(ShapeError):
        vae.build_model(3)


def test_orthogonal_init_and_isometry():
    model = vae.build_model(30, seed=4)
    W = model.orthogonal.W
    assert np.max(np.abs(W.T @ W - np.eye(30))) <= 1e-6
    xp = vae.decode(model, np.array([0.3, -0.2]))
    out = vae.orthogonal_out(model, xp)
    assert abs(np.linalg.norm(out - model.orthogonal.b) - np.linalg.norm(xp)) < 1e-6


def test_init_bounds_and_determinism():
    a, b = vae.build_model(20, seed=9), vae.build_model(20, seed=9)
    for p, q in zip(a.params(), b.params()):
        assert np.array_equal(p, q)
    for layer in a.encoder:
        assert np.all(np.abs(layer.W) <= math.sqrt(6 / layer.n_in)) and not np.any(layer.b)
    c = vae.build_model(20, seed=10)
    assert not np.array_equal(a.encoder[0].W, c.encoder[0].W)


def test_zero_parameters():
    model = zero_model(12)
    mu, ls = vae.encode(model, np.linspace(0, 1, 12))
    assert mu.tolist() == [0.0, 0.0] and ls.tolist() == [0.0, 0.0]
    np.testing.assert_array_equal(vae.decode(model, np.array([0.4, 1.0])), np.full(12, 0.5))


def test_encode_deterministic_and_shape_checked():
    model = vae.build_model(160, seed=2)
    x = Rng(0).random(160)
    a, b = vae.encode(model, x), vae.encode(model, x.copy())
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert a[0].shape == (2,) and a[1].shape == (2,)
    with pytest.raises(ShapeError):
        vae.encode(model, np.zeros(159))
    with pytest.raises(ShapeError):
        vae.decode(model, np.zeros(3))


def test_reparameterize_examples():
    assert vae.reparameterize([1, 2], [0, 0], [0, 0]).tolist() == [1, 2]
    assert vae.reparameterize([1, 2], [0, 0], [1, -1]).tolist() == [2, 1]
    np.testing.assert_allclose(vae.reparameterize([0, 0], [math.log(2)] * 2, [1, 1]), [2, 2], rtol=1e-15)
    np.testing.assert_allclose(vae.reparameterize([0, 0], [math.log(2)] * 2, [1, 1], variance_scaling=True),
                               [4, 4], rtol=1e-15)


def test_loss_examples():
    assert vae.loss([0.2, 0.4], [0.2, 0.4], [0, 0], [0, 0]) == (0.0, 0.0, 0.0)
    rec, kl, total = vae.loss([0.1, 0.1], [0.1, 0.1], [1, 0], [0, 0])
    assert rec == 0 and kl == 0.5 and total == 0.5
    assert vae.loss([0, 0], [1, 1], [0, 0], [0, 0])[0] == 1.0
    assert vae.loss([0, 0], [1, 1], [0, 0], [0, 0], reduction="sum")[0] == 2.0


@given(arrays(np.float64, (3, 2), elements=st.floats(-4, 4)), arrays(np.float64, (3, 2), elements=st.floats(-3, 3)))
def test_kl_nonnegative(mu, logsigma):
    _, kl, _ = vae.loss(np.zeros((3, 1)), np.zeros((3, 1)), mu, logsigma)
    assert kl >= -1e-12
    if np.allclose(mu, 0) and np.allclose(logsigma, 0):
        assert abs(kl) < 1e-12


@pytest.mark.parametrize("reduction", ["mean", "sum"])
@pytest.mark.parametrize("variance_scaling", [False, True])
def test_gradients_match_finite_differences(reduction, variance_scaling):
    rng = Rng(11)
    for draw in range(3):
        model, x, zeta = random_draw(7, seed=draw, rng=rng, variance_scaling=variance_scaling)
        assert gradient_check(model, x, zeta, reduction) < 1e-4


def test_rec_gradient_wrt_output_and_kl_stationary_point():
    # all-zero parameters: x' = 0.5, x'' = b_orth = 0, mu = 0, sigma = 1
    m = 5
    model = zero_model(m)
    x = np.full((1, m), 0.2)
    grads, _ = vae.backward(model, x, np.zeros((1, 2)))
    params = model.params()
    idx = {name: 2 * i for i, (name, _) in enumerate(model.named_layers())}
    # d loss / d b_orthogonal equals d loss / d x'' = 2 (x'' - x) / m
    np.testing.assert_allclose(grads[idx["orthogonal"] + 1], 2 * (0.0 - 0.2) / m * np.ones(m))
    # KL is stationary at mu = 0, log sigma = 0 and no other path reaches the heads here
    assert not np.any(grads[idx["mu"] + 1]) and not np.any(grads[idx["logsigma"] + 1])
    assert len(grads) == len(params)


def test_adam_examples():
    p = [np.array([1.0, -2.0])]
    state = vae.AdamState.zeros_like(p)
    assert state.t == 0 and not np.any(state.m[0])
    vae.adam_step(p, [np.zeros(2)], state, lr=0.1)
    assert p[0].tolist() == [1.0, -2.0]

    g = np.array([0.3, -0.003])
    p = [np.array([0.0, 0.0])]
    vae.adam_step(p, [g], vae.AdamState.zeros_like(p), lr=0.01)
    # first step: m_hat = g, v_hat = g^2, so the move is lr * |g| / (|g| + eps) against g
    np.testing.assert_allclose(p[0], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)

    q = [np.array([5.0, 5.0])]
    vae.adam_step(q, [np.array([0.7, 0.7])], vae.AdamState.zeros_like(q), lr=0.02)
    assert q[0][0] == q[0][1]


def test_train_config_validation():
    for bad in ({"val_fraction": 0.0}, {"val_fraction": 1.0}, {"patience": 0}, {"rec_reduction": "max"},
                {"batch_size": 0}, {"learning_rate": 0.0}):
        with pytest.raises(DataError):
            vae.TrainConfig(**bad)


def small_data(n=400, sensors=2, mode="IP", seed=0, noise=0.02):
    cfg = synthgen.SynthConfig(sensors_per_flame=sensors, duration=n / 1000, noise_std=noise, seed=seed)
    return synthgen.generate(cfg, synthgen.standard_mode(mode, 2))[0]


def test_train_history_and_best_model_contract():
    data = small_data()
    cfg = vae.TrainConfig(max_epochs=25, patience=5, batch_size=32, learning_rate=3e-3, seed=1)
    model = vae.build_model(data.n_channels, seed=1)
    best, history = vae.train(model, data, cfg)
    assert 1 <= len(history) <= 25
    for r in history:
        assert abs(r.val_loss - (r.rec + r.kl)) <= 1e-9
    x = dataset.normalize_values(best.normalizer, data.values)
    order = Rng(vae.derive_seed(1, "train")).permutation(len(x))
    n_val = int(round(0.2 * len(x)))
    mse, kl = vae._evaluate(best, x[order[-n_val:]])
    assert abs(mse * data.n_channels + kl - min(r.val_loss for r in history)) < 1e-9
    assert best.training_config["batch_size"] == 32
    # the input model is left untouched
    assert model.normalizer is None


def test_train_is_deterministic():
    data = small_data(n=300)
    cfg = vae.TrainConfig(max_epochs=4, batch_size=16, seed=5)
    a, ha = vae.train(vae.build_model(data.n_channels, seed=5), data, cfg)
    b, hb = vae.train(vae.build_model(data.n_channels, seed=5), data, cfg)
    assert ha == hb
    for p, q in zip(a.params(), b.params()):
        assert np.array_equal(p, q)


def test_early_stop_with_patience_one():
    """A vanishing learning rate leaves validation flat, so epoch 1 stays the best."""
    data = small_data(n=300)
    cfg = vae.TrainConfig(max_epochs=50, patience=1, learning_rate=1e-300, seed=0)
    model = vae.build_model(data.n_channels, seed=0)
    best, history = vae.train(model, data, cfg)
    assert len(history) == 2
    first, _ = vae.train(model, data, vae.TrainConfig(max_epochs=1, patience=1, learning_rate=1e-300, seed=0))
    for p, q in zip(best.params(), first.params()):
        np.testing.assert_array_equal(p, q)


def test_train_rejects_mismatched_width():
    data = small_data(n=200)
    with pytest.raises(ShapeError):
        vae.train(vae.build_model(data.n_channels + 1), data, vae.TrainConfig(max_epochs=1))


def test_project_rows_and_identical_rows():
    data = small_data(n=300)
    model = vae.build_model(data.n_channels, seed=0)
    model.normalizer = dataset.fit_normalizer(data)
    traj = vae.project(model, data)
    assert traj.points.shape == (300, 2) and traj.sample_rate == 1000.0
    same = data.with_values(np.repeat(data.values[:1], 5, axis=0))
    pts = vae.project(model, same).points
    assert np.all(pts == pts[0])


def test_identity_like_model_has_zero_mse():
    """Contrived parameters: the decoder output x' is a constant c and b_orth absorbs x - c."""
    m = 6
    model = zero_model(m)
    x = np.full((3, m), 0.25)
    model.orthogonal.W[...] = 0.0
    model.orthogonal.b[...] = 0.25
    data = dataset.FeatureMatrix(x, 100.0, tuple(dataset.ChannelDescriptor(0, j, "U") for j in range(m)))
    assert vae.reconstruction_mse(model, data) == 0.0


def test_periodic_input_gives_periodic_latent():
    data = small_data(n=600, noise=0.0)
    model, _ = vae.train(vae.build_model(data.n_channels, seed=2), data,
                         vae.TrainConfig(max_epochs=5, batch_size=32, seed=2))
    z = vae.project(model, data).points
    np.testing.assert_allclose(z[100:], z[:-100], atol=1e-3, rtol=0)


def test_model_json_round_trip(tmp_path):
    data = small_data(n=200)
    model = vae.build_model(data.n_channels, seed=3)
    model.normalizer = dataset.fit_normalizer(data)
    model.training_config = vae.TrainConfig().to_dict()
    path = tmp_path / "m.json"
    vae.save_model(path, model)
    back = vae.load_model(path)
    for p, q in zip(model.params(), back.params()):
        assert np.array_equal(p, q)
    assert np.array_equal(back.normalizer.min, model.normalizer.min)
    assert back.training_config == model.training_config
    text = path.read_text()
    vae.save_model(tmp_path / "again.json", back)
    assert (tmp_path / "again.json").read_text() == text
    with pytest.raises(FormatError):
        vae.from_dict({"layers": []})


@pytest.mark.slow
def test_training_reduces_reconstruction_loss_tenfold(dual_suite, dual_model):
    best, history, untrained, _ = dual_model
    pred = dataset.concatenate([e.predict for e in dual_suite.entries])
    start = untrained.copy()
    start.normalizer = best.normalizer
    assert vae.reconstruction_mse(start, pred) >= 10 * vae.reconstruction_mse(best, pred)
    assert len(history) <= 150
