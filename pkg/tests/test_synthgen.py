import json
import math

import numpy as np
import pytest

from oscmode import dataset, synthgen
from oscmode.errors import ConfigError, ShapeError
from oscmode.synthgen import ModeSpec, SynthConfig

CLEAN = SynthConfig(noise_std=0.0, sensors_per_flame=3)


def fundamental_phase(x, rate, freq):
    n = len(x)
    k = int(round(freq * n / rate))
    return float(np.angle(np.fft.rfft(x)[k]))


def wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def column(data, flame, sensor, var):
    return data.channels.index(dataset.ChannelDescriptor(flame, sensor, var))


def test_death_with_zero_amplitude_is_constant_baseline():
    data, label = synthgen.generate(CLEAN, ModeSpec("DEATH", (0.0, 0.0), 0.0))
    assert label == "DEATH"
    base, _ = synthgen.ramp_constants(3)
    expected = np.tile(base.reshape(-1), 2)
    np.testing.assert_array_equal(data.values, np.broadcast_to(expected, data.values.shape))


def test_anti_phase_fundamental_difference_is_pi():
    data, _ = synthgen.generate(CLEAN, synthgen.standard_mode("AP", 2))
    for j in range(3):
        for v in dataset.VARIABLES:
            p0 = fundamental_phase(data.values[:, column(data, 0, j, v)], 1000, 10)
            p1 = fundamental_phase(data.values[:, column(data, 1, j, v)], 1000, 10)
            assert abs(abs(wrap(p1 - p0)) - math.pi) < 1e-6


def test_rotation_pairwise_phase_differences():
    cfg = SynthConfig(flames=3, noise_std=0.0, sensors_per_flame=2)
    data, _ = synthgen.generate(cfg, synthgen.standard_mode("ROTATION", 3))
    phases = [fundamental_phase(data.values[:, column(data, i, 1, "T")], 1000, 10) for i in range(3)]
    diffs = sorted(abs(wrap(phases[b] - phases[a])) for a, b in ((0, 1), (1, 2), (0, 2)))
    np.testing.assert_allclose(diffs, [2 * math.pi / 3] * 3, atol=1e-6)


def test_sensor_lag_shifts_phase():
    data, _ = synthgen.generate(CLEAN, synthgen.standard_mode("IP", 2))
    p0 = fundamental_phase(data.values[:, column(data, 0, 0, "U")], 1000, 10)
    p2 = fundamental_phase(data.values[:, column(data, 0, 2, "U")], 1000, 10)
    assert abs(wrap(p2 - p0) - 2 * synthgen.SENSOR_LAG) < 1e-6


def test_mode_spec_validation():
    ModeSpec("ROTATION", (1.0, 1.0 + 4 * math.pi / 3, 1.0 + 2 * math.pi / 3))
    ModeSpec("PIP", (math.pi, 0.0, 0.0))
    with pytest.raises(ConfigError):
        ModeSpec("AP", (0.0, 1.0))
    with pytest.raises(ConfigError):
        ModeSpec("IP", (0.0, 0.5))
    with pytest.raises(ConfigError):
        ModeSpec("DEATH", (0.0, 0.0), 0.2)
    with pytest.raises(ConfigError):
        ModeSpec("SPIN", (0.0,))
    with pytest.raises(ConfigError):
        synthgen.standard_mode("ROTATION", 2)


def test_offset_count_mismatch():
    with pytest.raises(ShapeError):
        synthgen.generate(SynthConfig(flames=3), synthgen.standard_mode("AP", 2))


def test_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(sample_rate=15.0)
    with pytest.raises(ConfigError):
        SynthConfig(duration=0.1)
    with pytest.raises(ConfigError):
        SynthConfig(flames=4)
    with pytest.raises(ConfigError):
        SynthConfig(death_amplitude=0.5)


@pytest.mark.parametrize("flames,modes,channels", [(2, ["IP", "AP"], 160),
                                                   (3, ["IP", "DEATH", "ROTATION", "PIP"], 240)])
def test_suite_shapes(flames, modes, channels):
    suite = synthgen.generate_suite(SynthConfig(flames=flames))
    assert suite.labels == modes
    for e in suite.entries:
        assert e.train.n_channels == channels and e.predict.n_channels == channels
        assert e.train.n_samples >= 50 * 100 and e.predict.n_samples >= 20 * 100
        assert not np.array_equal(e.train.values[:100], e.predict.values[:100])


def test_single_flame_suite():
    suite = synthgen.generate_suite(SynthConfig(flames=1))
    assert len(suite.entries) == 1
    e = suite.entries[0]
    assert e.label is None and e.predict is None and e.train.n_channels == 80


def test_determinism_and_seed_sensitivity():
    mode = synthgen.standard_mode("IP", 2)
    a, _ = synthgen.generate(SynthConfig(sensors_per_flame=2), mode)
    b, _ = synthgen.generate(SynthConfig(sensors_per_flame=2), mode)
    c, _ = synthgen.generate(SynthConfig(sensors_per_flame=2, seed=1), mode)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


@pytest.mark.parametrize("name", ["IP", "PIP", "ROTATION", "DEATH"])
def test_noise_free_is_periodic(name):
    cfg = SynthConfig(flames=3, noise_std=0.0, sensors_per_flame=2)
    data, _ = synthgen.generate(cfg, synthgen.standard_mode(name, 3))
    np.testing.assert_allclose(data.values[100:], data.values[:-100], atol=1e-9, rtol=0)


def test_death_range_bound():
    cfg = SynthConfig(flames=3, sensors_per_flame=20)
    data, _ = synthgen.generate(cfg, synthgen.standard_mode("DEATH", 3))
    _, amp = synthgen.ramp_constants(20)
    a = np.tile(amp.reshape(-1), 3)
    half_range = 0.5 * np.ptp(data.values, axis=0)
    # waveform peak is at most 1 + h2 of the amplitude
    bound = 0.05 * (1 + cfg.harmonic2_fraction) * a + 6 * cfg.noise_std * a
    assert np.all(half_range <= bound)
    # looser form: scale times the variable's largest amplitude plus six noise sigmas
    max_a = np.tile(np.broadcast_to(amp.max(axis=0), amp.shape).reshape(-1), 3)
    assert np.all(half_range <= 0.05 * max_a + 6 * cfg.noise_std * a)


def test_noise_scales_with_channel_amplitude():
    cfg = SynthConfig(sensors_per_flame=20, noise_std=0.02)
    noisy, _ = synthgen.generate(cfg, synthgen.standard_mode("IP", 2))
    clean, _ = synthgen.generate(SynthConfig(sensors_per_flame=20, noise_std=0.0), synthgen.standard_mode("IP", 2))
    resid = (noisy.values - clean.values).std(axis=0)
    _, amp = synthgen.ramp_constants(20)
    np.testing.assert_allclose(resid / np.tile(amp.reshape(-1), 2), 0.02, rtol=0.1)


def test_write_suite_and_manifest(tmp_path):
    suite = synthgen.generate_suite(SynthConfig(sensors_per_flame=2, duration=0.5, predict_duration=0.3))
    path = synthgen.write_suite(suite, tmp_path / "d")
    raw = json.loads(path.read_text())
    assert raw == {"IP": {"train": "IP_train.csv", "predict": "IP_predict.csv"},
                   "AP": {"train": "AP_train.csv", "predict": "AP_predict.csv"}}
    resolved = synthgen.read_manifest(path)
    back = dataset.load_csv(resolved["AP"]["predict"])
    np.testing.assert_allclose(back.values, suite.entries[1].predict.values, atol=1e-12)
