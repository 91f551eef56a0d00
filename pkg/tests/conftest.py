import os
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from oscmode import dataset, synthgen, vae

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS, line

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(line(number))


def sine_matrix(freq=10.0, rate=1000.0, n=2000, channels=None, phase=0.0):
    t = np.arange(n) / rate
    channels = channels or (dataset.ChannelDescriptor(0, 0, "T"),)
    cols = [np.sin(2 * np.pi * freq * t + phase + 0.3 * k) for k in range(len(channels))]
    return dataset.FeatureMatrix(np.column_stack(cols), rate, channels)


@pytest.fixture(scope="session")
def dual_suite():
    return synthgen.generate_suite(synthgen.SynthConfig(flames=2))


@pytest.fixture(scope="session")
def dual_model(dual_suite):
    """VAE trained on the default dual-flame suite; shared by the slower tests."""
    data = dataset.concatenate([e.train for e in dual_suite.entries])
    model = vae.build_model(data.n_channels, seed=0)
    cfg = vae.TrainConfig(max_epochs=150, patience=30, seed=0)
    start = time.perf_counter()
    best, history = vae.train(model, data, cfg)
    return best, history, model, time.perf_counter() - start
