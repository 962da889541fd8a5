import numpy as np
import pytest

from tools.dataset import N_SENSORS, InteractionClass, Recording
from tools.synth import ClassTemplate, SynthConfig, synth_dataset


def make_recording(n=60, rate=60.0, label=InteractionClass.NULL, value=1.0, recording_id="rec"):
    t = np.arange(n) / rate
    forces = np.full((n, N_SENSORS), float(value))
    return Recording(t=t, forces=forces, sample_rate_hz=rate, label=label, recording_id=recording_id)


@pytest.fixture
def recording_factory():
    return make_recording


@pytest.fixture(scope="session")
def small_synthetic_set():
    """클래스마다 6개 레코딩 - grouped 5-fold가 가능한 최소 크기"""
    cfg = SynthConfig(rng_seed=11)
    counts = {c: 6 for c in InteractionClass}
    return synth_dataset(cfg, ClassTemplate(), counts)


@pytest.fixture
def blobs():
    """분리 가능한 4개 가우시안 군집 (클래스당 100점)"""
    rng = np.random.default_rng(3)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]])
    X = np.vstack([c + rng.normal(0.0, 0.8, size=(100, 2)) for c in centers])
    y = np.repeat(np.arange(4), 100)
    return X, y
