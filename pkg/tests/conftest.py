import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fwave.core import EcgRecord, FWaveSegment, Stage
from fwave.synth import FWaveParams, synth_ecg

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FS = 977.0


def tone(freq, duration=6.0, fs=FS, amp=1.0, phase=0.0):
    t = np.arange(int(round(duration * fs))) / fs
    return amp * np.sin(2 * np.pi * freq * t + phase)


def segment(x, fs=FS):
    return FWaveSegment(np.asarray(x, dtype=float), fs, 0, "test")


def record(x, fs=FS, stage=Stage.RAW, **kw):
    return EcgRecord(np.asarray(x, dtype=float), fs, stage=stage, **kw)


@pytest.fixture(scope="session")
def mixture():
    """A 30 s f-wave + QRST mixture without artifacts."""
    return synth_ecg(FWaveParams(f0=5.7, gamma_true=2.0), seed=11)


@pytest.fixture(scope="session")
def default_cohort():
    """The default 103/48 synthetic cohort, run through the full pipeline (seed 0)."""
    from fwave.synth import CohortSpec, synth_cohort

    return synth_cohort(CohortSpec())
