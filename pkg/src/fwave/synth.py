"""Synthetic AF-ECG generator used as ground truth for the whole pipeline.

f-waves are sums of harmonics of a slowly frequency-modulated fundamental,
with ``a_k = a_0 * exp(-k * gamma_true / 2)`` so that the power ratio between
the fundamental and the first harmonic is ``exp(gamma_true)``.  An optional
band-limited (3-25 Hz) Gaussian component models disorganised atrial
activity that spreads power between the harmonic peaks.  Ventricular
activity is an analytic QRST morphology (Gaussian Q, R, S and T deflections)
placed at irregular RR intervals.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import signal

from .core import (
    REFERENCE_FS,
    AfDuration,
    ClinicalRecord,
    EcgRecord,
    Outcome,
    PatientFeatureVector,
    Sex,
    Stage,
)
from .cancellation import RPeakList
from .errors import BadParams

# (amplitude relative to R, offset from R in s, width in s)
QRST_SHAPE = (
    (-0.12, -0.030, 0.008),
    (1.00, 0.000, 0.010),
    (-0.30, 0.028, 0.009),
    (0.25, 0.260, 0.045),
)


IRREGULAR_BAND = (3.0, 25.0)


@dataclass(frozen=True)
class FWaveParams:
    f0: float = 6.0
    n_harmonics: int = 4
    gamma_true: float = 2.0
    amplitude: float = 0.05
    freq_jitter: float = 0.0
    phase_noise: float = 0.0
    irregular_ratio: float = 0.0  # broadband power over harmonic power

    def check(self, fs: float | None = None) -> None:
        if not 3.0 <= self.f0 <= 12.0:
            raise BadParams(f"f0 must be in [3, 12] Hz, got {self.f0}")
        if self.n_harmonics < 1:
            raise BadParams("n_harmonics must be >= 1")
        if not self.amplitude > 0:
            raise BadParams("amplitude must be positive")
        if self.freq_jitter < 0 or self.phase_noise < 0:
            raise BadParams("jitter and phase noise must be non-negative")
        if self.irregular_ratio < 0:
            raise BadParams("irregular_ratio must be non-negative")
        if fs is not None and self.irregular_ratio > 0 and IRREGULAR_BAND[1] >= fs / 2:
            raise BadParams("sampling rate too low for the irregular component band")
        if fs is not None and self.n_harmonics * self.f0 >= fs / 2:
            raise BadParams("highest harmonic at or above Nyquist")

    def harmonic_amplitudes(self) -> np.ndarray:
        k = np.arange(self.n_harmonics)
        return self.amplitude * np.exp(-k * self.gamma_true / 2)


@dataclass(frozen=True)
class ArtifactSpec:
    drift_amplitude: float = 0.0  # mV
    drift_freq: float = 0.3
    mains_amplitude: float = 0.0  # mV
    mains_freq: float = 50.0
    noise_snr_db: float | None = None  # f-wave power over white-noise power


class SynthEcg(NamedTuple):
    raw: EcgRecord
    fwave: EcgRecord
    peaks: RPeakList
    ventricular: np.ndarray
    artifacts: np.ndarray


def _smooth_process(rng: np.random.Generator, t: np.ndarray, rms: float,
                    f_lo: float = 0.05, f_hi: float = 0.5, n: int = 3) -> np.ndarray:
    if rms == 0:
        return np.zeros_like(t)
    freqs = rng.uniform(f_lo, f_hi, n)
    phases = rng.uniform(0, 2 * np.pi, n)
    x = np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]).sum(axis=0)
    # n unit sinusoids with distinct frequencies have total power n/2
    return x * rms / math.sqrt(n / 2)


def fwave_samples(params: FWaveParams, duration: float, fs: float, seed) -> np.ndarray:
    params.check(fs)
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    phase = 2 * np.pi * params.f0 * t
    if params.freq_jitter > 0:
        fm = rng.uniform(0.1, 0.3)
        theta = rng.uniform(0, 2 * np.pi)
        # instantaneous deviation sqrt(2)*jitter*sin(...) has RMS == jitter
        dev = math.sqrt(2) * params.freq_jitter
        phase = phase - dev / fm * np.cos(2 * np.pi * fm * t + theta)
    else:
        rng.uniform(size=2)  # keep the stream aligned across jitter settings
    x = np.zeros(n)
    for k, a in enumerate(params.harmonic_amplitudes()):
        phi0 = rng.uniform(0, 2 * np.pi)
        noise = _smooth_process(rng, t, params.phase_noise)
        x += a * np.sin((k + 1) * phase + phi0 + noise)
    if params.irregular_ratio > 0:
        sos = signal.butter(4, IRREGULAR_BAND, btype="bandpass", fs=fs, output="sos")
        w = signal.sosfiltfilt(sos, rng.standard_normal(n))
        x += w * math.sqrt(params.irregular_ratio * np.mean(x**2) / np.mean(w**2))
    return x


def synth_fwave(params: FWaveParams, duration: float = 30.0, fs: float = REFERENCE_FS,
                seed=0, patient_id: str = "") -> EcgRecord:
    return EcgRecord(fwave_samples(params, duration, fs, seed), fs,
                     patient_id=patient_id, stage=Stage.FWAVE)


def qrst_waveform(t: np.ndarray, amplitude: float = 1.0) -> np.ndarray:
    """Analytic QRST complex centred on the R-peak at ``t = 0`` (seconds)."""
    y = np.zeros_like(t, dtype=float)
    for a, mu, sigma in QRST_SHAPE:
        y += a * np.exp(-0.5 * ((t - mu) / sigma) ** 2)
    return amplitude * y


def beat_times(heart_rate: float, rr_irregularity: float, duration: float,
               rng: np.random.Generator) -> np.ndarray:
    """R times (s) of an i.i.d. irregular rhythm, starting before t = 0."""
    mean_rr = 60.0 / heart_rate
    t = -rng.uniform(0, mean_rr)
    times = []
    while t < duration + 1.0:
        times.append(t)
        rr = mean_rr * (1 + rng.uniform(-rr_irregularity, rr_irregularity))
        t += max(rr, 0.3)
    return np.asarray(times)


def synth_ecg(
    fwave_params: FWaveParams = FWaveParams(),
    heart_rate_mean: float = 80.0,
    rr_irregularity: float = 0.2,
    artifact_spec: ArtifactSpec = ArtifactSpec(),
    duration: float = 30.0,
    fs: float = REFERENCE_FS,
    seed=0,
    qrst_amplitude: float = 1.0,
    patient_id: str = "",
) -> SynthEcg:
    """Raw single-lead AF ECG with its ground-truth components.

    ``raw == fwave + ventricular + artifacts`` sample by sample.
    """
    if not 40 <= heart_rate_mean <= 180:
        raise BadParams(f"heart rate must be in [40, 180] bpm, got {heart_rate_mean}")
    if not 0 <= rr_irregularity < 0.7:
        raise BadParams("rr_irregularity must be in [0, 0.7)")
    fwave_params.check(fs)
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    s_fwave, s_beats, s_art = ss.spawn(3)

    n = int(round(duration * fs))
    fw = fwave_samples(fwave_params, duration, fs, s_fwave)

    rng = np.random.default_rng(s_beats)
    times = np.round(beat_times(heart_rate_mean, rr_irregularity, duration, rng) * fs) / fs
    vent = np.zeros(n)
    half = int(round(0.6 * fs))
    for tb in times:
        c = int(round(tb * fs))
        lo, hi = max(0, c - half), min(n, c + half)
        if lo >= hi:
            continue
        tt = (np.arange(lo, hi) - c) / fs
        vent[lo:hi] += qrst_waveform(tt, qrst_amplitude)
    idx = np.round(times * fs).astype(np.int64)
    peaks = RPeakList(idx[(idx >= 0) & (idx < n)], fs)

    rng = np.random.default_rng(s_art)
    t = np.arange(n) / fs
    art = np.zeros(n)
    a = artifact_spec
    if a.drift_amplitude:
        art += a.drift_amplitude * np.sin(2 * np.pi * a.drift_freq * t + rng.uniform(0, 2 * np.pi))
    if a.mains_amplitude:
        art += a.mains_amplitude * np.sin(2 * np.pi * a.mains_freq * t + rng.uniform(0, 2 * np.pi))
    if a.noise_snr_db is not None:
        p_fw = float(np.mean(fw**2))
        art += rng.normal(0.0, math.sqrt(p_fw / 10 ** (a.noise_snr_db / 10)), n)

    raw = EcgRecord(fw + vent + art, fs, patient_id=patient_id, stage=Stage.RAW)
    truth = EcgRecord(fw, fs, patient_id=patient_id, stage=Stage.FWAVE)
    return SynthEcg(raw, truth, peaks, vent, art)


# --- cohorts ---------------------------------------------------------------

@dataclass(frozen=True)
class CohortSpec:
    """Group-wise generator settings; defaults are the reference SR and AF group statistics.

    ``(mean, sd)`` pairs are drawn as Gaussians.  With ``moment_match`` each
    group's draws are standardised to exactly the requested mean and SD before
    clipping, which removes most of the sampling scatter of small cohorts.
    """

    n_sr: int = 103
    n_af: int = 48
    f0_sr: tuple[float, float] = (5.69, 1.12)
    f0_af: tuple[float, float] = (6.14, 0.99)
    gamma_sr: tuple[float, float] = (2.20, 0.77)
    gamma_af: tuple[float, float] = (2.80, 0.57)
    irregular_sr: tuple[float, float] = (0.55, 0.25)
    irregular_af: tuple[float, float] = (0.38, 0.15)
    snr_db: tuple[float, float] = (15.0, 3.0)
    freq_jitter: float = 0.05
    phase_noise: float = 0.1
    n_harmonics: int = 4
    amplitude: tuple[float, float] = (0.05, 0.015)
    heart_rate: tuple[float, float] = (80.0, 10.0)
    rr_irregularity: float = 0.2
    drift_amplitude: float = 0.1
    mains_amplitude: float = 0.02
    duration: float = 30.0
    fs: float = REFERENCE_FS
    moment_match: bool = True
    seed: int = 0

    def check(self) -> None:
        if self.n_sr < 1 or self.n_af < 1:
            raise BadParams("group sizes must be >= 1")
        for name in ("f0_sr", "f0_af", "gamma_sr", "gamma_af", "irregular_sr",
                     "irregular_af", "snr_db",
                     "amplitude", "heart_rate"):
            if getattr(self, name)[1] < 0:
                raise BadParams(f"{name}: SD must be >= 0")
        if self.duration < 6.0:
            raise BadParams("duration must be at least 6 s")


@dataclass(frozen=True)
class PatientTruth:
    patient_id: str
    outcome: Outcome
    fwave: FWaveParams
    heart_rate: float
    snr_db: float
    seed_entropy: tuple[int, ...] = field(default=())


def _draw(rng: np.random.Generator, n: int, mean: float, sd: float, lo: float, hi: float,
          moment_match: bool) -> np.ndarray:
    x = rng.normal(mean, sd, n)
    if moment_match and n > 1 and sd > 0:
        z = (x - x.mean()) / x.std(ddof=1)
        x = mean + sd * z
    elif moment_match:
        x = np.full(n, mean)
    return np.clip(x, lo, hi)


def draw_patients(spec: CohortSpec) -> list[PatientTruth]:
    """Per-patient generator parameters, in a shuffled (label-free) order."""
    spec.check()
    root = np.random.SeedSequence(spec.seed)
    s_params, s_order, s_patients = root.spawn(3)
    rng = np.random.default_rng(s_params)
    groups = []
    for outcome, n, f0, gam, irr in (
        (Outcome.SR, spec.n_sr, spec.f0_sr, spec.gamma_sr, spec.irregular_sr),
        (Outcome.AF, spec.n_af, spec.f0_af, spec.gamma_af, spec.irregular_af),
    ):
        mm = spec.moment_match
        cols = (
            _draw(rng, n, *f0, 3.5, 11.0, mm),
            _draw(rng, n, *gam, 0.3, 6.0, mm),
            _draw(rng, n, *irr, 0.0, 3.0, mm),
            _draw(rng, n, *spec.snr_db, 0.0, 40.0, False),
            _draw(rng, n, *spec.amplitude, 0.01, 0.3, False),
            _draw(rng, n, *spec.heart_rate, 45.0, 150.0, False),
        )
        groups.extend((outcome, *map(float, row)) for row in zip(*cols))
    order = np.random.default_rng(s_order).permutation(len(groups))
    children = s_patients.spawn(len(groups))
    out = []
    for i, k in enumerate(order):
        outcome, f0, g, irr, snr, a, hr = groups[k]
        fp = FWaveParams(f0=f0, n_harmonics=spec.n_harmonics, gamma_true=g, amplitude=a,
                         freq_jitter=spec.freq_jitter, phase_noise=spec.phase_noise,
                         irregular_ratio=irr)
        out.append(PatientTruth(f"P{i + 1:04d}", outcome, fp, hr, snr,
                                tuple(int(v) for v in children[i].generate_state(4))))
    return out


def patient_ecg(truth: PatientTruth, spec: CohortSpec) -> SynthEcg:
    art = ArtifactSpec(drift_amplitude=spec.drift_amplitude,
                       mains_amplitude=spec.mains_amplitude,
                       noise_snr_db=truth.snr_db)
    return synth_ecg(truth.fwave, truth.heart_rate, spec.rr_irregularity, art,
                     spec.duration, spec.fs, np.random.SeedSequence(list(truth.seed_entropy)),
                     patient_id=truth.patient_id)


def _process_patient(args) -> PatientFeatureVector:
    from .cohort import process_record

    truth, spec = args
    ecg = patient_ecg(truth, spec)
    return process_record(ecg.raw, outcome=truth.outcome)


def synth_cohort(spec: CohortSpec = CohortSpec(), jobs: int = 1):
    """Synthesize every patient's ECG and run the full feature pipeline on it.

    Returns ``(cohort, truths)``; the cohort carries clinical records drawn to
    match the per-group baseline characteristics in ``CLINICAL_TABLE``.
    """
    from .cohort import Cohort

    truths = draw_patients(spec)
    work = [(t, spec) for t in truths]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            vectors = list(ex.map(_process_patient, work, chunksize=4))
    else:
        vectors = [_process_patient(w) for w in work]
    clinical = synth_clinical(truths, spec.seed)
    return Cohort(tuple(vectors), {c.patient_id: c for c in clinical}), truths


# Baseline characteristics per group: P(male), age (mean, sd),
# P(AF duration class), BMI (mean, sd), LA diameter (mean, sd).
CLINICAL_TABLE = {
    Outcome.SR: (79 / 103, (59.37, 12.24), (6 / 103, 70 / 103, 27 / 103), (27.79, 3.55), (44.11, 5.70)),
    Outcome.AF: (37 / 48, (57.23, 12.82), (6 / 48, 31 / 48, 11 / 48), (29.06, 4.86), (45.65, 5.32)),
}


def synth_clinical(truths: list[PatientTruth], seed: int = 0) -> list[ClinicalRecord]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    classes = (AfDuration.LT_1Y, AfDuration.Y1_3, AfDuration.GT_3Y)
    out = []
    for t in truths:
        p_male, age, dur, bmi, la = CLINICAL_TABLE[t.outcome]
        out.append(ClinicalRecord(
            patient_id=t.patient_id,
            sex=Sex.MALE if rng.random() < p_male else Sex.FEMALE,
            age=float(np.clip(rng.normal(*age), 20, 82)),
            af_duration_class=classes[int(rng.choice(3, p=dur))],
            bmi=float(np.clip(rng.normal(*bmi), 16, 50)),
            la_diameter=float(np.clip(rng.normal(*la), 25, 70)),
        ))
    return out
