"""Shared data types for single-lead ECG / f-wave analysis.

Amplitudes are millivolts throughout, power spectral densities mV^2/Hz and
peak powers (``w_f0``, ``w_f1``) mV^2, i.e. one PSD bin times the bin width.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import BadSamplingRate, EmptyRecord, NonFiniteSample

REFERENCE_FS = 977.0
SEGMENT_SECONDS = 6.0
MAX_SEGMENTS = 5
FREQ_STEP = 0.1
TF_BAND = (3.0, 25.0)

TOO_SHORT_FLAG = "too_short_for_segmentation"


class Stage(str, enum.Enum):
    RAW = "raw"
    PREPROCESSED = "preprocessed"
    FWAVE = "fwave"


class Outcome(str, enum.Enum):
    SR = "SR"
    AF = "AF"
    UNKNOWN = "unknown"


class BandKind(str, enum.Enum):
    LF = "LF"
    HF = "HF"
    TF = "TF"


class Sex(str, enum.Enum):
    MALE = "male"
    FEMALE = "female"


class AfDuration(str, enum.Enum):
    LT_1Y = "<1y"
    Y1_3 = "1-3y"
    GT_3Y = ">3y"


def _frozen_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True).reshape(-1)
    if arr.size == 0:
        raise EmptyRecord(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise NonFiniteSample(f"{name} has a non-finite value at index {bad}")
    arr.setflags(write=False)
    return arr


def rescale_samples(n_at_reference: int, fs: float) -> int:
    """Rescale a sample count defined at 977 Hz to ``fs``."""
    return int(round(n_at_reference * fs / REFERENCE_FS))


@dataclass(frozen=True, eq=False)
class EcgRecord:
    """Single-lead ECG samples (mV) plus acquisition metadata."""

    samples: np.ndarray
    sampling_rate: float = REFERENCE_FS
    lead: str = "V1"
    patient_id: str = ""
    stage: Stage = Stage.RAW
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        fs = float(self.sampling_rate)
        if not math.isfinite(fs) or fs <= 0:
            raise BadSamplingRate(f"sampling rate must be positive, got {self.sampling_rate!r}")
        object.__setattr__(self, "sampling_rate", fs)
        object.__setattr__(self, "samples", _frozen_array(self.samples, "samples"))
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "flags", tuple(self.flags))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sampling_rate

    def replace(self, **changes) -> EcgRecord:
        return dataclasses.replace(self, **changes)

    def with_flag(self, flag: str) -> EcgRecord:
        if flag in self.flags:
            return self
        return self.replace(flags=self.flags + (flag,))


def validate_record(record: EcgRecord) -> EcgRecord:
    """Re-check record invariants and flag records too short to segment.

    Construction already enforces finiteness, non-emptiness and a positive
    sampling rate; this is the explicit gate used on data read from disk,
    where arrays may have been mutated or built by hand.
    """
    fs = record.sampling_rate
    if not math.isfinite(fs) or fs <= 0:
        raise BadSamplingRate(f"sampling rate must be positive, got {fs!r}")
    samples = np.asarray(record.samples, dtype=float)
    if samples.size == 0:
        raise EmptyRecord("record has no samples")
    if not np.all(np.isfinite(samples)):
        raise NonFiniteSample("record contains NaN or infinite samples")
    if samples.size < segment_length(fs):
        return record.with_flag(TOO_SHORT_FLAG)
    return record


def segment_length(fs: float) -> int:
    return int(round(SEGMENT_SECONDS * fs))


@dataclass(frozen=True, eq=False)
class FWaveSegment:
    samples: np.ndarray
    sampling_rate: float
    segment_index: int = 0
    patient_id: str = ""

    def __post_init__(self):
        fs = float(self.sampling_rate)
        if not math.isfinite(fs) or fs <= 0:
            raise BadSamplingRate(f"sampling rate must be positive, got {self.sampling_rate!r}")
        object.__setattr__(self, "sampling_rate", fs)
        arr = _frozen_array(self.samples, "segment")
        if arr.size != segment_length(fs):
            raise ValueError(
                f"segment must hold {segment_length(fs)} samples (6 s), got {arr.size}"
            )
        if self.segment_index < 0:
            raise ValueError("segment_index must be >= 0")
        object.__setattr__(self, "samples", arr)


@dataclass(frozen=True, eq=False)
class PowerSpectrum:
    """PSD on a uniform grid: ``values[k]`` is the density at ``f_start + k * f_step``."""

    values: np.ndarray
    f_start: float = 0.0
    f_step: float = FREQ_STEP

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if vals.size == 0 or not np.all(np.isfinite(vals)):
            raise ValueError("spectrum values must be finite and non-empty")
        if np.any(vals < 0):
            raise ValueError("spectrum values must be non-negative")
        if abs(self.f_step - FREQ_STEP) > 1e-12:
            raise ValueError(f"f_step must be {FREQ_STEP} Hz, got {self.f_step}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "f_start", float(self.f_start))
        object.__setattr__(self, "f_step", float(self.f_step))

    @property
    def frequencies(self) -> np.ndarray:
        return self.f_start + self.f_step * np.arange(self.values.size)

    @property
    def f_max(self) -> float:
        return self.frequency_of(self.values.size - 1)

    def index_of(self, f: float) -> int:
        return int(round((f - self.f_start) / self.f_step))

    def frequency_of(self, k: int) -> float:
        # rounded to the grid so that repeated conversions do not drift
        return round(self.f_start + k * self.f_step, 10)


@dataclass(frozen=True)
class Band:
    """Closed-open frequency band ``[f_lower, f_upper)``; TF includes its 25 Hz edge."""

    f_lower: float
    f_upper: float
    kind: BandKind

    def __post_init__(self):
        object.__setattr__(self, "kind", BandKind(self.kind))
        if not 0 < self.f_lower < self.f_upper:
            raise ValueError(f"invalid band [{self.f_lower}, {self.f_upper}]")
        if self.kind is BandKind.TF and (self.f_lower, self.f_upper) != TF_BAND:
            raise ValueError("the TF band is fixed to [3, 25] Hz")

    @property
    def upper_inclusive(self) -> bool:
        # bands ending at 25 Hz keep that bin, so LF and HF partition TF
        return self.f_upper == TF_BAND[1]

    @classmethod
    def total(cls) -> Band:
        return cls(*TF_BAND, BandKind.TF)


# attribute name -> table column name, in table order
FEATURE_COLUMNS: dict[str, str] = {
    "f0": "f0",
    "w_f0": "W_f0",
    "f1": "f1",
    "w_f1": "W_f1",
    "gamma": "gamma",
    "org_index": "O",
    "f_lf": "F_LF",
    "s_lf": "S_LF",
    "r_lf": "R_LF",
    "c0_lf": "C0_LF",
    "f_hf": "F_HF",
    "s_hf": "S_HF",
    "r_hf": "R_HF",
    "c0_hf": "C0_HF",
    "f_tf": "F_TF",
    "s_tf": "S_TF",
    "r_tf": "R_TF",
    "c0_tf": "C0_TF",
}
COLUMN_TO_ATTR = {v: k for k, v in FEATURE_COLUMNS.items()}
ENTROPY_ATTRS = tuple(a for a in FEATURE_COLUMNS if a[:2] in ("f_", "s_", "r_", "c0"))


@dataclass(frozen=True)
class SpectralFeatures:
    f0: float
    w_f0: float
    f1: float
    w_f1: float
    gamma: float
    org_index: float
    f_lf: float
    s_lf: float
    r_lf: float
    c0_lf: float
    f_hf: float
    s_hf: float
    r_hf: float
    c0_hf: float
    f_tf: float
    s_tf: float
    r_tf: float
    c0_tf: float

    def __post_init__(self):
        for name in ENTROPY_ATTRS + ("org_index",):
            v = getattr(self, name)
            if not -1e-12 <= v <= 1 + 1e-12:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def as_columns(self) -> dict[str, float]:
        return {col: float(getattr(self, attr)) for attr, col in FEATURE_COLUMNS.items()}

    @classmethod
    def from_columns(cls, row: dict[str, float]) -> SpectralFeatures:
        return cls(**{attr: float(row[col]) for attr, col in FEATURE_COLUMNS.items()})


@dataclass(frozen=True)
class PatientFeatureVector:
    patient_id: str
    features: SpectralFeatures
    n_segments: int
    outcome: Outcome = Outcome.UNKNOWN

    def __post_init__(self):
        object.__setattr__(self, "outcome", Outcome(self.outcome))
        if not 1 <= self.n_segments <= MAX_SEGMENTS:
            raise ValueError(f"n_segments must be in [1, {MAX_SEGMENTS}], got {self.n_segments}")

    def value(self, column: str) -> float:
        return float(getattr(self.features, COLUMN_TO_ATTR.get(column, column)))


@dataclass(frozen=True)
class ClinicalRecord:
    patient_id: str
    sex: Sex | None = None
    age: float | None = None
    af_duration_class: AfDuration | None = None
    bmi: float | None = None
    la_diameter: float | None = None

    def __post_init__(self):
        if self.sex is not None:
            object.__setattr__(self, "sex", Sex(self.sex))
        if self.af_duration_class is not None:
            object.__setattr__(self, "af_duration_class", AfDuration(self.af_duration_class))
        if self.age is not None and not self.age > 0:
            raise ValueError("age must be positive")
        if self.bmi is not None and not self.bmi > 0:
            raise ValueError("bmi must be positive")


__all__ = [
    "AfDuration",
    "Band",
    "BandKind",
    "ClinicalRecord",
    "EcgRecord",
    "FEATURE_COLUMNS",
    "FWaveSegment",
    "Outcome",
    "PatientFeatureVector",
    "PowerSpectrum",
    "Sex",
    "SpectralFeatures",
    "Stage",
    "validate_record",
]
