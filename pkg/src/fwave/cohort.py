"""Per-patient segmentation and averaging, and SR-vs-AF group comparison."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, fields

import numpy as np

from . import stats
from .cancellation import extract_fwaves
from .core import (
    COLUMN_TO_ATTR,
    FEATURE_COLUMNS,
    MAX_SEGMENTS,
    TOO_SHORT_FLAG,
    AfDuration,
    ClinicalRecord,
    EcgRecord,
    FWaveSegment,
    Outcome,
    PatientFeatureVector,
    PowerSpectrum,
    Sex,
    SpectralFeatures,
    Stage,
    segment_length,
    validate_record,
)
from .errors import EmptyList, RecordTooShort
from .preprocess import PreprocessConfig, preprocess
from .spectral import WelchConfig, features_from_spectrum, welch_psd

log = logging.getLogger(__name__)

ALPHA = 0.05


def segment_signal(fwave: EcgRecord) -> list[FWaveSegment]:
    """Consecutive 6 s segments from the start of the record, at most five."""
    n_seg = segment_length(fwave.sampling_rate)
    count = min(len(fwave) // n_seg, MAX_SEGMENTS)
    if count < 1:
        raise RecordTooShort(f"need at least 6 s of signal, got {fwave.duration:.2f} s")
    return [
        FWaveSegment(fwave.samples[i * n_seg:(i + 1) * n_seg], fwave.sampling_rate, i,
                     fwave.patient_id)
        for i in range(count)
    ]


def aggregate_patient(features: Sequence[SpectralFeatures], patient_id: str,
                      outcome: Outcome | str = Outcome.UNKNOWN) -> PatientFeatureVector:
    if len(features) == 0:
        raise EmptyList("no segment features to aggregate")
    if len(features) > MAX_SEGMENTS:
        raise ValueError(f"at most {MAX_SEGMENTS} segments per patient")
    mean = {
        f.name: float(np.mean([getattr(s, f.name) for s in features]))
        for f in fields(SpectralFeatures)
    }
    return PatientFeatureVector(patient_id, SpectralFeatures(**mean), len(features), outcome)


def to_fwave(record: EcgRecord, pre_cfg: PreprocessConfig = PreprocessConfig()) -> EcgRecord:
    """Bring a raw or preprocessed record to the f-wave stage."""
    if record.stage is Stage.RAW:
        record = preprocess(record, pre_cfg)
    if record.stage is Stage.PREPROCESSED:
        record = extract_fwaves(record)
    return record


def process_record(
    record: EcgRecord,
    outcome: Outcome | str = Outcome.UNKNOWN,
    pre_cfg: PreprocessConfig = PreprocessConfig(),
    welch_cfg: WelchConfig = WelchConfig(),
) -> PatientFeatureVector:
    """Full pipeline for one patient: denoise, cancel QRST, segment, average features."""
    vec, _ = process_record_spectra(record, outcome, pre_cfg, welch_cfg)
    return vec


def process_record_spectra(
    record: EcgRecord,
    outcome: Outcome | str = Outcome.UNKNOWN,
    pre_cfg: PreprocessConfig = PreprocessConfig(),
    welch_cfg: WelchConfig = WelchConfig(),
) -> tuple[PatientFeatureVector, list[PowerSpectrum]]:
    """Like :func:`process_record`, also returning the per-segment spectra."""
    record = validate_record(record)
    if TOO_SHORT_FLAG in record.flags:
        raise RecordTooShort(f"{record.patient_id}: {record.duration:.2f} s is shorter than 6 s")
    fwave = to_fwave(record, pre_cfg)
    spectra = [welch_psd(s, welch_cfg) for s in segment_signal(fwave)]
    feats = [features_from_spectrum(sp, welch_cfg) for sp in spectra]
    return aggregate_patient(feats, record.patient_id, outcome), spectra


@dataclass(frozen=True)
class Cohort:
    patients: tuple[PatientFeatureVector, ...]
    clinical: Mapping[str, ClinicalRecord] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "patients", tuple(self.patients))
        ids = [p.patient_id for p in self.patients]
        if len(set(ids)) != len(ids):
            raise ValueError("patient ids must be unique")

    def __len__(self) -> int:
        return len(self.patients)

    def require_labels(self) -> None:
        bad = [p.patient_id for p in self.patients if p.outcome not in (Outcome.SR, Outcome.AF)]
        if bad:
            raise ValueError(f"patients without SR/AF outcome: {bad[:5]}")

    def labels(self) -> np.ndarray:
        """1 for AF recurrence (the positive class), 0 for SR maintenance."""
        self.require_labels()
        return np.array([p.outcome is Outcome.AF for p in self.patients], dtype=int)

    def matrix(self, columns: Sequence[str]) -> np.ndarray:
        for c in columns:
            if c not in COLUMN_TO_ATTR and c not in FEATURE_COLUMNS:
                raise KeyError(f"unknown feature {c!r}")
        return np.array([[p.value(c) for c in columns] for p in self.patients], dtype=float)

    def group(self, column: str, outcome: Outcome) -> np.ndarray:
        return np.array([p.value(column) for p in self.patients if p.outcome is outcome])


@dataclass(frozen=True)
class GroupComparison:
    feature_name: str
    mean_sr: float
    sd_sr: float
    mean_af: float
    sd_af: float
    test_used: str  # "t", "mann_whitney" or "fisher"
    p_value: float
    normal_sr: bool | None = None
    normal_af: bool | None = None
    homoscedastic: bool | None = None


def compare_samples(name: str, sr: np.ndarray, af: np.ndarray) -> GroupComparison:
    """Lilliefors + Levene gate, then Student's t or Mann-Whitney."""
    sr = np.asarray(sr, dtype=float)
    af = np.asarray(af, dtype=float)
    if sr.size == 0 or af.size == 0:
        raise EmptyList(f"{name}: both groups need observations")
    normal_sr = stats.lilliefors(sr) >= ALPHA if sr.size >= 4 else False
    normal_af = stats.lilliefors(af) >= ALPHA if af.size >= 4 else False
    homo = stats.levene(sr, af) >= ALPHA
    if normal_sr and normal_af and homo:
        test, p = "t", stats.t_test(sr, af)
    else:
        # heteroscedastic data also fall back to the rank test
        test, p = "mann_whitney", stats.mann_whitney(sr, af)
    return GroupComparison(
        name,
        float(np.mean(sr)), float(np.std(sr, ddof=1)) if sr.size > 1 else 0.0,
        float(np.mean(af)), float(np.std(af, ddof=1)) if af.size > 1 else 0.0,
        test, float(p), bool(normal_sr), bool(normal_af), bool(homo),
    )


def compare_groups(cohort: Cohort, feature_name: str) -> GroupComparison:
    cohort.require_labels()
    return compare_samples(feature_name, cohort.group(feature_name, Outcome.SR),
                           cohort.group(feature_name, Outcome.AF))


def feature_table(cohort: Cohort, columns: Sequence[str] | None = None) -> list[GroupComparison]:
    return [compare_groups(cohort, c) for c in (columns or FEATURE_COLUMNS.values())]


def _count_row(name: str, hits_sr: int, n_sr: int, hits_af: int, n_af: int) -> GroupComparison:
    p = stats.fisher_exact([[hits_sr, n_sr - hits_sr], [hits_af, n_af - hits_af]])
    # for categorical rows the "mean" is the count and the "sd" the percentage
    return GroupComparison(name, float(hits_sr), 100.0 * hits_sr / n_sr,
                           float(hits_af), 100.0 * hits_af / n_af, "fisher", p)


def clinical_table(cohort: Cohort) -> list[GroupComparison]:
    """Baseline-characteristics comparison; missing values are skipped per row."""
    cohort.require_labels()
    by_group: dict[Outcome, list[ClinicalRecord]] = {Outcome.SR: [], Outcome.AF: []}
    for p in cohort.patients:
        rec = cohort.clinical.get(p.patient_id)
        if rec is not None:
            by_group[p.outcome].append(rec)
    sr, af = by_group[Outcome.SR], by_group[Outcome.AF]
    if not sr or not af:
        raise EmptyList("clinical data missing for one of the groups")

    rows = []
    male_sr = [r for r in sr if r.sex is not None]
    male_af = [r for r in af if r.sex is not None]
    if male_sr and male_af:
        rows.append(_count_row("male",
                               sum(r.sex is Sex.MALE for r in male_sr), len(male_sr),
                               sum(r.sex is Sex.MALE for r in male_af), len(male_af)))
    for attr in ("age", "bmi", "la_diameter"):
        a = np.array([getattr(r, attr) for r in sr if getattr(r, attr) is not None])
        b = np.array([getattr(r, attr) for r in af if getattr(r, attr) is not None])
        if a.size >= 2 and b.size >= 2:
            rows.append(compare_samples(attr, a, b))
    dur_sr = [r.af_duration_class for r in sr if r.af_duration_class is not None]
    dur_af = [r.af_duration_class for r in af if r.af_duration_class is not None]
    if dur_sr and dur_af:
        for cls in AfDuration:
            rows.append(_count_row(f"af_duration {cls.value}",
                                   dur_sr.count(cls), len(dur_sr), dur_af.count(cls), len(dur_af)))
    return rows
