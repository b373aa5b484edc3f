import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fwave.core import (
    FEATURE_COLUMNS,
    TOO_SHORT_FLAG,
    Band,
    BandKind,
    ClinicalRecord,
    EcgRecord,
    FWaveSegment,
    Outcome,
    PatientFeatureVector,
    PowerSpectrum,
    SpectralFeatures,
    Stage,
    rescale_samples,
    segment_length,
    validate_record,
)
from fwave.errors import BadSamplingRate, EmptyRecord, NonFiniteSample


def features(**over):
    base = {a: 0.5 for a in FEATURE_COLUMNS}
    base.update(f0=6.0, w_f0=1e-3, f1=12.0, w_f1=1e-3 / math.e**2, gamma=2.0)
    base.update(over)
    return SpectralFeatures(**base)


class TestEcgRecord:
    def test_six_seconds_of_zeros_is_valid(self):
        rec = validate_record(EcgRecord(np.zeros(6 * 977), 977.0))
        assert TOO_SHORT_FLAG not in rec.flags

    def test_nan_sample_rejected(self):
        x = np.ones(100)
        x[40] = np.nan
        with pytest.raises(NonFiniteSample):
            EcgRecord(x, 977.0)

    def test_four_seconds_flagged_too_short(self):
        rec = validate_record(EcgRecord(np.zeros(4 * 977), 977.0))
        assert TOO_SHORT_FLAG in rec.flags

    def test_empty_and_bad_rate(self):
        with pytest.raises(EmptyRecord):
            EcgRecord([], 977.0)
        with pytest.raises(BadSamplingRate):
            EcgRecord([1.0], 0.0)
        with pytest.raises(BadSamplingRate):
            EcgRecord([1.0], float("nan"))

    def test_samples_are_read_only_copies(self):
        x = np.arange(10.0)
        rec = EcgRecord(x)
        x[0] = 99
        assert rec.samples[0] == 0
        with pytest.raises(ValueError):
            rec.samples[0] = 1.0

    def test_stage_coerced_and_flag_idempotent(self):
        rec = EcgRecord([0.0, 1.0], stage="fwave")
        assert rec.stage is Stage.FWAVE
        assert rec.with_flag("a").with_flag("a").flags == ("a",)


def test_segment_length_enforced():
    FWaveSegment(np.zeros(segment_length(977.0)), 977.0)
    with pytest.raises(ValueError):
        FWaveSegment(np.zeros(100), 977.0)


def test_rescale_samples_identity_at_reference():
    assert rescale_samples(4000, 977.0) == 4000
    assert rescale_samples(4000, 488.5) == 2000


class TestPowerSpectrum:
    def test_rejects_wrong_step_and_negative(self):
        with pytest.raises(ValueError):
            PowerSpectrum(np.ones(5), f_step=0.2)
        with pytest.raises(ValueError):
            PowerSpectrum(np.array([1.0, -1.0]))

    @given(st.floats(0.0, 400.0))
    def test_index_round_trip_within_half_step(self, f):
        spec = PowerSpectrum(np.ones(5000))
        assert abs(spec.frequency_of(spec.index_of(f)) - f) <= spec.f_step / 2 + 1e-9

    def test_grid_frequencies_are_exact_decimals(self):
        spec = PowerSpectrum(np.ones(300))
        assert spec.frequency_of(57) == 5.7
        assert spec.frequency_of(250) == 25.0


class TestBand:
    def test_tf_fixed(self):
        assert Band.total() == Band(3.0, 25.0, BandKind.TF)
        assert Band.total().upper_inclusive
        with pytest.raises(ValueError):
            Band(3.0, 24.0, BandKind.TF)

    def test_invalid_edges(self):
        with pytest.raises(ValueError):
            Band(5.0, 5.0, BandKind.LF)
        with pytest.raises(ValueError):
            Band(0.0, 5.0, BandKind.LF)


class TestFeatures:
    def test_entropy_range_enforced(self):
        with pytest.raises(ValueError):
            features(f_tf=1.2)

    def test_column_round_trip(self):
        f = features(f_tf=0.123456789)
        assert SpectralFeatures.from_columns(f.as_columns()) == f
        assert list(f.as_columns())[:6] == ["f0", "W_f0", "f1", "W_f1", "gamma", "O"]

    def test_patient_vector(self):
        v = PatientFeatureVector("p", features(), 3, "AF")
        assert v.outcome is Outcome.AF
        assert v.value("gamma") == 2.0
        assert v.value("O") == 0.5
        with pytest.raises(ValueError):
            PatientFeatureVector("p", features(), 6)
        with pytest.raises(ValueError):
            PatientFeatureVector("p", features(), 0)


def test_clinical_record_coerces_enums():
    rec = ClinicalRecord("p", "male", 60.0, "1-3y", 27.0, 44.0)
    assert rec.sex.value == "male"
    assert rec.af_duration_class.value == "1-3y"
    assert ClinicalRecord("q").age is None
