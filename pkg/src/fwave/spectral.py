"""Welch PSD of 6 s f-wave segments and the spectral-organization feature set.

Features per segment: dominant frequency ``f0`` and its peak power, first
harmonic ``f1`` and its power, harmonic decay ``gamma = ln(W(f0)/W(f1))``,
organization index ``O``, and spectral flatness ``F``, spectral entropy ``S``,
Renyi entropy ``R`` and C0 complexity on the LF, HF and TF bands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .core import (
    FREQ_STEP,
    REFERENCE_FS,
    TF_BAND,
    Band,
    BandKind,
    FWaveSegment,
    PowerSpectrum,
    SpectralFeatures,
)
from .errors import (
    AllZeroBand,
    BadAlpha,
    EmptyBand,
    HarmonicOutOfRange,
    NonPositivePower,
    SegmentTooShort,
)

# tolerance (in bins) when mapping band edges onto the frequency grid
_GRID_TOL = 1e-6
FLATNESS_FLOOR = 1e-15


@dataclass(frozen=True)
class WelchConfig:
    """Welch settings. Sample counts are defined at ``reference_fs`` and rescaled."""

    window_len: int = 4000
    overlap: int = 3000
    window_kind: str = "hamming"
    fft_resolution: float = FREQ_STEP
    df_search_band: tuple[float, float] = (3.0, 12.0)
    renyi_alpha: float = 0.1
    reference_fs: float = REFERENCE_FS

    def __post_init__(self):
        if not 0 <= self.overlap < self.window_len:
            raise ValueError("need 0 <= overlap < window_len")

    def samples_at(self, fs: float) -> tuple[int, int]:
        scale = fs / self.reference_fs
        return int(round(self.window_len * scale)), int(round(self.overlap * scale))


def welch_array(x: np.ndarray, fs: float, cfg: WelchConfig = WelchConfig()) -> PowerSpectrum:
    """One-sided Welch PSD (mV^2/Hz) of ``x`` on the 0.1 Hz grid."""
    x = np.asarray(x, dtype=float)
    nperseg, noverlap = cfg.samples_at(fs)
    if x.size < nperseg:
        raise SegmentTooShort(f"need at least {nperseg} samples, got {x.size}")
    nfft = max(int(round(fs / cfg.fft_resolution)), nperseg)
    freqs, psd = signal.welch(
        x, fs=fs, window=cfg.window_kind, nperseg=nperseg, noverlap=noverlap,
        nfft=nfft, detrend="constant", return_onesided=True, scaling="density",
    )
    step = fs / nfft
    if abs(step - cfg.fft_resolution) > 1e-12:
        # fs not a multiple of the resolution: resample the estimate onto the grid
        grid = np.arange(0.0, freqs[-1] + 1e-9, cfg.fft_resolution)
        psd = np.interp(grid, freqs, psd)
    return PowerSpectrum(values=np.maximum(psd, 0.0), f_start=0.0, f_step=cfg.fft_resolution)


def welch_psd(segment: FWaveSegment, cfg: WelchConfig = WelchConfig()) -> PowerSpectrum:
    return welch_array(segment.samples, segment.sampling_rate, cfg)


# --- grid helpers ---------------------------------------------------------

def _closed_range(spec: PowerSpectrum, lo: float, hi: float) -> slice:
    a = max(0, math.ceil((lo - spec.f_start) / spec.f_step - _GRID_TOL))
    b = min(spec.values.size, math.floor((hi - spec.f_start) / spec.f_step + _GRID_TOL) + 1)
    return slice(a, max(a, b))


def _half_open_range(spec: PowerSpectrum, lo: float, hi: float) -> slice:
    a = max(0, math.ceil((lo - spec.f_start) / spec.f_step - _GRID_TOL))
    b = min(spec.values.size, math.ceil((hi - spec.f_start) / spec.f_step - _GRID_TOL))
    return slice(a, max(a, b))


def band_slice(spec: PowerSpectrum, band: Band) -> slice:
    if band.upper_inclusive:
        sl = _closed_range(spec, band.f_lower, band.f_upper)
    else:
        sl = _half_open_range(spec, band.f_lower, band.f_upper)
    if sl.stop - sl.start < 1:
        raise EmptyBand(f"no spectrum bins in [{band.f_lower}, {band.f_upper}]")
    return sl


def band_values(spec: PowerSpectrum, band: Band) -> np.ndarray:
    return spec.values[band_slice(spec, band)]


def _peak(spec: PowerSpectrum, sl: slice) -> tuple[float, float]:
    vals = spec.values[sl]
    if vals.size == 0:
        raise EmptyBand("empty search window")
    k = sl.start + int(np.argmax(vals))  # first maximum: ties go to the lower frequency
    return spec.frequency_of(k), float(spec.values[k] * spec.f_step)


# --- peak features --------------------------------------------------------

def dominant_frequency(spec: PowerSpectrum, band: tuple[float, float] = (3.0, 12.0)) -> tuple[float, float]:
    """Return ``(f0, W(f0))``: the PSD argmax inside the closed search band, peak power in mV^2."""
    lo, hi = band
    if hi > spec.f_max + _GRID_TOL * spec.f_step or lo < spec.f_start:
        raise EmptyBand(f"search band [{lo}, {hi}] outside spectrum support")
    return _peak(spec, _closed_range(spec, lo, hi))


def first_harmonic(spec: PowerSpectrum, f0: float) -> tuple[float, float]:
    """Return ``(f1, W(f1))``: the PSD argmax within 1 Hz centred on ``2 * f0``."""
    centre = 2 * f0
    if centre + 0.5 > spec.f_max + _GRID_TOL * spec.f_step:
        raise HarmonicOutOfRange(f"2*f0 + 0.5 = {centre + 0.5} Hz beyond {spec.f_max} Hz")
    return _peak(spec, _closed_range(spec, centre - 0.5, centre + 0.5))


def harmonic_decay(w_f0: float, w_f1: float) -> float:
    if not (w_f0 > 0 and w_f1 > 0):
        raise NonPositivePower(f"peak powers must be positive, got {w_f0}, {w_f1}")
    return math.log(w_f0 / w_f1)


def organization_index(spec: PowerSpectrum, f0: float, f1: float | None = None) -> float:
    """Fraction of the 3-25 Hz power within 1 Hz windows at f0, f1 and the peak near 3*f0.

    Windows are ``[c - 0.5, c + 0.5)`` (ten bins) and clipped to the TF band;
    overlapping windows are counted once.
    """
    tf_lo, tf_hi = TF_BAND
    tf = _closed_range(spec, tf_lo, tf_hi)
    total = float(np.sum(spec.values[tf]))
    if tf.stop - tf.start < 1:
        raise EmptyBand("spectrum does not cover the 3-25 Hz band")
    if total <= 0:
        raise AllZeroBand("no power in the 3-25 Hz band")
    if f1 is None:
        f1, _ = first_harmonic(spec, f0)
    centres = [f0, f1]
    w3 = _closed_range(spec, max(3 * f0 - 0.5, tf_lo), min(3 * f0 + 0.5, tf_hi))
    if w3.stop > w3.start:
        centres.append(_peak(spec, w3)[0])

    mask = np.zeros(spec.values.size, dtype=bool)
    for c in centres:
        mask[_half_open_range(spec, c - 0.5, c + 0.5)] = True
    in_tf = np.zeros_like(mask)
    in_tf[tf] = True
    return float(np.sum(spec.values[mask & in_tf]) / total)


def band_split(f0: float) -> tuple[Band, Band, Band]:
    """LF/HF cut at 1.5 * f0 on the 0.1 Hz grid (round half up); TF is 3-25 Hz."""
    if not 3.0 - 1e-9 <= f0 <= 12.0 + 1e-9:
        raise ValueError(f"f0 must be in [3, 12] Hz, got {f0}")
    # work in integer tenths of a hertz so that 1.5 * 5.7 = 8.55 rounds up exactly
    f0_tenths = round(f0 / FREQ_STEP)
    cut = math.floor(1.5 * f0_tenths + 0.5) * FREQ_STEP
    cut = round(cut, 10)
    lo, hi = TF_BAND
    return Band(lo, cut, BandKind.LF), Band(cut, hi, BandKind.HF), Band.total()


# --- entropy measures on plain arrays --------------------------------------

def flatness(w: np.ndarray) -> float:
    """Geometric over arithmetic mean; bins below 1e-15 * max are floored there."""
    w = np.asarray(w, dtype=float)
    top = float(np.max(w))
    if top <= 0:
        raise AllZeroBand("band holds no power")
    floored = np.maximum(w, FLATNESS_FLOOR * top)
    # scale by the max first so the log/exp stays well conditioned
    scaled = floored / top
    return float(min(1.0, np.exp(np.mean(np.log(scaled))) / np.mean(scaled)))


def _probabilities(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.size < 2:
        raise EmptyBand(f"entropy needs at least 2 bins, got {w.size}")
    total = float(np.sum(w))
    if total <= 0:
        raise AllZeroBand("band holds no power")
    return w / total


def shannon_entropy(w: np.ndarray) -> float:
    p = _probabilities(w)
    nz = p[p > 0]
    return float(min(1.0, max(0.0, -np.sum(nz * np.log(nz)) / math.log(p.size))))


def renyi_entropy_array(w: np.ndarray, alpha: float = 0.1) -> float:
    if alpha < 0 or alpha == 1:
        raise BadAlpha(f"alpha must be >= 0 and != 1, got {alpha}")
    p = _probabilities(w)
    nz = p[p > 0]
    r = math.log(np.sum(nz**alpha)) / ((1 - alpha) * math.log(p.size))
    return float(min(1.0, max(0.0, r)))


def c0_array(w: np.ndarray) -> float:
    p = _probabilities(w)
    threshold = 2.0 / p.size * np.sum(p)
    return float(np.sum(p[p <= threshold]) / np.sum(p))


# --- band wrappers ----------------------------------------------------------

def spectral_flatness(spec: PowerSpectrum, band: Band) -> float:
    return flatness(band_values(spec, band))


def spectral_entropy(spec: PowerSpectrum, band: Band) -> float:
    return shannon_entropy(band_values(spec, band))


def renyi_entropy(spec: PowerSpectrum, band: Band, alpha: float = 0.1) -> float:
    return renyi_entropy_array(band_values(spec, band), alpha)


def c0_complexity(spec: PowerSpectrum, band: Band) -> float:
    return c0_array(band_values(spec, band))


def features_from_spectrum(spec: PowerSpectrum, cfg: WelchConfig = WelchConfig()) -> SpectralFeatures:
    tf_vals = band_values(spec, Band.total())
    if not np.any(tf_vals > 0):
        raise AllZeroBand("no f-wave power in 3-25 Hz")
    f0, w_f0 = dominant_frequency(spec, cfg.df_search_band)
    f1, w_f1 = first_harmonic(spec, f0)
    values = {
        "f0": f0,
        "w_f0": w_f0,
        "f1": f1,
        "w_f1": w_f1,
        "gamma": harmonic_decay(w_f0, w_f1),
        "org_index": organization_index(spec, f0, f1),
    }
    for band in band_split(f0):
        w = band_values(spec, band)
        tag = band.kind.value.lower()
        values[f"f_{tag}"] = flatness(w)
        values[f"s_{tag}"] = shannon_entropy(w)
        values[f"r_{tag}"] = renyi_entropy_array(w, cfg.renyi_alpha)
        values[f"c0_{tag}"] = c0_array(w)
    return SpectralFeatures(**values)


def extract_features(segment: FWaveSegment, cfg: WelchConfig = WelchConfig()) -> SpectralFeatures:
    """All spectral features of one 6 s f-wave segment."""
    return features_from_spectrum(welch_psd(segment, cfg), cfg)


def aligned_on_peak(spec: PowerSpectrum, f0: float, offsets: np.ndarray) -> np.ndarray:
    """PSD resampled at ``f0 + offsets`` and normalised to unit 3-25 Hz power.

    Offsets falling outside the spectrum give NaN.  Used to average spectra
    of many segments after aligning them on their dominant peak.
    """
    total = float(np.sum(band_values(spec, Band.total())))
    idx = np.rint((f0 + np.asarray(offsets) - spec.f_start) / spec.f_step).astype(np.int64)
    out = np.full(idx.size, np.nan)
    ok = (idx >= 0) & (idx < spec.values.size)
    if total > 0:
        out[ok] = spec.values[idx[ok]] / total
    return out
