"""QRST cancellation by adaptive singular value cancellation.

R-peaks are found with a Pan-Tompkins style detector; the ventricular
template is the dominant left singular vector of the R-aligned beat matrix,
fitted in amplitude to each beat by least squares and subtracted with a
linear correction that pins the window end points to the original samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .core import EcgRecord, Stage
from .errors import InsufficientBeats, NoBeatsFound, WindowOutOfBounds

log = logging.getLogger(__name__)

REFRACTORY_S = 0.25
WINDOW_PRE_S = 0.10
WINDOW_POST_S = 0.45
RR_FRACTION = 0.85


@dataclass(frozen=True, eq=False)
class RPeakList:
    indices: np.ndarray
    sampling_rate: float

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64).reshape(-1)
        if idx.size > 1:
            gaps = np.diff(idx)
            if np.any(gaps <= 0):
                raise ValueError("R-peak indices must be strictly increasing")
            min_gap = int(np.floor(REFRACTORY_S * self.sampling_rate))
            if np.any(gaps < min_gap):
                raise ValueError("R-peaks closer than the 0.25 s refractory period")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.indices.size


@dataclass(frozen=True, eq=False)
class QrstTemplate:
    samples: np.ndarray
    sampling_rate: float
    window_pre: float = WINDOW_PRE_S
    window_post: float = WINDOW_POST_S

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float).reshape(-1)
        if arr.size != template_length(self.sampling_rate, self.window_pre, self.window_post):
            raise ValueError("template length does not match its window")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def n_pre(self) -> int:
        return int(round(self.window_pre * self.sampling_rate))


def template_length(fs: float, pre: float = WINDOW_PRE_S, post: float = WINDOW_POST_S) -> int:
    return int(round((pre + post) * fs))


# --- detection -------------------------------------------------------------

def detect_r_peaks(record: EcgRecord) -> RPeakList:
    """Pan-Tompkins style detection: 5-25 Hz band-pass, derivative, squaring,
    150 ms moving integration, adaptive signal/noise thresholds and a 0.25 s
    refractory period.  Each hit is relocated to the largest deflection of the
    band-passed ECG within +-75 ms.
    """
    fs = record.sampling_rate
    x = record.samples
    if record.duration < 2.0:
        raise NoBeatsFound(f"record too short for beat detection ({record.duration:.2f} s)")
    if not np.any(x != x[0]):
        raise NoBeatsFound("flat record")

    sos = signal.butter(2, [5.0, 25.0], btype="bandpass", fs=fs, output="sos")
    bp = signal.sosfiltfilt(sos, x)
    deriv = np.gradient(bp) * fs
    win = max(1, int(round(0.15 * fs)))
    integ = np.convolve(deriv**2, np.ones(win) / win, mode="same")

    refractory = int(np.floor(REFRACTORY_S * fs))
    cand, _ = signal.find_peaks(integ, distance=refractory)
    if cand.size == 0:
        raise NoBeatsFound("no candidate peaks")

    # initialise running levels from the first two seconds
    head = integ[: int(2 * fs)]
    spk = 0.5 * float(np.max(head))
    npk = 0.5 * float(np.mean(head))
    accepted: list[int] = []
    for c in cand:
        level = integ[c]
        thr = npk + 0.25 * (spk - npk)
        if level > thr:
            accepted.append(int(c))
            spk = 0.125 * level + 0.875 * spk
        else:
            npk = 0.125 * level + 0.875 * npk
    if not accepted:
        raise NoBeatsFound("no peaks above threshold")

    half = int(round(0.075 * fs))
    ref = np.abs(bp)
    peaks: list[int] = []
    for c in accepted:
        lo, hi = max(0, c - half), min(x.size, c + half + 1)
        p = lo + int(np.argmax(ref[lo:hi]))
        if peaks and p - peaks[-1] < refractory:
            # keep the larger of two relocated peaks that collide
            if ref[p] > ref[peaks[-1]]:
                peaks[-1] = p
            continue
        peaks.append(p)
    if len(peaks) < 2:
        raise NoBeatsFound(f"found {len(peaks)} beat(s), need at least 2")
    return RPeakList(align_peaks(x, np.asarray(peaks), fs), fs)


_ALIGN_BAND = (15.0, 45.0)


def align_peaks(x: np.ndarray, peaks: np.ndarray, fs: float, max_lag_s: float = 0.01,
                n_iter: int = 2) -> np.ndarray:
    """Shift each fiducial point to best match the ensemble QRS by cross-correlation.

    Only the QRS core (-50 ms to +80 ms) of a 15-45 Hz band-passed copy is
    compared, where ventricular energy dominates the atrial waves.  Beats
    whose core does not fit in the record keep their position.
    """
    hi = min(_ALIGN_BAND[1], 0.45 * fs)
    x = signal.sosfiltfilt(signal.butter(2, [_ALIGN_BAND[0], hi], btype="bandpass", fs=fs,
                                         output="sos"), x)
    pre, post = int(round(0.05 * fs)), int(round(0.08 * fs))
    max_lag = max(1, int(round(max_lag_s * fs)))
    peaks = peaks.copy()
    for _ in range(n_iter):
        ok = (peaks - pre - max_lag >= 0) & (peaks + post + max_lag < x.size)
        if ok.sum() < 2:
            break
        core = np.mean([x[p - pre:p + post] for p in peaks[ok]], axis=0)
        core = core - core.mean()
        moved = False
        for i in np.flatnonzero(ok):
            p = peaks[i]
            scores = [
                float(core @ (x[p + k - pre:p + k + post] - x[p + k - pre:p + k + post].mean()))
                for k in range(-max_lag, max_lag + 1)
            ]
            k = int(np.argmax(scores)) - max_lag
            if k:
                peaks[i] = p + k
                moved = True
        if not moved:
            break
    # a shift must never break ordering or the refractory period
    keep = [0]
    refractory = int(np.floor(REFRACTORY_S * fs))
    for i in range(1, peaks.size):
        if peaks[i] - peaks[keep[-1]] >= refractory:
            keep.append(i)
    return peaks[keep]


# --- template --------------------------------------------------------------

def _beat_matrix(x: np.ndarray, peaks: np.ndarray, n_pre: int, n_len: int) -> np.ndarray:
    cols = [x[p - n_pre:p - n_pre + n_len] for p in peaks]
    return np.column_stack(cols)


def build_qrst_template(
    record: EcgRecord,
    peaks: RPeakList,
    window_pre: float = WINDOW_PRE_S,
    window_post: float = WINDOW_POST_S,
) -> QrstTemplate:
    """Dominant left singular vector of the R-aligned beat matrix.

    Only beats whose full window lies inside the record are used; when at
    least two of them are not overlapped by the next beat's window, those
    are preferred.  The template is scaled to the RMS beat norm and signed
    to correlate positively with the ensemble mean.
    """
    fs = record.sampling_rate
    x = record.samples
    n_pre = int(round(window_pre * fs))
    n_len = template_length(fs, window_pre, window_post)
    idx = peaks.indices
    inside = idx[(idx - n_pre >= 0) & (idx - n_pre + n_len <= x.size)]
    if inside.size < 2:
        raise InsufficientBeats(f"{inside.size} beat(s) with a full window, need 2")
    nxt = np.append(idx[1:], np.iinfo(np.int64).max)
    next_of = dict(zip(idx.tolist(), nxt.tolist()))
    clean = np.array([p for p in inside if next_of[p] - n_pre >= p - n_pre + n_len], dtype=np.int64)
    use = clean if clean.size >= 2 else inside

    beats = _beat_matrix(x, use, n_pre, n_len)
    u, s, _ = np.linalg.svd(beats, full_matrices=False)
    t = u[:, 0]
    mean_beat = beats.mean(axis=1)
    if float(t @ mean_beat) < 0:
        t = -t
    energy = float(np.mean(np.sum(beats**2, axis=0)))
    return QrstTemplate(t * np.sqrt(energy), fs, window_pre, window_post)


# --- cancellation ------------------------------------------------------------

@dataclass(frozen=True)
class BeatWindow:
    peak: int
    start: int  # first sample in the record
    stop: int  # one past the last sample in the record
    t_start: int  # matching offset into the template
    clipped_left: bool
    clipped_right: bool

    @property
    def partial(self) -> bool:
        return self.clipped_left or self.clipped_right


def qrst_windows(peaks: RPeakList, n_samples: int, template: QrstTemplate) -> list[BeatWindow]:
    """Cancellation window per beat.

    The post-R part is capped at 85% of the following RR interval and never
    reaches into the next beat's pre-R part.  Windows clipped by the record
    edges are marked ``partial``.
    """
    n_pre = template.n_pre
    n_len = template.samples.size
    idx = peaks.indices
    out = []
    for i, p in enumerate(idx):
        stop = p - n_pre + n_len
        if i + 1 < idx.size:
            rr = idx[i + 1] - p
            stop = min(stop, p + int(np.floor(RR_FRACTION * rr)), idx[i + 1] - n_pre)
        start = p - n_pre
        s, e = max(start, 0), min(stop, n_samples)
        if e - s < 2:
            continue
        out.append(BeatWindow(int(p), int(s), int(e), int(s - start), start < 0, stop > n_samples))
    return out


def fit_amplitude(segment: np.ndarray, template: np.ndarray) -> float:
    """Least-squares gain of ``template`` onto ``segment``."""
    denom = float(template @ template)
    return float(segment @ template) / denom if denom > 0 else 0.0


def cancel_qrst(
    record: EcgRecord,
    peaks: RPeakList,
    template: QrstTemplate,
    partial_edges: bool = True,
) -> EcgRecord:
    """Subtract the amplitude-fitted template from every beat window.

    The subtracted waveform ``a * t(n)`` is corrected by the straight line
    through its two end values, so the output equals the input at both window
    ends and joins the neighbouring TQ samples without a step.  Samples
    outside the windows are copied unchanged.  With ``partial_edges=False``
    beats whose window crosses a record edge are left in place and flagged.
    """
    x = record.samples
    y = x.copy()
    flags = list(record.flags)
    for w in qrst_windows(peaks, x.size, template):
        if w.partial and not partial_edges:
            flags.append(f"uncancelled_beat:{w.peak}")
            log.info("%s", WindowOutOfBounds(f"beat at sample {w.peak} crosses the record edge"))
            continue
        if w.partial:
            flags.append(f"partial_window:{w.peak}")
        n = w.stop - w.start
        t = template.samples[w.t_start:w.t_start + n]
        seg = x[w.start:w.stop]
        a = fit_amplitude(seg, t)
        sub = a * t
        # a window clipped by the record edge has no TQ neighbour to join there
        left = 0.0 if w.clipped_left else sub[0]
        right = 0.0 if w.clipped_right else sub[-1]
        ramp = np.linspace(left, right, n)
        y[w.start:w.stop] = seg - (sub - ramp)
    return record.replace(samples=y, stage=Stage.FWAVE, flags=tuple(flags))


def extract_fwaves(record: EcgRecord) -> EcgRecord:
    """R-peak detection, template construction and cancellation in one call."""
    if record.stage is not Stage.PREPROCESSED:
        raise ValueError(f"extract_fwaves expects a preprocessed record, got {record.stage.value}")
    peaks = detect_r_peaks(record)
    template = build_qrst_template(record, peaks)
    return cancel_qrst(record, peaks, template)
