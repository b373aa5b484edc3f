"""Command-line entry point.

Subcommands: preprocess, extract-fwaves, features, stats, evaluate, synth.
Exit codes: 0 success, 2 input/format error, 3 data/validation error,
4 internal error.  Verbosity comes from the ``FWAVE_LOG`` environment
variable (a logging level name such as ``INFO`` or ``DEBUG``).
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import logging
import os
import sys
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, formats, learn
from .cancellation import detect_r_peaks, extract_fwaves
from .cohort import Cohort, clinical_table, feature_table, process_record_spectra
from .core import FEATURE_COLUMNS, TOO_SHORT_FLAG, Outcome, Stage, validate_record
from .errors import FWaveError, InputFormatError
from .preprocess import PreprocessConfig, preprocess
from .spectral import WelchConfig, aligned_on_peak, dominant_frequency
from .synth import CohortSpec, draw_patients, patient_ecg, synth_clinical

log = logging.getLogger("fwave")

EXIT_OK, EXIT_INPUT, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
DEFAULT_CANDIDATES = ("gamma", "F_TF", "R_TF", "C0_TF", "f0")
ALIGNED_OFFSETS = np.round(np.arange(-30, 201) * 0.1, 10)
PSD_MAX_HZ = 25.0


class DataError(FWaveError):
    """Input parsed fine but cannot be analysed (exit code 3)."""


# --- configuration ------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if not path:
        return {}
    cfg = formats.read_json(Path(path))
    if not isinstance(cfg, dict):
        raise InputFormatError("config must be a JSON object", path)
    return cfg


def resolve(cls, config: Mapping, section: str, flags: Mapping[str, object]):
    """Build ``cls`` with precedence flag > config file section > default.

    Returns the object and a ``{field: source}`` map for the run log.
    """
    values = config.get(section, {})
    if not isinstance(values, dict):
        raise InputFormatError(f"config section {section!r} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known.keys())
    if unknown:
        raise InputFormatError(f"unknown key(s) in config section {section!r}: {unknown}")
    kwargs, sources = {}, {}
    for name, f in known.items():
        if flags.get(name) is not None:
            v, src = flags[name], "flag"
        elif name in values:
            v, src = values[name], "config"
        else:
            sources[name] = "default"
            continue
        if isinstance(v, list):
            v = tuple(v)
        kwargs[name] = v
        sources[name] = src
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise InputFormatError(f"invalid {section} settings: {exc}") from None
    return obj, sources


def _settings(obj, sources: Mapping[str, str]) -> dict:
    return {name: {"value": getattr(obj, name), "source": sources[name]}
            for name in sources}


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _signal_inputs(paths: Sequence[str]) -> list[Path]:
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(q for q in p.glob("*.csv")))
        elif p.exists():
            files.append(p)
        else:
            raise InputFormatError("no such file or directory", p)
    return files


def _map(func, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(func, items, chunksize=max(1, len(items) // (4 * jobs))))
    return [func(i) for i in items]


def _preprocess_config(args, config):
    return resolve(PreprocessConfig, config, "preprocess",
                   {"powerline_method": getattr(args, "powerline", None),
                    "mains_freq": getattr(args, "mains", None)})


# --- preprocess / extract-fwaves -------------------------------------------------

def _read_all(files: Sequence[Path], default_fs: float | None):
    return [formats.read_signal(f, default_fs) for f in files]


def cmd_preprocess(args) -> int:
    config = load_config(args.config)
    pre_cfg, sources = _preprocess_config(args, config)
    files = _signal_inputs(args.inputs)
    if not files:
        raise InputFormatError("no input files")
    records = _read_all(files, args.fs)
    out = _out_dir(args.out)
    entries = []
    for path, (rec, _) in zip(files, records):
        if rec.stage is not Stage.RAW:
            raise DataError(f"{path}: expected a raw record, got {rec.stage.value}")
        rec = validate_record(rec)
        res = preprocess(rec, pre_cfg)
        formats.write_signal(res, out / path.name)
        entries.append({"input": path.name, "patient_id": rec.patient_id,
                        "n_samples": len(res), "duration_s": res.duration,
                        "flags": list(res.flags),
                        "too_short_for_features": TOO_SHORT_FLAG in res.flags})
        if TOO_SHORT_FLAG in res.flags:
            log.warning("%s: %.2f s is too short for feature extraction", path.name, res.duration)
    formats.write_json(out / "preprocess_log.json", {
        "command": "preprocess", "version": __version__,
        "filters": ["baseline high-pass (zero-phase Butterworth)",
                    f"powerline removal ({pre_cfg.powerline_method})",
                    "low-pass (zero-phase Butterworth)"],
        "settings": _settings(pre_cfg, sources), "jobs": 1, "records": entries,
    })
    return EXIT_OK


def cmd_extract_fwaves(args) -> int:
    config = load_config(args.config)
    pre_cfg, sources = _preprocess_config(args, config)
    files = _signal_inputs(args.inputs)
    if not files:
        raise InputFormatError("no input files")
    records = _read_all(files, args.fs)
    out = _out_dir(args.out)
    entries = []
    for path, (rec, _) in zip(files, records):
        rec = validate_record(rec)
        if rec.stage is Stage.RAW:
            rec = preprocess(rec, pre_cfg)
        elif rec.stage is not Stage.PREPROCESSED:
            raise DataError(f"{path}: already at the f-wave stage")
        n_beats = len(detect_r_peaks(rec))
        fw = extract_fwaves(rec)
        formats.write_signal(fw, out / path.name)
        entries.append({"input": path.name, "patient_id": rec.patient_id,
                        "n_samples": len(fw), "n_beats": n_beats, "flags": list(fw.flags)})
    formats.write_json(out / "extract_fwaves_log.json", {
        "command": "extract-fwaves", "version": __version__,
        "settings": _settings(pre_cfg, sources), "jobs": 1, "records": entries,
    })
    return EXIT_OK


# --- features ------------------------------------------------------------------------

def _feature_worker(task):
    path, outcome, default_fs, pre_cfg, welch_cfg = task
    try:
        rec, meta = formats.read_signal(path, default_fs)
        if outcome is None:
            outcome = Outcome(meta.get("outcome", Outcome.UNKNOWN.value))
        vec, spectra = process_record_spectra(rec, outcome, pre_cfg, welch_cfg)
    except (FWaveError, ValueError) as exc:
        return ("failed", path.stem, outcome or Outcome.UNKNOWN, f"{type(exc).__name__}: {exc}")
    f_idx = spectra[0].index_of(PSD_MAX_HZ)
    mean_psd = np.mean([s.values[:f_idx + 1] for s in spectra], axis=0)
    freqs = spectra[0].frequencies[:f_idx + 1]
    # each segment is aligned on its own dominant peak
    aligned = [aligned_on_peak(s, dominant_frequency(s, welch_cfg.df_search_band)[0],
                               ALIGNED_OFFSETS) for s in spectra]
    return ("ok", vec, freqs, mean_psd, aligned)


def _nanmean_rows(rows: list[np.ndarray]) -> np.ndarray:
    if not rows:
        return np.full(ALIGNED_OFFSETS.size, np.nan)
    arr = np.array(rows)
    count = np.sum(~np.isnan(arr), axis=0)
    total = np.nansum(arr, axis=0)
    with np.errstate(invalid="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def cmd_features(args) -> int:
    config = load_config(args.config)
    pre_cfg, pre_src = _preprocess_config(args, config)
    welch_cfg, welch_src = resolve(WelchConfig, config, "welch", {})
    files = _signal_inputs(args.inputs)
    if not files:
        raise InputFormatError("empty input set")
    outcomes = formats.read_outcomes(Path(args.outcomes)) if args.outcomes else {}
    tasks = []
    for f in files:
        pid = f.stem
        tasks.append((f, outcomes.get(pid), args.fs, pre_cfg, welch_cfg))
    results = _map(_feature_worker, tasks, args.jobs)

    out = _out_dir(args.out)
    rows, psd_rows, failures = [], [], []
    aligned: dict[str, list[np.ndarray]] = {"all": [], "SR": [], "AF": []}
    for res in results:
        if res[0] == "failed":
            _, pid, outcome, msg = res
            log.warning("%s: %s", pid, msg)
            rows.append(formats.failed_row(pid, outcome, msg))
            failures.append({"patient_id": pid, "error": msg})
            continue
        _, vec, freqs, mean_psd, segs = res
        rows.append(formats.feature_row(vec))
        psd_rows.extend({"patient_id": vec.patient_id, "frequency_hz": f, "psd": p}
                        for f, p in zip(freqs, mean_psd))
        aligned["all"].extend(segs)
        if vec.outcome in (Outcome.SR, Outcome.AF):
            aligned[vec.outcome.value].extend(segs)

    formats.write_feature_table(out / "features", rows)
    formats.write_table(out / "psd_patients", ("patient_id", "frequency_hz", "psd"), psd_rows)
    means = {k: _nanmean_rows(v) for k, v in aligned.items()}
    formats.write_table(out / "psd_aligned", ("offset_hz", "mean_all", "mean_sr", "mean_af"), [
        {"offset_hz": o, "mean_all": means["all"][i], "mean_sr": means["SR"][i],
         "mean_af": means["AF"][i]} for i, o in enumerate(ALIGNED_OFFSETS)
    ])
    formats.write_json(out / "features_log.json", {
        "command": "features", "version": __version__, "jobs": args.jobs,
        "settings": {"preprocess": _settings(pre_cfg, pre_src),
                     "welch": _settings(welch_cfg, welch_src)},
        "n_inputs": len(files), "n_failed": len(failures), "failures": failures,
    })
    if len(failures) == len(files):
        raise DataError("feature extraction failed for every input")
    return EXIT_OK


# --- stats ------------------------------------------------------------------------------

COMPARISON_COLUMNS = ("feature", "mean_sr", "sd_sr", "mean_af", "sd_af", "test", "p_value",
                      "normal_sr", "normal_af", "homoscedastic")


def _comparison_row(c) -> dict:
    return {"feature": c.feature_name, "mean_sr": c.mean_sr, "sd_sr": c.sd_sr,
            "mean_af": c.mean_af, "sd_af": c.sd_af, "test": c.test_used, "p_value": c.p_value,
            "normal_sr": c.normal_sr, "normal_af": c.normal_af, "homoscedastic": c.homoscedastic}


def _labelled_cohort(path: str, clinical=None) -> Cohort:
    patients = formats.read_feature_table(Path(path), require_outcome=True)
    unlabeled = [p.patient_id for p in patients if p.outcome is Outcome.UNKNOWN]
    if unlabeled:
        raise InputFormatError(f"patients without outcome: {unlabeled[:5]}", path)
    for o in (Outcome.SR, Outcome.AF):
        if not any(p.outcome is o for p in patients):
            raise DataError(f"no patients in class {o.value}")
    return Cohort(tuple(patients), clinical or {})


def cmd_stats(args) -> int:
    load_config(args.config)  # the tests are fixed; only validate the file
    clinical = formats.read_clinical(Path(args.clinical)) if args.clinical else {}
    cohort = _labelled_cohort(args.features, clinical)
    out = _out_dir(args.out)
    formats.write_table(out / "feature_stats", COMPARISON_COLUMNS,
                        [_comparison_row(c) for c in feature_table(cohort)])
    if clinical:
        formats.write_table(out / "clinical_stats", COMPARISON_COLUMNS,
                            [_comparison_row(c) for c in clinical_table(cohort)])
    n_sr = sum(p.outcome is Outcome.SR for p in cohort.patients)
    formats.write_json(out / "stats_log.json", {
        "command": "stats", "version": __version__, "n_sr": n_sr,
        "n_af": len(cohort) - n_sr, "clinical": bool(clinical),
    })
    return EXIT_OK


# --- evaluate ------------------------------------------------------------------------------

REPORT_COLUMNS = ("model", "n_features", "se_pct", "sp_pct", "acc_pct", "auc", "ppv_pct",
                  "npv_pct", "auc_sd", "repeats", "folds", "seed")


def _model_name(features: Sequence[str]) -> str:
    return "+".join(features)


def _parse_models(specs: Sequence[str]) -> list[tuple[str, ...] | str]:
    models: list = []
    for spec in specs or ["gamma"]:
        if spec.strip() == "auto":
            models.append("auto")
            continue
        feats = tuple(s.strip() for s in spec.split(",") if s.strip())
        bad = [f for f in feats if f not in FEATURE_COLUMNS.values()]
        if not feats or bad:
            raise InputFormatError(f"unknown feature(s) {bad or [spec]}")
        models.append(feats)
    return models


def cmd_evaluate(args) -> int:
    config = load_config(args.config)
    cv_cfg, cv_src = resolve(learn.CvConfig, config, "cv", {
        "rng_seed": args.seed, "n_repeats": args.repeats, "n_folds": args.folds,
        "priors": args.priors,
    })
    models = _parse_models(args.features)
    cohort = _labelled_cohort(args.table)
    out = _out_dir(args.out)

    reports: dict[str, learn.EvaluationReport] = {}
    selection_rows = []
    for m in models:
        if m == "auto":
            cands = tuple(args.candidates.split(",")) if args.candidates else DEFAULT_CANDIDATES
            _parse_models([",".join(cands)])
            sel = learn.sequential_forward_selection(cohort, cands, cv_cfg)
            reports["auto(nested)"] = sel.report
            selection_rows.extend({"feature": f, "frequency": sel.frequencies[f], "kind": "feature"}
                                  for f in cands)
            selection_rows.extend(
                {"feature": _model_name(s) or "(none)", "frequency": n / sum(sel.set_counts.values()),
                 "kind": "set"}
                for s, n in sorted(sel.set_counts.items(), key=lambda kv: (-kv[1], kv[0]))
            )
            if sel.final_set:
                reports[_model_name(sel.final_set)] = learn.repeated_cv(cohort, sel.final_set, cv_cfg)
        else:
            reports[_model_name(m)] = learn.repeated_cv(cohort, m, cv_cfg)

    rows, per_rows, roc_rows = [], [], []
    for name, r in reports.items():
        rows.append({"model": name, "n_features": len(r.feature_names) if "(" not in name else None,
                     "se_pct": 100 * r.se, "sp_pct": 100 * r.sp, "acc_pct": 100 * r.acc,
                     "auc": r.auc, "ppv_pct": 100 * r.ppv, "npv_pct": 100 * r.npv,
                     "auc_sd": float(np.std(r.per_repeat["auc"], ddof=1)) if cv_cfg.n_repeats > 1 else 0.0,
                     "repeats": cv_cfg.n_repeats, "folds": cv_cfg.n_folds, "seed": cv_cfg.rng_seed})
        for i in range(cv_cfg.n_repeats):
            per_rows.append({"model": name, "repeat": i, "threshold": r.thresholds[i],
                             **{m: r.per_repeat[m][i] for m in learn.METRICS}})
            roc = r.rocs[i]
            roc_rows.extend({"model": name, "repeat": i, "threshold": t, "se": se, "sp": sp}
                            for t, se, sp in zip(roc.thresholds, roc.se, roc.sp))
    formats.write_table(out / "evaluation", REPORT_COLUMNS, rows)
    formats.write_table(out / "per_repeat", ("model", "repeat", "threshold", *learn.METRICS), per_rows)
    formats.write_table(out / "roc", ("model", "repeat", "threshold", "se", "sp"), roc_rows)
    if selection_rows:
        formats.write_table(out / "selection", ("kind", "feature", "frequency"), selection_rows)

    y = cohort.labels()
    mc_rows = []
    for a, b in itertools.combinations(reports, 2):
        ra, rb = reports[a], reports[b]
        ps, bs, cs = [], [], []
        for i in range(cv_cfg.n_repeats):
            ok_a, ok_b = ra.predictions[i] == y, rb.predictions[i] == y
            bs.append(int(np.sum(ok_a & ~ok_b)))
            cs.append(int(np.sum(~ok_a & ok_b)))
            ps.append(learn.mcnemar(ra.predictions[i], rb.predictions[i], y))
        mc_rows.append({"model_a": a, "model_b": b, "median_b": float(np.median(bs)),
                        "median_c": float(np.median(cs)), "median_p": float(np.median(ps)),
                        "share_p_below_0.05": float(np.mean(np.array(ps) < 0.05))})
    if mc_rows:
        formats.write_table(out / "mcnemar", ("model_a", "model_b", "median_b", "median_c",
                                              "median_p", "share_p_below_0.05"), mc_rows)
    formats.write_json(out / "evaluate_log.json", {
        "command": "evaluate", "version": __version__,
        "settings": _settings(cv_cfg, cv_src), "models": list(reports),
        "n_patients": len(cohort), "n_af": int(y.sum()),
    })
    return EXIT_OK


# --- synth ------------------------------------------------------------------------------------

def _synth_worker(task):
    truth, spec = task
    return patient_ecg(truth, spec).raw


def cmd_synth(args) -> int:
    config = load_config(args.config)
    try:
        spec, src = resolve(CohortSpec, config, "synth", {
            "n_sr": args.n_sr, "n_af": args.n_af, "seed": args.seed, "duration": args.duration,
        })
        truths = draw_patients(spec)
    except FWaveError as exc:
        raise InputFormatError(f"bad cohort spec: {exc}") from None
    out = _out_dir(args.out)
    sig_dir = out / "signals"
    truth_dir = out / "truth"
    sig_dir.mkdir(exist_ok=True)
    truth_dir.mkdir(exist_ok=True)

    records = _map(_synth_worker, [(t, spec) for t in truths], args.jobs)
    files = []
    for t, rec in zip(truths, records):
        formats.write_signal(rec, sig_dir / f"{t.patient_id}.csv")
        formats.write_json(truth_dir / f"{t.patient_id}.json", {
            "patient_id": t.patient_id, "outcome": t.outcome.value,
            "fwave": dataclasses.asdict(t.fwave), "heart_rate_bpm": t.heart_rate,
            "snr_db": t.snr_db,
        })
        files.append(f"signals/{t.patient_id}.csv")
    formats.write_table(out / "outcomes", ("patient_id", "outcome"),
                        [{"patient_id": t.patient_id, "outcome": t.outcome.value} for t in truths])
    formats.write_table(out / "clinical", formats.CLINICAL_COLUMNS,
                        [formats.clinical_row(c) for c in synth_clinical(truths, spec.seed)])
    formats.write_json(out / "manifest.json", {
        "command": "synth", "version": __version__, "jobs": args.jobs,
        "settings": _settings(spec, src),
        "n_patients": len(truths),
        "n_sr": sum(t.outcome is Outcome.SR for t in truths),
        "n_af": sum(t.outcome is Outcome.AF for t in truths),
        "signals": files, "outcomes": "outcomes.csv", "clinical": "clinical.csv",
        "truth": [f"truth/{t.patient_id}.json" for t in truths],
    })
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fwave", description="f-wave spectral analysis of AF ECGs")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, jobs=True):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help="JSON config file with per-stage sections")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")

    def signal_opts(sp):
        sp.add_argument("inputs", nargs="*", help="signal CSV files or directories of them")
        sp.add_argument("--fs", type=float, default=None,
                        help="sampling rate for inputs without a JSON sidecar")
        sp.add_argument("--powerline", choices=("swt", "notch"), default=None)
        sp.add_argument("--mains", type=float, default=None, help="mains frequency in Hz")

    sp = sub.add_parser("preprocess", help="baseline, powerline and 70 Hz low-pass filtering")
    signal_opts(sp)
    common(sp, jobs=False)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("extract-fwaves", help="QRST cancellation (raw inputs are preprocessed first)")
    signal_opts(sp)
    common(sp, jobs=False)
    sp.set_defaults(func=cmd_extract_fwaves)

    sp = sub.add_parser("features", help="per-patient spectral feature table and plot data")
    signal_opts(sp)
    sp.add_argument("--outcomes", help="CSV with patient_id,outcome columns")
    common(sp)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("stats", help="SR-vs-AF group comparison tables")
    sp.add_argument("features", help="feature table CSV")
    sp.add_argument("--clinical", help="clinical table CSV")
    common(sp, jobs=False)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("evaluate", help="repeated cross-validated LDA evaluation")
    sp.add_argument("table", help="feature table CSV")
    sp.add_argument("--features", action="append",
                    help="comma-separated model features, or 'auto'; repeatable")
    sp.add_argument("--candidates", help="comma-separated candidates for 'auto'")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--repeats", type=int, default=None)
    sp.add_argument("--folds", type=int, default=None)
    sp.add_argument("--priors", choices=learn.PRIORS, default=None)
    common(sp, jobs=False)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("synth", help="write a synthetic AF-ECG cohort")
    sp.add_argument("--n-sr", type=int, default=None)
    sp.add_argument("--n-af", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--duration", type=float, default=None)
    common(sp)
    sp.set_defaults(func=cmd_synth)
    return p


def _setup_logging() -> None:
    level = os.environ.get("FWAVE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    log.info("fwave %s: %s", args.command, " ".join(map(str, argv if argv is not None else sys.argv[1:])))
    try:
        return args.func(args)
    except InputFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FWaveError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
