"""On-disk formats: signal CSV + JSON sidecar, feature and report tables.

Floats are written with ``repr`` so every value re-parses to the same double.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

import numpy as np

from .core import (
    FEATURE_COLUMNS,
    AfDuration,
    ClinicalRecord,
    EcgRecord,
    Outcome,
    PatientFeatureVector,
    Sex,
    SpectralFeatures,
    Stage,
)
from .errors import InputFormatError

SIGNAL_HEADER = ("sample_index", "amplitude_mv")
FEATURE_TABLE_COLUMNS = ("patient_id", *FEATURE_COLUMNS.values(), "n_segments", "outcome", "status")
CLINICAL_COLUMNS = ("patient_id", "sex", "age", "af_duration_class", "bmi", "la_diameter")


def fmt(value) -> str:
    """Lossless text form of a cell value."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else repr(v))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(getattr(value, "value", value))


def _jsonable(value):
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    if hasattr(value, "value") and not isinstance(value, (str, int)):
        return value.value
    return value


def write_json(path: Path, obj) -> None:
    text = json.dumps(_jsonable(obj), indent=2, allow_nan=False, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path: Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputFormatError(exc.msg, path, exc.lineno) from exc
    except OSError as exc:
        raise InputFormatError(str(exc), path) from exc


def write_table(base: Path, columns: Sequence[str], rows: Iterable[Mapping]) -> tuple[Path, Path]:
    """Write ``base.csv`` and a ``base.json`` mirror with the same field names."""
    base = Path(base)
    rows = [dict(r) for r in rows]
    csv_path, json_path = base.with_suffix(".csv"), base.with_suffix(".json")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c)) for c in columns])
    write_json(json_path, [{c: r.get(c) for c in columns} for r in rows])
    return csv_path, json_path


def _read_csv(path: Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise InputFormatError("empty file", path, 1) from None
            rows = [(reader.line_num, row) for row in reader if row]
    except OSError as exc:
        raise InputFormatError(str(exc), path) from exc
    except csv.Error as exc:
        raise InputFormatError(str(exc), path) from exc
    return [h.strip() for h in header], rows


def _float(text: str, path, line: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise InputFormatError(f"{what}: cannot parse {text!r} as a number", path, line) from None


# --- signals ---------------------------------------------------------------

def sidecar_path(csv_path: Path) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_signal(record: EcgRecord, csv_path: Path, extra: Mapping | None = None) -> None:
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(SIGNAL_HEADER) + "\n")
        fh.writelines(f"{i},{float(v)!r}\n" for i, v in enumerate(record.samples))
    meta = {
        "patient_id": record.patient_id,
        "lead": record.lead,
        "sampling_rate_hz": record.sampling_rate,
        "stage": record.stage.value,
    }
    if record.flags:
        meta["flags"] = list(record.flags)
    if extra:
        meta.update(extra)
    write_json(sidecar_path(csv_path), meta)


def read_signal(csv_path: Path, default_fs: float | None = None) -> tuple[EcgRecord, dict]:
    """Read a signal CSV and its sidecar; returns the record and the raw sidecar dict.

    Without a sidecar, ``default_fs`` is required and the record is taken as raw
    with the file stem as patient id.
    """
    csv_path = Path(csv_path)
    header, rows = _read_csv(csv_path)
    if tuple(header) != SIGNAL_HEADER:
        raise InputFormatError(f"expected header {','.join(SIGNAL_HEADER)!r}, got {','.join(header)!r}",
                               csv_path, 1)
    values = np.empty(len(rows))
    for k, (line, row) in enumerate(rows):
        if len(row) != 2:
            raise InputFormatError(f"expected 2 fields, got {len(row)}", csv_path, line)
        idx = _float(row[0], csv_path, line, "sample_index")
        if idx != k:
            raise InputFormatError(f"sample_index {row[0]} out of sequence (expected {k})",
                                   csv_path, line)
        values[k] = _float(row[1], csv_path, line, "amplitude_mv")

    side = sidecar_path(csv_path)
    if side.exists():
        meta = read_json(side)
        if not isinstance(meta, dict):
            raise InputFormatError("sidecar must be a JSON object", side)
        missing = {"patient_id", "lead", "sampling_rate_hz", "stage"} - meta.keys()
        if missing:
            raise InputFormatError(f"sidecar lacks {sorted(missing)}", side)
        try:
            stage = Stage(meta["stage"])
        except ValueError:
            raise InputFormatError(f"unknown stage {meta['stage']!r}", side) from None
        fs = meta["sampling_rate_hz"]
        if not isinstance(fs, (int, float)) or isinstance(fs, bool):
            raise InputFormatError("sampling_rate_hz must be a number", side)
        rec = EcgRecord(values, float(fs), str(meta["lead"]), str(meta["patient_id"]), stage,
                        tuple(meta.get("flags", ())))
        return rec, meta
    if default_fs is None:
        raise InputFormatError("missing JSON sidecar and no sampling rate given", csv_path)
    meta = {"patient_id": csv_path.stem, "lead": "V1", "sampling_rate_hz": default_fs,
            "stage": Stage.RAW.value}
    return EcgRecord(values, default_fs, patient_id=csv_path.stem), meta


# --- feature tables --------------------------------------------------------------

def feature_row(vec: PatientFeatureVector) -> dict:
    row = {"patient_id": vec.patient_id, **vec.features.as_columns(),
           "n_segments": vec.n_segments, "outcome": vec.outcome.value, "status": "ok"}
    return row


def failed_row(patient_id: str, outcome: Outcome, message: str) -> dict:
    return {"patient_id": patient_id, "outcome": outcome.value,
            "status": "failed: " + " ".join(message.split())}


def write_feature_table(base: Path, rows: Sequence[Mapping]) -> tuple[Path, Path]:
    return write_table(base, FEATURE_TABLE_COLUMNS, rows)


def read_feature_table(path: Path, require_outcome: bool = True) -> list[PatientFeatureVector]:
    """Patients with ``status == ok``; failed rows are skipped."""
    path = Path(path)
    header, rows = _read_csv(path)
    needed = ["patient_id", *FEATURE_COLUMNS.values()]
    if require_outcome:
        needed.append("outcome")
    missing = [c for c in needed if c not in header]
    if missing:
        raise InputFormatError(f"missing column(s) {missing}", path, 1)
    col = {c: i for i, c in enumerate(header)}
    out = []
    for line, row in rows:
        if len(row) != len(header):
            raise InputFormatError(f"expected {len(header)} fields, got {len(row)}", path, line)
        if "status" in col and row[col["status"]] not in ("", "ok"):
            continue
        values = {c: _float(row[col[c]], path, line, c) for c in FEATURE_COLUMNS.values()}
        outcome = Outcome.UNKNOWN
        if "outcome" in col and row[col["outcome"]]:
            try:
                outcome = Outcome(row[col["outcome"]])
            except ValueError:
                raise InputFormatError(f"unknown outcome {row[col['outcome']]!r}", path, line) from None
        n_seg = 1
        if "n_segments" in col and row[col["n_segments"]]:
            n_seg = int(_float(row[col["n_segments"]], path, line, "n_segments"))
        out.append(PatientFeatureVector(row[col["patient_id"]], SpectralFeatures.from_columns(values),
                                        n_seg, outcome))
    return out


def read_outcomes(path: Path) -> dict[str, Outcome]:
    path = Path(path)
    header, rows = _read_csv(path)
    if "patient_id" not in header or "outcome" not in header:
        raise InputFormatError("outcome table needs patient_id and outcome columns", path, 1)
    i, j = header.index("patient_id"), header.index("outcome")
    out = {}
    for line, row in rows:
        try:
            out[row[i]] = Outcome(row[j])
        except (ValueError, IndexError):
            raise InputFormatError(f"bad outcome row {row!r}", path, line) from None
    return out


# --- clinical table ----------------------------------------------------------------

def clinical_row(rec: ClinicalRecord) -> dict:
    return {c: getattr(rec, c) for c in CLINICAL_COLUMNS}


def read_clinical(path: Path) -> dict[str, ClinicalRecord]:
    path = Path(path)
    header, rows = _read_csv(path)
    if "patient_id" not in header:
        raise InputFormatError("clinical table needs a patient_id column", path, 1)
    col = {c: i for i, c in enumerate(header)}
    out = {}
    for line, row in rows:
        def get(name):
            return row[col[name]] if name in col and col[name] < len(row) and row[col[name]] else None
        try:
            sex = Sex(get("sex")) if get("sex") else None
            dur = AfDuration(get("af_duration_class")) if get("af_duration_class") else None
        except ValueError as exc:
            raise InputFormatError(str(exc), path, line) from None
        nums = {k: (_float(get(k), path, line, k) if get(k) else None) for k in ("age", "bmi", "la_diameter")}
        pid = row[col["patient_id"]]
        out[pid] = ClinicalRecord(pid, sex, nums["age"], dur, nums["bmi"], nums["la_diameter"])
    return out
