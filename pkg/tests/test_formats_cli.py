import json
import shutil
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import FS
from fwave import formats
from fwave.cli import EXIT_DATA, EXIT_INPUT, EXIT_OK, main
from fwave.core import EcgRecord, Outcome, Stage
from fwave.errors import InputFormatError
from fwave.synth import FWaveParams, synth_ecg


def dir_bytes(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def feature_csv(tmp_path_factory, default_cohort):
    cohort, _ = default_cohort
    base = tmp_path_factory.mktemp("table") / "features"
    formats.write_feature_table(base, [formats.feature_row(p) for p in cohort.patients])
    return base.with_suffix(".csv")


class TestSignalFormat:
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=50))
    def test_signal_round_trip_is_lossless(self, values):
        import tempfile
        from pathlib import Path

        rec = EcgRecord(values, 500.0, "II", "p1", Stage.PREPROCESSED, ("x",))
        with tempfile.TemporaryDirectory() as d:
            path = Path(d) / "p1.csv"
            formats.write_signal(rec, path)
            back, meta = formats.read_signal(path)
        assert np.array_equal(back.samples, rec.samples)
        assert (back.sampling_rate, back.lead, back.patient_id, back.stage, back.flags) == \
            (500.0, "II", "p1", Stage.PREPROCESSED, ("x",))
        assert meta["stage"] == "preprocessed"

    def test_bad_header_reports_line_one(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("index,value\n0,1.0\n")
        with pytest.raises(InputFormatError) as err:
            formats.read_signal(path, FS)
        assert err.value.line == 1

    def test_bad_value_reports_its_line(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("sample_index,amplitude_mv\n0,1.0\n1,abc\n")
        with pytest.raises(InputFormatError) as err:
            formats.read_signal(path, FS)
        assert err.value.line == 3

    def test_out_of_sequence_index(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("sample_index,amplitude_mv\n0,1.0\n2,1.0\n")
        with pytest.raises(InputFormatError) as err:
            formats.read_signal(path, FS)
        assert err.value.line == 3

    def test_missing_sidecar_needs_rate(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("sample_index,amplitude_mv\n0,1.0\n")
        with pytest.raises(InputFormatError):
            formats.read_signal(path)
        rec, _ = formats.read_signal(path, 250.0)
        assert rec.sampling_rate == 250.0 and rec.patient_id == "a" and rec.stage is Stage.RAW


class TestFeatureTable:
    def test_round_trip_is_lossless(self, default_cohort, tmp_path):
        cohort, _ = default_cohort
        base = tmp_path / "features"
        formats.write_feature_table(base, [formats.feature_row(p) for p in cohort.patients])
        back = formats.read_feature_table(base.with_suffix(".csv"))
        assert back == list(cohort.patients)
        mirror = json.loads(base.with_suffix(".json").read_text())
        assert [r["patient_id"] for r in mirror] == [p.patient_id for p in cohort.patients]

    def test_failed_rows_are_skipped(self, default_cohort, tmp_path):
        cohort, _ = default_cohort
        base = tmp_path / "features"
        rows = [formats.feature_row(cohort.patients[0]),
                formats.failed_row("bad", Outcome.AF, "RecordTooShort: 4 s")]
        formats.write_feature_table(base, rows)
        assert [p.patient_id for p in formats.read_feature_table(base.with_suffix(".csv"))] == \
            [cohort.patients[0].patient_id]

    def test_missing_column(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("patient_id,gamma\np1,2.0\n")
        with pytest.raises(InputFormatError) as err:
            formats.read_feature_table(path)
        assert err.value.line == 1


def write_raw(path, duration, seed, outcome=None):
    rec = synth_ecg(FWaveParams(f0=6.0, gamma_true=2.0), duration=duration, seed=seed).raw
    rec = rec.replace(patient_id=path.stem)
    formats.write_signal(rec, path, {"outcome": outcome} if outcome else None)
    return rec


class TestCli:
    def test_malformed_header_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "in" / "p.csv"
        bad.parent.mkdir()
        bad.write_text("time,mv\n0,0.1\n")
        code = main(["preprocess", str(bad), "--fs", "977", "--out", str(tmp_path / "o")])
        assert code == EXIT_INPUT
        assert f"{bad}:1:" in capsys.readouterr().err

    def test_non_finite_sample_exits_3(self, tmp_path, capsys):
        bad = tmp_path / "p.csv"
        bad.write_text("sample_index,amplitude_mv\n0,0.1\n1,nan\n")
        assert main(["preprocess", str(bad), "--fs", "977", "--out", str(tmp_path / "o")]) == EXIT_DATA
        assert "error" in capsys.readouterr().err

    def test_empty_input_set_exits_2(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        code = main(["features", str(tmp_path / "empty"), "--out", str(tmp_path / "o")])
        assert code == EXIT_INPUT
        assert "empty input set" in capsys.readouterr().err

    def test_missing_input_exits_2(self, tmp_path):
        assert main(["features", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == EXIT_INPUT

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"synth": {"n_sr": 1, "colour": "red"}}))
        code = main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == EXIT_INPUT
        assert "colour" in capsys.readouterr().err

    def test_usage_error_exits_2(self, capsys):
        assert main(["evaluate"]) == 2
        capsys.readouterr()

    def test_missing_outcome_column_exits_2(self, tmp_path, feature_csv):
        lines = feature_csv.read_text().splitlines()
        header = lines[0].split(",")
        drop = header.index("outcome")
        table = tmp_path / "t.csv"
        table.write_text("\n".join(",".join(c for i, c in enumerate(line.split(",")) if i != drop)
                                   for line in lines) + "\n")
        assert main(["stats", str(table), "--out", str(tmp_path / "o")]) == EXIT_INPUT

    def test_single_class_exits_3(self, tmp_path, feature_csv, capsys):
        lines = feature_csv.read_text().splitlines()
        table = tmp_path / "t.csv"
        table.write_text("\n".join([lines[0]] + [ln for ln in lines[1:] if ",SR," in ln]) + "\n")
        assert main(["evaluate", str(table), "--out", str(tmp_path / "o")]) == EXIT_DATA
        assert "no patients in class AF" in capsys.readouterr().err

    def test_short_and_long_records(self, tmp_path):
        inp = tmp_path / "in"
        inp.mkdir()
        write_raw(inp / "short.csv", 4.0, 1, "SR")
        write_raw(inp / "long.csv", 45.0, 2, "AF")
        out = tmp_path / "o"
        assert main(["preprocess", str(inp), "--out", str(out / "pre")]) == EXIT_OK
        log = json.loads((out / "pre" / "preprocess_log.json").read_text())
        short = {r["input"]: r["too_short_for_features"] for r in log["records"]}
        assert short == {"long.csv": False, "short.csv": True}

        assert main(["features", str(inp), "--out", str(out / "feat")]) == EXIT_OK
        rows = json.loads((out / "feat" / "features.json").read_text())
        by_id = {r["patient_id"]: r for r in rows}
        assert by_id["long"]["n_segments"] == 5 and by_id["long"]["status"] == "ok"
        assert by_id["long"]["outcome"] == "AF"
        assert by_id["short"]["status"].startswith("failed")
        feat_log = json.loads((out / "feat" / "features_log.json").read_text())
        assert feat_log["n_failed"] == 1

    def test_all_inputs_failing_exits_3(self, tmp_path):
        inp = tmp_path / "in"
        inp.mkdir()
        write_raw(inp / "short.csv", 4.0, 1)
        assert main(["features", str(inp), "--out", str(tmp_path / "o")]) == EXIT_DATA

    def test_extract_fwaves_writes_fwave_stage(self, tmp_path):
        inp = tmp_path / "in"
        inp.mkdir()
        write_raw(inp / "p.csv", 8.0, 3)
        assert main(["extract-fwaves", str(inp), "--out", str(tmp_path / "o")]) == EXIT_OK
        rec, _ = formats.read_signal(tmp_path / "o" / "p.csv")
        assert rec.stage is Stage.FWAVE and len(rec) == int(8.0 * FS)

    def test_smallest_synth_cohort(self, tmp_path):
        out = tmp_path / "s"
        assert main(["synth", "--n-sr", "1", "--n-af", "1", "--duration", "12", "--out", str(out)]) == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert (manifest["n_sr"], manifest["n_af"]) == (1, 1)
        assert len(list((out / "signals").glob("*.csv"))) == 2

    def test_bad_synth_spec_exits_2(self, tmp_path):
        assert main(["synth", "--n-af", "0", "--out", str(tmp_path / "s")]) == EXIT_INPUT

    def test_seeded_runs_are_byte_identical(self, tmp_path):
        runs = []
        for k in range(2):
            root = tmp_path / f"run{k}"
            assert main(["synth", "--n-sr", "3", "--n-af", "3", "--duration", "12", "--seed", "5",
                         "--out", str(root / "synth")]) == EXIT_OK
            assert main(["features", str(root / "synth" / "signals"), "--outcomes",
                         str(root / "synth" / "outcomes.csv"), "--out", str(root / "feat")]) == EXIT_OK
            assert main(["stats", str(root / "feat" / "features.csv"), "--clinical",
                         str(root / "synth" / "clinical.csv"), "--out", str(root / "stats")]) == EXIT_OK
            assert main(["evaluate", str(root / "feat" / "features.csv"), "--features", "gamma",
                         "--features", "gamma,F_TF", "--folds", "3", "--repeats", "5",
                         "--out", str(root / "eval")]) == EXIT_OK
            runs.append(dir_bytes(root))
        assert runs[0].keys() == runs[1].keys()
        for name in runs[0]:
            assert runs[0][name] == runs[1][name], name

    def test_console_script(self, tmp_path):
        exe = shutil.which("fwave")
        cmd = [exe] if exe else [sys.executable, "-m", "fwave.cli"]
        res = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
        assert res.returncode == 0 and "fwave" in res.stdout
