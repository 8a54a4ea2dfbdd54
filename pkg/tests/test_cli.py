import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

import spamsim as sp
from spamsim import cli
from spamsim.detection import sample_counts


def load_schema(name):
    with resources.files("spamsim.schemas").joinpath(name).open() as fh:
        return json.load(fh)


def validate(path, schema_name):
    document = json.loads(path.read_text())
    jsonschema.validate(document, load_schema(schema_name))
    return document


def test_run_spam_writes_validated_outputs(tmp_path):
    out = tmp_path / "run"
    code = cli.main([
        "run-spam", "--shots", "3000", "--seed", "5", "--encoding", "M",
        "--threads", "2", "--out", str(out),
    ])
    assert code == 0
    summary = validate(out / "summary.json", "summary.schema.json")
    assert summary["seed"] == 5
    assert summary["shots_per_state"] == 3000
    assert set(summary["states"]) == {"zero", "one"}
    manifest = validate(out / "manifest.json", "manifest.schema.json")
    assert manifest["command"] == "run-spam"
    assert "summary.json" in manifest["outputs"]
    assert all("/" not in path for path in manifest["outputs"])
    for index in range(6):
        assert (out / f"histogram_R{index}.csv").exists()
    assert (out / "histogram_R3_accepted_zero.csv").exists()
    assert (out / "histogram_R3_accepted_one.csv").exists()


def test_run_spam_is_reproducible_byte_for_byte(tmp_path):
    args = ["run-spam", "--shots", "2000", "--seed", "9", "--encoding", "O"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    for index in range(6):
        name = f"histogram_R{index}.csv"
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_spam_records_flag(tmp_path):
    out = tmp_path / "rec"
    code = cli.main([
        "run-spam", "--shots", "500", "--seed", "1", "--prepare", "zero",
        "--records", "--out", str(out),
    ])
    assert code == 0
    lines = (out / "records_zero.csv").read_text().splitlines()
    assert lines[0] == "shot,prepared,R0,R1,R2,R3,R4,R5,flagged,reason,inferred"
    assert len(lines) == 501


def test_run_spam_rus_mode(tmp_path):
    out = tmp_path / "rus"
    code = cli.main([
        "run-spam", "--shots", "800", "--seed", "2", "--mode", "rus",
        "--max-attempts", "3", "--out", str(out),
    ])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mode"] == "rus"
    assert all(b["attempts_mean"] >= 1.0 for b in summary["states"].values())


def test_run_spam_rejects_bad_shot_count(tmp_path):
    assert cli.main(["run-spam", "--shots", "0", "--out", str(tmp_path / "x")]) == 2


def test_run_spam_missing_config_is_io_error(tmp_path):
    code = cli.main([
        "run-spam", "--shots", "10", "--config", str(tmp_path / "nope.json"),
        "--out", str(tmp_path / "x"),
    ])
    assert code == 3


def test_run_spam_invalid_config_document(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"pump\": {}}")
    code = cli.main(["run-spam", "--shots", "10", "--config", str(bad),
                     "--out", str(tmp_path / "x")])
    assert code == 2


def test_run_spam_config_conflicts_with_defaults_flag(tmp_path, model):
    good = tmp_path / "model.json"
    sp.save_error_model(model, str(good))
    code = cli.main([
        "run-spam", "--shots", "10", "--config", str(good), "--paper-defaults",
        "--out", str(tmp_path / "x"),
    ])
    assert code == 2


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("SPAMSIM_SEED", "77")
    out = tmp_path / "env"
    assert cli.main(["run-spam", "--shots", "200", "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["seed"] == 77
    # An explicit flag wins over the environment.
    out2 = tmp_path / "flag"
    assert cli.main(["run-spam", "--shots", "200", "--seed", "3", "--out", str(out2)]) == 0
    assert json.loads((out2 / "summary.json").read_text())["seed"] == 3
    monkeypatch.setenv("SPAMSIM_SEED", "not-a-number")
    assert cli.main(["run-spam", "--shots", "200", "--out", str(tmp_path / "y")]) == 2


def write_count_histogram(path, fraction, model, seed, n=4000):
    rng = np.random.default_rng(seed)
    counts = [sample_counts(fraction, model.detection, rng) for _ in range(n)]
    sp.write_histogram_csv(sp.CountHistogram.from_samples(counts, label=path.stem), str(path))


def test_calibrate_threshold_command(tmp_path, model):
    dark_csv = tmp_path / "dark.csv"
    bright_csv = tmp_path / "bright.csv"
    write_count_histogram(dark_csv, 0.0, model, seed=1)
    write_count_histogram(bright_csv, 1.0, model, seed=2)
    out = tmp_path / "cal"
    code = cli.main([
        "calibrate-threshold", str(dark_csv), str(bright_csv), "--out", str(out),
    ])
    assert code == 0
    document = validate(out / "calibration.json", "calibration.schema.json")
    expected = sp.calibrate_threshold(
        sp.read_histogram_csv(str(dark_csv)), sp.read_histogram_csv(str(bright_csv))
    )
    assert document["threshold"] == expected.threshold
    assert document["crossing"] == pytest.approx(expected.crossing)
    # The calibration must land close to the configured operating point.
    assert abs(document["threshold"] - model.detection.threshold) < 15


def test_calibrate_threshold_inseparable_histograms(tmp_path, model):
    same = tmp_path / "same.csv"
    write_count_histogram(same, 0.0, model, seed=3)
    code = cli.main([
        "calibrate-threshold", str(same), str(same), "--out", str(tmp_path / "cal"),
    ])
    assert code == 4


def test_predict_rejection_all_encodings(tmp_path, model):
    out = tmp_path / "rej"
    code = cli.main(["predict-rejection", "--encoding", "all", "--out", str(out)])
    assert code == 0
    document = validate(out / "rejection.json", "rejection.schema.json")
    assert len(document["rows"]) == 6
    by_key = {(r["encoding"], r["prepared"]): r for r in document["rows"]}
    from spamsim.sequence import Prepare
    for (enc, prepared), row in by_key.items():
        seq = sp.build_sequence(enc, Prepare.ZERO if prepared == "zero" else Prepare.ONE)
        assert row["first_order"] == pytest.approx(sp.predict_rejection(seq, model))
        assert row["exact"] == pytest.approx(sp.predict_rejection_exact(seq, model))
        assert row["contributions"]


def test_predict_rejection_single_encoding(tmp_path):
    out = tmp_path / "one"
    code = cli.main(["predict-rejection", "--encoding", "G", "--out", str(out)])
    assert code == 0
    document = json.loads((out / "rejection.json").read_text())
    assert [r["prepared"] for r in document["rows"]] == ["zero", "one"]
    by_state = {r["prepared"]: r["first_order"] for r in document["rows"]}
    assert by_state["zero"] == pytest.approx(0.0976, abs=1e-12)
    assert by_state["one"] == pytest.approx(0.0525, abs=1e-12)


def test_bias_scan_command(tmp_path):
    out = tmp_path / "bias"
    code = cli.main([
        "bias-scan", "--family", "metastable-zero", "--t-grid", "0.8,1.0",
        "--shots", "4000", "--seed", "6", "--out", str(out),
    ])
    assert code == 0
    lines = (out / "bias_metastable-zero.csv").read_text().splitlines()
    assert lines[0] == "t_ratio,duration,gamma,predicted_bias,measured_bias,std_error,accepted,shots"
    assert len(lines) == 3
    last = lines[2].split(",")
    assert float(last[0]) == 1.0
    # Calibrated duration: no bias within a generous statistical margin.
    assert abs(float(last[4])) < 6.0 * float(last[5])


def test_bias_scan_unknown_family(tmp_path):
    # argparse enforces the family choices itself.
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["bias-scan", "--family", "bogus", "--out", str(tmp_path / "x")])
    assert excinfo.value.code == 2


def test_lifetime_fit_command(tmp_path):
    rng = np.random.default_rng(12)
    samples = sp.sample_decay_events([5.0, 10.0, 20.0, 30.0], 2000, 27.2, rng)
    csv = tmp_path / "decay.csv"
    csv.write_text("delay_s,decayed,trials\n" +
                   "\n".join(f"{d},{k},{n}" for d, k, n in samples) + "\n")
    out = tmp_path / "fit"
    code = cli.main(["lifetime-fit", str(csv), "--out", str(out)])
    assert code == 0
    document = validate(out / "lifetime.json", "lifetime.schema.json")
    assert abs(document["lifetime"] - 27.2) < 5.0 * document["std_error"]


def test_lifetime_fit_rejects_unusable_input(tmp_path):
    csv = tmp_path / "flat.csv"
    csv.write_text("delay_s,decayed,trials\n5.0,0,100\n10.0,0,100\n")
    assert cli.main(["lifetime-fit", str(csv), "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["lifetime-fit", str(tmp_path / "missing.csv"),
                     "--out", str(tmp_path / "y")]) == 3


def test_version_and_unknown_command():
    with pytest.raises(SystemExit):
        cli.main(["--version"])
    with pytest.raises(SystemExit):
        cli.main(["definitely-not-a-command"])
