import csv
import json

import numpy as np
import pytest

from beamix import beamspace, sim
from beamix.array import default_array
from beamix.cli import main, resolve_config
from beamix.dictionary import build_fixed_dictionary, save_dictionary
from beamix.errors import InvalidParameterError
from beamix.nn.checkpoint import load_checkpoint
from beamix.stft import StftConfig, analyze, synthesize_array


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "d"
    assert main(["simulate", "--out", str(out), "--n", "3", "--bucket", "45-90", "--seed", "7",
                 "--snr", "0", "--duration", "0.5"]) == 0
    return out


def test_simulate_count_and_determinism(tmp_path):
    args = ["simulate", "--bucket", "90-180", "--n", "20", "--seed", "7", "--duration", "0.25"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(manifest["scenes"]) == 20
    assert all("target_doa" in e and "noise_doas" in e for e in manifest["scenes"])
    for f in (tmp_path / "a").glob("*.wav"):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_simulate_set_b_noise_counts(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "s"), "--bucket", "set-B", "--noises", "1-3",
                 "--n", "30", "--duration", "0.25"]) == 0
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    counts = {len(e["noise_doas"]) for e in manifest["scenes"]}
    assert counts <= {1, 2, 3} and len(counts) > 1


def test_simulate_invalid_bucket_cleans_up(tmp_path, capsys):
    out = tmp_path / "bad"
    assert main(["simulate", "--out", str(out), "--bucket", "120-60"]) != 0
    assert not out.exists()
    assert "error" in capsys.readouterr().err


def test_config_precedence_and_unknown_keys(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 5, "seed": 3, "out": "x"}))
    merged = resolve_config("simulate", {"n": 9, "bucket": None}, cfg)
    assert merged["n"] == 9 and merged["seed"] == 3 and merged["bucket"] == "45-90"
    cfg.write_text(json.dumps({"n": 5, "colour": "red"}))
    with pytest.raises(InvalidParameterError, match="colour"):
        resolve_config("simulate", {}, cfg)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0


def test_beampattern_ds_unity_and_row_count(tmp_path):
    out = tmp_path / "bp.csv"
    assert main(["beampattern", "--regime", "ds", "--beams", "0", "--freq", "2000", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 360
    assert float(rows[0]["doa_deg"]) == 0.0 and abs(float(rows[0]["gain_db"])) < 1e-6
    assert main(["beampattern", "--regime", "ds", "--beams", "0,9", "--out", str(out)]) == 0
    assert len(read_csv(out)) == 2 * 161 * 360


def test_beampattern_from_dictionary_file(tmp_path):
    path = tmp_path / "sd.bmxt"
    save_dictionary(path, build_fixed_dictionary(default_array(), StftConfig(), "sd", 36))
    out = tmp_path / "bp.csv"
    assert main(["beampattern", "--dictionary", str(path), "--beams", "9", "--freq", "1000",
                 "--grid-step", "5", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 72
    at_90 = [r for r in rows if float(r["doa_deg"]) == 90.0][0]
    assert abs(float(at_90["gain_db"])) < 1e-6


def test_beampattern_corrupt_dictionary(tmp_path):
    bad = tmp_path / "bad.bmxt"
    bad.write_bytes(b"not a tensor file")
    out = tmp_path / "bp.csv"
    assert main(["beampattern", "--dictionary", str(bad), "--out", str(out)]) != 0
    assert not out.exists()
    assert main(["beampattern", "--dictionary", str(tmp_path / "missing"), "--out", str(out)]) != 0


def test_oracle_eval_and_weight_export(tmp_path, dataset):
    out = tmp_path / "o.csv"
    assert main(["oracle-eval", "--data", str(dataset), "--out", str(out),
                 "--weights-out", str(tmp_path / "w")]) == 0
    rows = read_csv(out)
    assert [r["scene"] for r in rows] == ["scene_00000", "scene_00001", "scene_00002", "mean"]
    mean = rows[-1]
    assert float(mean["mwf_si_snr"]) >= float(mean["mvdr_si_snr"]) > float(mean["noisy_si_snr"]) + 10
    manifest = json.loads((dataset / "manifest.json").read_text())
    entry = manifest["scenes"][0]
    bp = tmp_path / "bp.csv"
    assert main(["beampattern", "--weights", str(tmp_path / "w" / "scene_00000_mvdr.bmxt"),
                 "--band", "200,4000", "--out", str(bp)]) == 0
    rows = read_csv(bp)
    assert rows[0]["freq_hz"] == "200-4000"
    gains = {float(r["doa_deg"]): float(r["gain_db"]) for r in rows}
    assert abs(gains[float(round(entry["target_doa"]) % 360)]) < 0.1
    null = min(gains, key=gains.get)
    assert float(sim.circular_difference(null, entry["noise_doas"][0])) <= 5.0


def test_oracle_eval_near_clean(tmp_path):
    d = tmp_path / "clean"
    assert main(["simulate", "--out", str(d), "--n", "3", "--snr", "40", "--duration", "0.5", "--seed", "2"]) == 0
    out = tmp_path / "o.csv"
    assert main(["oracle-eval", "--data", str(d), "--out", str(out)]) == 0
    for r in read_csv(out):
        noisy = float(r["noisy_si_snr"])
        assert float(r["mvdr_si_snr"]) >= noisy - 0.5
        assert float(r["mwf_si_snr"]) >= noisy - 0.5


def test_oracle_eval_missing_manifest(tmp_path):
    assert main(["oracle-eval", "--data", str(tmp_path), "--out", str(tmp_path / "o.csv")]) != 0
    assert not (tmp_path / "o.csv").exists()


TRAIN_ARGS = ["--n-train", "2", "--n-val", "1", "--duration", "0.3", "--epochs", "1", "--P", "4",
              "--hidden-width", "4", "--hidden-layers", "1", "--frames-context", "1", "--regime", "ds",
              "--batch-size", "2", "--seed", "5"]


def test_train_records_q(tmp_path):
    for q in ("0", "3"):
        out = tmp_path / f"q{q}"
        assert main(["train", "--out", str(out), "--Q", q] + TRAIN_ARGS) == 0
        assert len(read_csv(out / "log.csv")) == 1
        _, meta, _ = load_checkpoint(out / "model.bmxt")
        assert meta["taylor"]["Q"] == int(q)
        assert json.loads((out / "config.json").read_text())["Q"] == int(q)


def test_evaluate_untrained_is_zeroth_order_average(tmp_path, dataset):
    out = tmp_path / "e.csv"
    assert main(["evaluate", "--data", str(dataset), "--out", str(out), "--regime", "ds"]) == 0
    rows = read_csv(out)
    scenes, _ = sim.load_dataset(dataset)
    cfg = StftConfig()
    d = build_fixed_dictionary(default_array(), cfg, "ds", 36)
    w = d.beams.mean(axis=2)  # G = 1/P on every beam
    for row, scene in zip(rows, scenes):
        X = analyze(scene.mixture, cfg).data
        est = synthesize_array(beamspace.apply_weights(w, X), cfg)
        sl = cfg.interior(X.shape[0])
        expected = sim.si_snr(scene.clean_ref[sl], est[sl])
        assert float(row["enhanced_si_snr"]) == pytest.approx(expected, abs=1e-3)
    assert rows[-1]["scene"] == "mean" and any(r["scene"].startswith("mean[") for r in rows)


def test_evaluate_trained_checkpoint(tmp_path, dataset):
    out = tmp_path / "t"
    assert main(["train", "--out", str(out), "--Q", "1"] + TRAIN_ARGS) == 0
    assert main(["evaluate", "--data", str(dataset), "--model", str(out / "model.bmxt"),
                 "--out", str(tmp_path / "e.csv")]) == 0


def test_gradcheck_command(tmp_path, capsys):
    out = tmp_path / "g.csv"
    assert main(["gradcheck", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows and all(r["passed"] == "1" for r in rows)
    assert "FAIL" not in capsys.readouterr().out


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for cmd in ("simulate", "beampattern", "oracle-eval", "train", "evaluate", "gradcheck"):
        assert cmd in text
