import json

import numpy as np
import pytest

from percsep import cli, pipeline
from percsep.audio import AudioBuffer, read_wav, write_wav
from percsep.config import RunConfig
from percsep.segmentation import read_rttm

SMALL = {
    "plan": [["VOICE_A_SOLO", 8.0], ["VOICE_B_SOLO", 6.0], ["OVERLAP", 4.0],
             ["VOICE_A_SOLO", 6.0], ["VOICE_B_SOLO", 5.0], ["OVERLAP", 3.0]],
    "hidden": 16, "n_layers": 1, "epochs": 2,
}


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


@pytest.fixture(scope="module")
def full_run(tmp_path_factory, small_config):
    out = tmp_path_factory.mktemp("run")
    code = cli.main(["run-all", "--out", str(out), "--config", small_config, "--emit-csv", str(out / "s.csv")])
    return out, code


def click_train(duration, period, sr=44100, seed=0):
    rng = np.random.default_rng(seed)
    x = np.zeros(int(duration * sr))
    t = np.arange(int(0.08 * sr)) / sr
    click = np.sin(2 * np.pi * 180 * t) * np.exp(-t / 0.02)
    for start in np.arange(0.05, duration - 0.1, period):
        i = int(start * sr)
        x[i:i + click.size] += 0.5 * click
    return AudioBuffer(x + 1e-4 * rng.standard_normal(x.size), sr)


def test_synth_writes_its_artifacts(tmp_path, small_config, capsys):
    assert cli.main(["synth", "--out", str(tmp_path), "--config", small_config]) == 0
    for name in pipeline.STAGE_OUTPUTS["synth"]:
        assert (tmp_path / name).is_file()
    assert read_wav(tmp_path / "mixture.wav").duration == pytest.approx(32.0)
    assert read_rttm(tmp_path / "truth.rttm").segments[-1].end == pytest.approx(32.0)
    assert (tmp_path / "onsets.csv").read_text().startswith("voice,time\n")
    assert str(tmp_path / "mixture.wav") in capsys.readouterr().out


def test_synth_is_deterministic(tmp_path, small_config):
    for d in ("a", "b"):
        cli.main(["synth", "--out", str(tmp_path / d), "--config", small_config, "--seed", "4"])
    for name in pipeline.STAGE_OUTPUTS["synth"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_unwritable_output_exits_2(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["synth", "--out", str(blocker / "sub")]) == 2
    assert "error: synth" in capsys.readouterr().err


def test_missing_upstream_artifact_names_the_stage(tmp_path, capsys):
    assert cli.main(["diarize", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "diarize: missing input" in err and "run 'synth' first" in err
    write_wav(tmp_path / "mixture.wav", click_train(2.0, 0.2))
    assert cli.main(["separate", "--out", str(tmp_path)]) == 2
    assert "run 'identify' first" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path, capsys):
    assert cli.main(["bogus"]) == 2
    assert cli.main(["synth"]) == 2
    assert cli.main(["diarize", "--out", str(tmp_path), "--mode", "weird"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"no_such_field": 1}))
    assert cli.main(["synth", "--out", str(tmp_path), "--config", str(bad)]) == 2
    assert "no_such_field" in capsys.readouterr().err


def test_one_second_input_gives_one_cluster(tmp_path):
    write_wav(tmp_path / "mixture.wav", click_train(1.0, 0.15))
    assert cli.main(["diarize", "--out", str(tmp_path)]) == 0
    hyp = read_rttm(tmp_path / "hyp.rttm")
    assert len(hyp.labels) == 1
    assert hyp.segments[0].start == 0.0 and hyp.segments[-1].end == pytest.approx(1.0)


def test_fixed_and_stroke_segmentation_agree_on_a_steady_stroke_train(tmp_path):
    write_wav(tmp_path / "mixture.wav", click_train(12.0, 0.125, seed=3))
    counts = {}
    for mode in ("fixed", "strokes"):
        d = tmp_path / mode
        d.mkdir()
        assert cli.main(["diarize", "--out", str(d), "--mixture", str(tmp_path / "mixture.wav"),
                         "--mode", mode]) == 0
        counts[mode] = len(read_rttm(d / "hyp.rttm").labels)
    assert counts["fixed"] == counts["strokes"]


def test_score_with_perfect_hypothesis(tmp_path, full_run, small_config, capsys):
    out, _ = full_run
    for name in (*pipeline.STAGE_OUTPUTS["synth"], *pipeline.STAGE_OUTPUTS["separate"]):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    truth = (out / "truth.rttm").read_text()
    (tmp_path / "hyp.rttm").write_text(truth)
    (tmp_path / "labeled.rttm").write_text(truth)
    csv_path = tmp_path / "scores.csv"
    assert cli.main(["score", "--out", str(tmp_path), "--config", small_config, "--emit-csv", str(csv_path)]) == 0
    rows = {(t, s, c): float(v) for t, s, c, v in
            (line.split(",") for line in csv_path.read_text().splitlines()[1:])}
    assert rows[("diarization", "hyp", "der_percent")] == 0.0
    assert rows[("identification", "hyp", "purity")] == 1.0
    assert rows[("identification", "hyp", "accuracy_percent")] == 100.0
    assert "Diarization" in capsys.readouterr().out


def test_missed_threshold_exits_1(tmp_path, full_run, small_config, capsys):
    out, _ = full_run
    assert cli.main(["score", "--out", str(out), "--config", small_config, "--min-accuracy", "100.5"]) == 1
    assert "threshold failed" in capsys.readouterr().err
    assert cli.main(["score", "--out", str(out), "--config", small_config, "--max-der", "50"]) == 0


def test_run_all_report(full_run):
    out, code = full_run
    assert code == 0
    header = (out / "s.csv").read_text().splitlines()[0]
    assert header == "table,system,column,value"
    for stage in ("synth", "diarize", "identify", "separate"):
        for name in pipeline.STAGE_OUTPUTS[stage]:
            assert (out / name).is_file()


def test_chained_stages_match_run_all(tmp_path, full_run, small_config):
    out, _ = full_run
    for stage in ("synth", "diarize", "identify", "separate"):
        assert cli.main([stage, "--out", str(tmp_path), "--config", small_config]) == 0
    for stage in ("synth", "diarize", "identify", "separate"):
        for name in pipeline.STAGE_OUTPUTS[stage]:
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes(), name


def test_pretrained_models_and_net_are_reused(tmp_path, full_run, small_config):
    out, _ = full_run
    for name in pipeline.STAGE_OUTPUTS["synth"] + pipeline.STAGE_OUTPUTS["diarize"]:
        (tmp_path / name).write_bytes((out / name).read_bytes())
    assert cli.main(["identify", "--out", str(tmp_path), "--config", small_config,
                     "--models", str(out / "id_models.json")]) == 0
    assert cli.main(["separate", "--out", str(tmp_path), "--config", small_config,
                     "--net", str(out / "mask_net.json")]) == 0
    assert (tmp_path / "proposed_ghatam.wav").read_bytes() == (out / "proposed_ghatam.wav").read_bytes()


def test_config_file_and_flag_overrides(tmp_path, small_config):
    args = cli.build_parser().parse_args(["diarize", "--out", "x", "--config", small_config,
                                          "--beta", "5", "--mode", "fixed", "--solo-only"])
    cfg = cli.load_config(args)
    assert cfg.beta == 5.0 and cfg.mode == "fixed" and cfg.solo_only is True
    assert cfg.hidden == 16 and cfg.plan[0] == ("VOICE_A_SOLO", 8.0)
    path = tmp_path / "c.json"
    cfg.save(path)
    assert RunConfig.load(path) == cfg
    with pytest.raises(ValueError):
        RunConfig(beta=-1.0)
