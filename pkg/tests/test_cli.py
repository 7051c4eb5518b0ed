import csv

import pytest

from dcvad.cli import main

from test_evaluation import pairwise_auc


def _report_aucs(path):
    with open(path, newline="") as fh:
        return {r["run"]: float(r["auc"]) for r in csv.DictReader(fh)}


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["taxonomy", "--frobnicate"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1


def test_malformed_config_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[flow]\nepochs = lots\n")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "flow.epochs" in capsys.readouterr().err


def test_taxonomy_query_one_row(capsys):
    assert main(["taxonomy", "--query", "InMod=1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and lines[2].startswith("arXiv 2022 (attribute)")


def test_taxonomy_full_and_export(tmp_path, capsys):
    assert main(["taxonomy", "--out", str(tmp_path)]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 12
    assert len((tmp_path / "taxonomy.csv").read_text().splitlines()) == 11


@pytest.mark.parametrize("q", ["Venue=1", "InMod=x", "InMod"])
def test_taxonomy_bad_query(q, capsys):
    assert main(["taxonomy", "--query", q]) == 1


def test_eval_hand_written(tmp_path, capsys):
    (tmp_path / "s.csv").write_text("video,frame,score\nv,0,0.2\nv,1,0.7\nv,2,0.7\n")
    (tmp_path / "l.csv").write_text("video,frame,label\nv,0,0\nv,1,1\nv,2,0\n")
    assert main(["eval", "--scores", str(tmp_path / "s.csv"), "--labels", str(tmp_path / "l.csv"),
                 "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    expected = pairwise_auc([0.2, 0.7, 0.7], [0, 1, 0])
    assert expected == 0.75
    assert "75.00" in out
    assert _report_aucs(tmp_path / "o" / "report.csv") == {"s": 0.75}
    assert (tmp_path / "o" / "roc.csv").read_text().startswith("run,fpr,tpr\n")


def test_eval_rejects_na_and_missing_labels(tmp_path, capsys):
    (tmp_path / "s.csv").write_text("video,frame,score\nv,0,NA\nv,1,0.7\n")
    (tmp_path / "l.csv").write_text("video,frame,label\nv,0,0\nv,1,1\n")
    assert main(["eval", "--scores", str(tmp_path / "s.csv"), "--labels", str(tmp_path / "l.csv")]) == 2
    (tmp_path / "s.csv").write_text("video,frame,score\nw,0,0.1\nw,1,0.7\n")
    assert main(["eval", "--scores", str(tmp_path / "s.csv"), "--labels", str(tmp_path / "l.csv")]) == 2


def test_eval_single_class_is_data_error(tmp_path, capsys):
    (tmp_path / "s.csv").write_text("video,frame,score\nv,0,0.1\nv,1,0.7\n")
    (tmp_path / "l.csv").write_text("video,frame,label\nv,0,0\nv,1,0\n")
    assert main(["eval", "--scores", str(tmp_path / "s.csv"), "--labels", str(tmp_path / "l.csv")]) == 2
    assert "both positive and negative" in capsys.readouterr().err


def test_run_missing_config_leaves_nothing(tmp_path, capsys):
    out = tmp_path / "never"
    assert main(["run", "--config", str(tmp_path / "absent.ini"), "--out", str(out)]) != 0
    assert not out.exists()
    assert main(["run", "--out", str(out)]) != 0
    assert not out.exists()


def test_run_without_anomalies_reports_undefined_auc(tmp_path, tiny_ini, capsys):
    cfg = tmp_path / "flat.ini"
    cfg.write_text(tiny_ini.read_text().replace("[synth]\n", "[synth]\nanomaly_fraction = 0\n"))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "[fuse]" in err and "Traceback" not in err
    # earlier stages were flushed
    assert (tmp_path / "o" / "scores_skeleton.csv").exists()


def test_run_then_subcommands_reproduce_it(tmp_path, tiny_ini, capsys):
    run = tmp_path / "run"
    assert main(["run", "--config", str(tiny_ini), "--out", str(run)]) == 0
    assert (run / "config.ini").read_text() == tiny_ini.read_text()
    fused_auc = _report_aucs(run / "report.csv")["fused-W_HUMAN"]

    # the run's intermediate files feed the standalone commands
    step = tmp_path / "step"
    common = ["--config", str(tiny_ini)]
    assert main(["synth", *common, "--out", str(step / "data")]) == 0
    assert main(["train-flow", *common, "--data", str(step / "data"), "--out", str(step)]) == 0
    assert main(["train-jigsaw", *common, "--data", str(step / "data"), "--out", str(step)]) == 0
    for name in ("flow.ckpt", "jigsaw.ckpt", "flow_curve.csv", "jigsaw_curve.csv"):
        assert (step / name).read_bytes() == (run / name).read_bytes(), name
    assert main(["score", *common, "--data", str(run / "data"), "--flow", str(run / "flow.ckpt"),
                 "--jigsaw", str(run / "jigsaw.ckpt"), "--out", str(step)]) == 0
    for name in ("scores_skeleton.csv", "scores_jigsaw.csv", "scores_jigsaw_non_human.csv"):
        assert (step / name).read_bytes() == (run / name).read_bytes(), name
    assert main(["fuse", *common, "--skeleton", str(step / "scores_skeleton.csv"),
                 "--jigsaw", str(step / "scores_jigsaw.csv"), "--out", str(step)]) == 0
    assert (step / "scores_fused.csv").read_bytes() == (run / "scores_fused_W_HUMAN.csv").read_bytes()
    assert main(["eval", "--scores", str(step / "scores_fused.csv"), "--labels", str(run / "data" / "test"),
                 "--out", str(step / "ev")]) == 0
    assert _report_aucs(step / "ev" / "report.csv")["scores_fused"] == fused_auc


def test_seed_flag_overrides_config(tmp_path, tiny_ini, capsys):
    assert main(["synth", "--config", str(tiny_ini), "--seed", "11", "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--config", str(tiny_ini), "--out", str(tmp_path / "b")]) == 0
    a = sorted((tmp_path / "a" / "test").iterdir())[0] / "tracks.jsonl"
    b = sorted((tmp_path / "b" / "test").iterdir())[0] / "tracks.jsonl"
    assert a.read_bytes() != b.read_bytes()


def test_score_rejects_wrong_checkpoint_kind(tmp_path, tiny_ini, capsys):
    run = tmp_path / "run"
    assert main(["run", "--config", str(tiny_ini), "--out", str(run)]) == 0
    assert main(["score", "--config", str(tiny_ini), "--data", str(run / "data"), "--flow", str(run / "jigsaw.ckpt"),
                 "--jigsaw", str(run / "jigsaw.ckpt"), "--out", str(tmp_path / "s")]) == 2
