import csv
import subprocess
import sys

import pytest

from ssda import cli
from ssda.synthdata import read_corpus, read_trials

TINY = """
[experiment]
seed = {seed}
data_dir = data
out_dir = run

[source]
n_speakers = 12
utts_per_speaker = 3
segs_per_utt = 3
feature_dim = 6
speaker_rank = 3
n_eval_speakers = 5

[target]
n_speakers = 6
utts_per_speaker = 3
segs_per_utt = 2
feature_dim = 6
speaker_rank = 3
n_eval_speakers = 5

[trials]
n_target = 10
n_nontarget = 12

[train]
regime = {regime}
steps = {steps}
learning_rate = 0.05
n_utts = 4
m_segs = 2
hidden_dims = 8
embed_dim = 4
{extra}
[matrix]
regimes = ssda ssda_joint
objectives = contrastive triplet proto ge2e
seeds = 0
"""


def write_config(tmp_path, name="c.ini", seed=0, regime="source_supervised", steps=5, extra=""):
    path = tmp_path / name
    path.write_text(TINY.format(seed=seed, regime=regime, steps=steps, extra=extra), encoding="utf-8")
    return path


@pytest.fixture
def generated(tmp_path):
    cfg = write_config(tmp_path)
    assert cli.main(["gen", "--config", str(cfg)]) == 0
    return tmp_path


def test_gen_writes_five_files_with_expected_line_counts(generated):
    data = generated / "data"
    assert sorted(p.name for p in data.iterdir()) == sorted(cli.DATA_FILES.values())
    lines = {p.name: len(p.read_text().splitlines()) for p in data.iterdir()}
    assert lines["source.tsv"] == (12 + 5) * 3 * 3
    assert lines["target.tsv"] == (6 + 5) * 3 * 2
    assert lines["source_trials.txt"] == lines["target_trials.txt"] == 22


def test_gen_is_byte_identical_on_rerun(tmp_path):
    cfg = write_config(tmp_path)
    cli.main(["gen", "--config", str(cfg), "--out", str(tmp_path / "a")])
    cli.main(["gen", "--config", str(cfg), "--out", str(tmp_path / "b")])
    for name in cli.DATA_FILES.values():
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gen_seed_flag_changes_output(tmp_path):
    cfg = write_config(tmp_path)
    cli.main(["gen", "--config", str(cfg), "--out", str(tmp_path / "a")])
    cli.main(["gen", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "3"])
    assert (tmp_path / "a" / "source.tsv").read_bytes() != (tmp_path / "b" / "source.tsv").read_bytes()


def test_generated_trial_labels_pass_exhaustive_audit(generated):
    data = generated / "data"
    for dom in ("source", "target"):
        corpus = read_corpus(data / f"{dom}.tsv")
        trials = read_trials(data / f"{dom}_trials.txt")
        for t in trials:
            assert t.label == int(corpus.label(t.enroll_id) == corpus.label(t.test_id))
            assert "-eval-" in t.enroll_id and "-eval-" in t.test_id


def test_train_steps_zero_matches_eval_of_init_checkpoint(tmp_path, generated, capsys):
    cfg = write_config(tmp_path, "zero.ini", steps=0)
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "z")]) == 0
    out = capsys.readouterr().out.strip()
    target_eer = out.split("target_eer=")[1]
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "z" / "checkpoint.txt"),
                     "--corpus", str(generated / "data" / "target.tsv"),
                     "--trials", str(generated / "data" / "target_trials.txt")]) == 0
    assert capsys.readouterr().out.strip() == f"eer={target_eer}"


def test_train_rerun_gives_identical_report(tmp_path, generated, capsys):
    cfg = write_config(tmp_path)
    for out in ("r1", "r2"):
        assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / out)]) == 0
    for name in ("report.txt", "checkpoint.txt", "loss.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    line = capsys.readouterr().out.splitlines()[0]
    assert line.startswith("source_eer=") and " target_eer=" in line


def test_train_from_checkpoint(tmp_path, generated, capsys):
    cli.main(["train", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "base")])
    cfg = write_config(tmp_path, "ssda.ini", regime="ssda_joint", extra="init_checkpoint = base/checkpoint.txt\n")
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "adapted")]) == 0
    assert "target_label_reads=0" in (tmp_path / "adapted" / "report.txt").read_text()


def test_train_without_required_checkpoint_fails(tmp_path, generated, capsys):
    cfg = write_config(tmp_path, "bad.ini", regime="ssda")
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "x")]) != 0
    assert "checkpoint" in capsys.readouterr().err


def test_train_without_data_fails_naming_path(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert cli.main(["train", "--config", str(cfg)]) != 0
    assert str(tmp_path / "data") in capsys.readouterr().err


def test_eval_score_fixture(tmp_path, capsys):
    scores = tmp_path / "scores.txt"
    rows = [(1, 0.9), (1, 0.4), (1, 0.7), (0, 0.5), (0, 0.8), (0, 0.1)]
    scores.write_text("".join(f"{lab} e{i} t{i} {s}\n" for i, (lab, s) in enumerate(rows)))
    assert cli.main(["eval", "--scores", str(scores)]) == 0
    assert capsys.readouterr().out.strip() == "eer=0.333333"


def test_eval_missing_file_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    assert cli.main(["eval", "--scores", str(missing)]) != 0
    assert str(missing) in capsys.readouterr().err


def test_eval_unparseable_scores_fail(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("1 a b notanumber\n")
    assert cli.main(["eval", "--scores", str(bad)]) != 0


@pytest.mark.parametrize("text, needle", [
    ("[experiment]\nseed = 0\n[bogus]\nx = 1\n", "bogus"),
    ("[train]\nstepz = 3\n", "stepz"),
    ("[train]\nsteps = many\n", "steps"),
    ("[train]\nregime = nonsense\n", "nonsense"),
    ("[source]\nseg_noise = 5.0\n", "seg_noise"),
])
def test_config_schema_rejects_bad_input(tmp_path, capsys, text, needle):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    assert cli.main(["gen", "--config", str(path), "--out", str(tmp_path / "o")]) != 0
    assert needle in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_matrix_grid_has_eight_rows_and_is_deterministic(tmp_path, capsys):
    cfg = write_config(tmp_path, steps=3)
    assert cli.main(["matrix", "--config", str(cfg), "--out", str(tmp_path / "m1")]) == 0
    assert cli.main(["matrix", "--config", str(cfg), "--out", str(tmp_path / "m2")]) == 0
    text = (tmp_path / "m1" / "matrix.csv").read_text()
    assert text == (tmp_path / "m2" / "matrix.csv").read_text()
    rows = list(csv.DictReader(text.splitlines()))
    assert len(rows) == 8
    assert {(r["regime"], r["target_loss"]) for r in rows} == {
        (reg, obj) for reg in ("ssda", "ssda_joint") for obj in ("contrastive", "triplet", "proto", "ge2e")}
    assert all(r["status"] == "ok" for r in rows)


def test_matrix_records_cell_failures_and_continues(tmp_path, capsys):
    # 4 utts x 4 segs exceeds the 2-segment target utterances for proto/ge2e
    cfg = write_config(tmp_path, steps=2).read_text().replace("m_segs = 2", "m_segs = 4")
    path = tmp_path / "m.ini"
    path.write_text(cfg)
    assert cli.main(["matrix", "--config", str(path), "--out", str(tmp_path / "m")]) == 0
    rows = list(csv.DictReader((tmp_path / "m" / "matrix.csv").read_text().splitlines()))
    assert len(rows) == 8
    status = {(r["regime"], r["target_loss"]): r["status"] for r in rows}
    assert status[("ssda", "contrastive")] == "ok"
    assert status[("ssda", "proto")].startswith("error")


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "ssda", "eval", "--scores", str(tmp_path / "x")],
                         capture_output=True, text=True)
    assert res.returncode != 0 and "x" in res.stderr
