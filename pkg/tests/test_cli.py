import json
import subprocess
import sys

import pytest

from dialog_expertise.cli import main
from dialog_expertise.corpus import load_corpus, serialize_session
from dialog_expertise.features import read_matrix
from dialog_expertise.modelfile import load_echo, load_model
from dialog_expertise.synth import GeneratorConfig, generate_corpus


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def pipeline(capsys, d):
    assert run(capsys, "generate", "--n-per-class", 30, "--seed", 5, "-o", d / "log.txt")[0] == 0
    assert run(capsys, "extract", d / "log.txt", "-o", d / "m.tsv")[0] == 0
    code, out, _ = run(capsys, "train", d / "m.tsv", "--trees", 40, "-o", d / "model.json")
    assert code == 0
    code, report, _ = run(
        capsys, "evaluate", d / "m.tsv", "--trees", 40, "--feature-set", "All", "--format", "json", "-o", "-"
    )
    assert code == 0
    code, labels, _ = run(capsys, "classify", d / "model.json", d / "log.txt")
    assert code == 0
    return {
        "log": (d / "log.txt").read_bytes(),
        "matrix": (d / "m.tsv").read_bytes(),
        "model": (d / "model.json").read_bytes(),
        "train_out": json.loads(out),
        "report": report,
        "labels": labels,
    }


def test_pipeline_byte_identical(capsys, tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = pipeline(capsys, tmp_path / "a")
    b = pipeline(capsys, tmp_path / "b")
    for key in ("log", "matrix", "model", "report", "labels"):
        assert a[key] == b[key], key
    assert a["train_out"]["digest"] == b["train_out"]["digest"]
    assert a["train_out"]["kind"] == "forest"
    assert len(a["labels"].strip().splitlines()) == 60


def test_artifacts_embed_config(capsys, tmp_path):
    pipeline(capsys, tmp_path)
    corpus_text = (tmp_path / "log.txt").read_text()
    assert "# seed=5" in corpus_text
    _, echo = read_matrix(open(tmp_path / "m.tsv"))
    assert echo["command"] == "extract"
    model_echo = load_echo(tmp_path / "model.json")
    assert model_echo["command"] == "train" and model_echo["seed"] == 1


def test_evaluate_nine_rows_in_table_order(capsys, tmp_path):
    run(capsys, "generate", "--n-per-class", 20, "-o", tmp_path / "log.txt")
    run(capsys, "extract", tmp_path / "log.txt", "-o", tmp_path / "m.tsv")
    code, out, _ = run(capsys, "evaluate", tmp_path / "m.tsv", "--trees", 20, "--format", "json")
    assert code == 0
    rows = json.loads(out)["rows"]
    assert [r["feature_set"] for r in rows] == [
        "Interruptions",
        "Delays",
        "Durations",
        "SpeechRate",
        "HelpRequests",
        "FirstTurn",
        "Global",
        "All",
        "Selected",
    ]
    assert all(set(r) == {"feature_set", "learner", "accuracy", "kappa", "chance"} for r in rows)
    code, text, _ = run(capsys, "evaluate", tmp_path / "m.tsv", "--trees", 20)
    assert len(text.strip().splitlines()) == 10  # header + nine rows


def test_cross_corpus_evaluate(capsys, tmp_path):
    run(capsys, "generate", "--n-per-class", 20, "-o", tmp_path / "a.txt")
    run(capsys, "generate", "--n-total", 56, "--style", "LG2014", "--seed", 2, "-o", tmp_path / "b.txt")
    run(capsys, "extract", tmp_path / "a.txt", "-o", tmp_path / "a.tsv")
    run(capsys, "extract", tmp_path / "b.txt", "--prompt-duration", 13.29, "-o", tmp_path / "b.tsv")
    code, out, _ = run(
        capsys, "evaluate", "--train", tmp_path / "a.tsv", "--test", tmp_path / "b.tsv",
        "--learner", "svm", "--feature-set", "All", "--format", "json",
    )
    assert code == 0
    assert json.loads(out)["rows"][0]["chance"] == pytest.approx(31 / 56)


def test_monitor_five_exchange_session(capsys, tmp_path):
    run(capsys, "generate", "--n-per-class", 20, "-o", tmp_path / "log.txt")
    run(capsys, "extract", tmp_path / "log.txt", "-o", tmp_path / "m.tsv")
    run(capsys, "train", tmp_path / "m.tsv", "--trees", 20, "-o", tmp_path / "model.json")
    session = next(s for s in generate_corpus(GeneratorConfig(n_per_class=50, seed=8)).sessions if len(s.exchanges) == 5)
    (tmp_path / "one.json").write_text(serialize_session(session) + "\n")
    code, out, _ = run(capsys, "monitor", tmp_path / "model.json", tmp_path / "one.json")
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 5
    assert [ln.split("\t")[0] for ln in lines] == ["1", "2", "3", "4", "5"]
    code, out, _ = run(capsys, "monitor", tmp_path / "model.json", tmp_path / "one.json", "--format", "json")
    assert [json.loads(ln)["turn"] for ln in out.strip().splitlines()] == [1, 2, 3, 4, 5]


def test_monitor_picks_from_log(capsys, tmp_path):
    run(capsys, "generate", "--n-per-class", 10, "-o", tmp_path / "log.txt")
    run(capsys, "extract", tmp_path / "log.txt", "-o", tmp_path / "m.tsv")
    run(capsys, "train", tmp_path / "m.tsv", "--learner", "svm", "-o", tmp_path / "model.json")
    sid = load_corpus((tmp_path / "log.txt").read_bytes()).sessions[3].session_id
    code, out, _ = run(capsys, "monitor", tmp_path / "model.json", tmp_path / "log.txt", "--session-id", sid)
    assert code == 0 and out.strip()
    code, _, err = run(capsys, "monitor", tmp_path / "model.json", tmp_path / "log.txt")
    assert code == 1 and "session-id" in json.loads(err.strip().splitlines()[-1])["message"]


def test_select_features_report(capsys, tmp_path):
    run(capsys, "generate", "--n-per-class", 40, "-o", tmp_path / "log.txt")
    run(capsys, "extract", tmp_path / "log.txt", "-o", tmp_path / "m.tsv")
    code, out, _ = run(capsys, "select-features", tmp_path / "m.tsv", "--format", "json")
    assert code == 0
    report = json.loads(out)
    assert report["selected"] and report["merit"] > 0


def test_train_selected_set(capsys, tmp_path):
    run(capsys, "generate", "--n-per-class", 30, "-o", tmp_path / "log.txt")
    run(capsys, "extract", tmp_path / "log.txt", "-o", tmp_path / "m.tsv")
    code, _, _ = run(capsys, "train", tmp_path / "m.tsv", "--feature-set", "Selected", "--trees", 10, "-o", tmp_path / "s.json")
    assert code == 0
    echo = load_echo(tmp_path / "s.json")
    assert load_model(tmp_path / "s.json").features == tuple(echo["selected"])


def test_config_file_overrides_flags(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# generator settings\nn-per-class = 7\nseed = 3\n")
    code, out, _ = run(capsys, "--config", cfg, "generate", "--n-per-class", 50)
    assert code == 0
    corpus = load_corpus(out.encode())
    assert len(corpus) == 14
    assert "# seed=3" in out


def test_config_file_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    code, _, err = run(capsys, "--config", cfg, "generate")
    assert code == 1
    assert "colour" in json.loads(err.strip())["message"]


def test_output_dir_env(capsys, tmp_path, monkeypatch):
    out_dir = tmp_path / "outputs"
    out_dir.mkdir()
    monkeypatch.setenv("DIALOG_EXPERTISE_OUTPUT_DIR", str(out_dir))
    code, _, _ = run(capsys, "generate", "--n-per-class", 3, "-o", "log.txt")
    assert code == 0
    assert (out_dir / "log.txt").exists()


def test_error_line_and_exit_code(capsys, tmp_path):
    code, out, err = run(capsys, "extract", tmp_path / "missing.txt")
    assert code == 1 and out == ""
    line = json.loads(err.strip().splitlines()[-1])
    assert set(line) == {"error", "message", "command"} and line["command"] == "extract"
    (tmp_path / "bad.json").write_text("{}")
    code, _, err = run(capsys, "classify", tmp_path / "bad.json", tmp_path / "missing.txt")
    assert code == 1 and json.loads(err.strip())["error"] == "ModelFileError"


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "dialog_expertise", "generate", "--n-per-class", "2", "-o", "-"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0 and proc.stdout.startswith("#expertise-log v1")
    bad = subprocess.run([sys.executable, "-m", "dialog_expertise", "train", "nope.tsv", "-o", str(tmp_path / "m")],
                         capture_output=True, text=True)
    assert bad.returncode != 0 and json.loads(bad.stderr.strip())["command"] == "train"
