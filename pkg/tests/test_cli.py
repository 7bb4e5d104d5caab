import hashlib
import json
import subprocess
import sys

import pytest

from zsnmt.cli import run
from zsnmt.runconfig import read_config

TINY_MODEL = ["--d", "16", "--d-ff", "32", "--heads", "2", "--layers", "1"]


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def ok(argv):
    assert run([str(a) for a in argv]) == 0, argv


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    data, vocab = root / "data", root / "vocab.txt"
    ok(["gen-synthetic", "--out", data, "--k", 6, "--sentences", 200, "--n-valid", 10, "--n-test", 10, "--seed", 1])
    data_digest = tree_digest(data)
    ok(["build-vocab", "--data", data, "--out", vocab])
    ok(["train", "--data", data, "--vocab", vocab, "--out", root / "train", "--steps", 6, "--batch-tokens", 200,
        "--checkpoint-every", 2, "--average", 2, "--warmup", 4, "--seed", 3, *TINY_MODEL])
    ok(["finetune-robt", "--checkpoint", root / "train" / "model.bin", "--data", data, "--vocab", vocab,
        "--out", root / "robt", "--steps", 2, "--batch", 4, "--eval-every", 1, "--eval-sentences", 3])
    ok(["evaluate", "--checkpoint", root / "robt" / "model.bin", "--data", data, "--vocab", vocab,
        "--out", root / "eval", "--limit", 4, "--beam", 2, "--label", "robt"])
    assert tree_digest(data) == data_digest
    return root


def test_unknown_subcommand_and_flag_exit_2(capsys):
    assert run(["bogus"]) == 2
    assert run(["param-count", "--nope"]) == 2
    assert run(["train", "--data", "x"]) == 2
    assert "usage error" in capsys.readouterr().err


def test_config_violation_exits_1_naming_the_invariant(tmp_path, capsys):
    assert run(["gen-synthetic", "--out", str(tmp_path / "s"), "--k", "2"]) == 1
    assert "k >= 3" in capsys.readouterr().err
    assert run(["translate", "--checkpoint", str(tmp_path / "missing.bin"), "--vocab", "v", "--to", "xa"]) == 1


def test_console_script_exit_status():
    proc = subprocess.run([sys.executable, "-m", "zsnmt.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2


def test_param_count_prints_lalt_component(capsys):
    assert run(["param-count", "--d", "512", "--languages", "100", "--lalt"]) == 0
    out = capsys.readouterr().out
    assert "26,214,400" in out and "lalt" in out


def test_pipeline_report_has_every_field(pipeline):
    report = json.loads((pipeline / "eval" / "report.json").read_text())
    assert len(report["directions"]) == 30 and len(report["zero_shot"]) == 20
    assert set(report["aggregates"]) == {"bleu_all", "acc_all", "bleu_zero", "acc_zero", "pearson_acc_bleu_zero"}
    for d in report["directions"]:
        assert {"src", "tgt", "bleu", "language_accuracy", "n_sentences"} <= set(d)
        assert 0 <= d["bleu"] <= 100 and 0 <= d["language_accuracy"] <= 1
    assert (pipeline / "robt" / "curve.tsv").read_text().startswith("step\t")
    for sub in ("train", "robt", "eval"):
        assert read_config(pipeline / sub / "manifest.txt")["subcommand"] in ("train", "finetune-robt", "evaluate")


def test_win_ratio_against_reference(pipeline):
    ok(["evaluate", "--checkpoint", pipeline / "train" / "model.bin", "--data", pipeline / "data",
        "--vocab", pipeline / "vocab.txt", "--out", pipeline / "eval_wr", "--limit", 4, "--greedy",
        "--reference", pipeline / "eval" / "report.json"])
    assert "win_ratio=" in (pipeline / "eval_wr" / "report.txt").read_text()


def test_translate_beam_one_equals_greedy(pipeline, tmp_path):
    src = tmp_path / "src.txt"
    src.write_text("\n".join((pipeline / "data" / "en-xa" / "test.en").read_text().splitlines()[:5]) + "\n")
    common = ["translate", "--checkpoint", pipeline / "train" / "model.bin", "--vocab", pipeline / "vocab.txt",
              "--to", "xa", "--input", src]
    ok(common + ["--beam", "1", "--output", tmp_path / "beam1.txt"])
    ok(common + ["--greedy", "--output", tmp_path / "greedy.txt"])
    assert (tmp_path / "beam1.txt").read_bytes() == (tmp_path / "greedy.txt").read_bytes()
    assert len((tmp_path / "beam1.txt").read_text().splitlines()) == 5
    assert (tmp_path / "beam1.txt.manifest.txt").exists()


def test_pivot_translate_flags(pipeline, tmp_path, capsys):
    src = tmp_path / "src.txt"
    src.write_text((pipeline / "data" / "xa-xb" / "test.xa").read_text().splitlines()[0] + "\n")
    common = ["translate", "--checkpoint", str(pipeline / "train" / "model.bin"), "--vocab",
              str(pipeline / "vocab.txt"), "--to", "xb", "--input", str(src), "--pivot", "en"]
    assert run(common) == 2
    assert run(common + ["--from", "xa"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 1


def test_rerun_from_manifest_is_byte_identical(pipeline):
    ok(["train", "--config", pipeline / "train" / "manifest.txt", "--out", pipeline / "train_again"])
    for name in ("model.bin", "ckpt.4.bin", "ckpt.6.bin"):
        assert (pipeline / "train" / name).read_bytes() == (pipeline / "train_again" / name).read_bytes()
    ok(["gen-synthetic", "--config", pipeline / "data" / "manifest.txt", "--out", pipeline / "data_again"])
    original = {p.relative_to(pipeline / "data"): p.read_bytes() for p in (pipeline / "data").rglob("*.*")
                if p.name != "manifest.txt"}
    again = {p.relative_to(pipeline / "data_again"): p.read_bytes() for p in (pipeline / "data_again").rglob("*.*")
             if p.name != "manifest.txt"}
    assert original == again


def test_manifest_of_another_subcommand_is_rejected(pipeline):
    assert run(["evaluate", "--config", str(pipeline / "train" / "manifest.txt")]) == 1


def test_config_file_supplies_options_and_flags_override(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text(f"out = {tmp_path / 'suite'}\nk = 4\nsentences = 30\nn-test = 5\nn-valid = 5\n")
    ok(["gen-synthetic", "--config", cfg, "--k", 3])
    manifest = read_config(tmp_path / "suite" / "manifest.txt")
    assert manifest["config.k"] == 3 and manifest["config.sentences"] == 30
    assert sorted(p.name for p in (tmp_path / "suite").iterdir() if p.is_dir()) == ["en-xa", "en-xb", "xa-xb"]
    (tmp_path / "bad.cfg").write_text("no_such_option = 1\n")
    assert run(["gen-synthetic", "--config", str(tmp_path / "bad.cfg")]) == 1


def test_seed_environment_variable_sets_default(tmp_path, monkeypatch):
    monkeypatch.setenv("ZSNMT_SEED", "11")
    ok(["gen-synthetic", "--out", tmp_path / "s", "--k", 3, "--sentences", 20, "--n-test", 3, "--n-valid", 3])
    assert read_config(tmp_path / "s" / "manifest.txt")["seed"] == 11
