"""End-to-end checks of the cxr-triage command line.

Each test drives cli.main() in process with a temp directory and asserts the
documented contract: artifact files, manifest, exit codes 0/2/3/4, and
byte-identical reruns for fixed seeds.
"""

import json
import shutil
import subprocess

import pytest

from cxrtriage import cli
from cxrtriage.net import build_pyramid_graph, desk_profile, load_model

NORMAL_REPORT = ("FINDINGS: The lungs are clear. No pleural effusion or "
                 "pneumothorax. IMPRESSION: No acute cardiopulmonary "
                 "abnormality.")
PNEUMONIA_REPORT = ("FINDINGS: Right lower lobe consolidation consistent "
                    "with pneumonia. IMPRESSION: Right lower lobe pneumonia.")
DEVICE_REPORT = ("FINDINGS: Endotracheal tube terminates in the right "
                 "mainstem bronchus. IMPRESSION: Malpositioned ETT.")


def write_corpus(path, records):
    lines = [json.dumps({"study_id": sid, "text": text})
             for sid, text in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestLabel:
    def test_three_report_corpus(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        write_corpus(corpus, [("s-001", NORMAL_REPORT),
                              ("s-002", PNEUMONIA_REPORT),
                              ("s-003", DEVICE_REPORT)])
        out = tmp_path / "out"
        assert run("label", "--reports", corpus, "--out", out) == 0
        rows = (out / "labels.csv").read_text().splitlines()
        assert rows[0].startswith("study_id,verdict")
        assert len(rows) == 4
        assert rows[1].startswith("s-001,normal")
        assert rows[2].startswith("s-002,abnormal")
        assert (out / "evidence.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "label"
        assert manifest["outputs"]["labels_csv"].endswith("labels.csv")
        assert manifest["started_at"] <= manifest["finished_at"]

    def test_bad_record_skipped_run_continues(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(
            json.dumps({"study_id": "s-001", "text": NORMAL_REPORT})
            + "\nnot json\n"
            + json.dumps({"study_id": 7, "text": "missing string id"})
            + "\n" + json.dumps({"study_id": "s-002", "text": PNEUMONIA_REPORT})
            + "\n", encoding="utf-8")
        out = tmp_path / "out"
        assert run("label", "--reports", corpus, "--out", out) == 0
        rows = (out / "labels.csv").read_text().splitlines()
        assert [r.split(",")[0] for r in rows[1:]] == ["s-001", "s-002"]

    def test_empty_corpus_header_only(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text("", encoding="utf-8")
        out = tmp_path / "out"
        assert run("label", "--reports", corpus, "--out", out) == 0
        text = (out / "labels.csv").read_text()
        assert text == ("study_id,verdict,nondiagnostic,device_misplaced,"
                        "positive_findings\n")

    def test_unreadable_reports_exit_2(self, tmp_path):
        assert run("label", "--reports", tmp_path / "missing.jsonl",
                   "--out", tmp_path / "out") == 2

    def test_missing_ontology_exit_3_no_partial_outputs(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        write_corpus(corpus, [("s-001", NORMAL_REPORT)])
        out = tmp_path / "out"
        assert run("label", "--reports", corpus, "--out", out,
                   "--ontology", tmp_path / "nope.json") == 3
        assert not out.exists()

    def test_malformed_ontology_exit_3(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        write_corpus(corpus, [("s-001", NORMAL_REPORT)])
        bad = tmp_path / "ontology.json"
        bad.write_text('{"concepts": 5}', encoding="utf-8")
        assert run("label", "--reports", corpus, "--out", tmp_path / "out",
                   "--ontology", bad) == 3


def train_args(out, seed=7, epochs=2, per_class=(4, 2)):
    return ("train", "--synthetic", "--train-per-class", per_class[0],
            "--holdout-per-class", per_class[1], "--epochs", epochs,
            "--seed", seed, "--out", out)


class TestTrain:
    def test_synthetic_run_writes_artifacts(self, tmp_path):
        out = tmp_path / "run"
        assert run(*train_args(out)) == 0
        rows = (out / "training_log.csv").read_text().splitlines()
        assert rows[0] == "epoch,mean_loss,holdout_auc"
        assert len(rows) == 3  # one row per epoch
        graph = load_model(out / "model.ckpt")
        assert graph.config.input_size == (64, 64)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["config"]["profile"] == "desk"
        assert manifest["config"]["train"]["epochs"] == 2

    def test_same_seed_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(*train_args(a)) == 0
        assert run(*train_args(b)) == 0
        assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()
        assert (a / "training_log.csv").read_bytes() == \
            (b / "training_log.csv").read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(*train_args(a, seed=7)) == 0
        assert run(*train_args(b, seed=8)) == 0
        assert (a / "model.ckpt").read_bytes() != (b / "model.ckpt").read_bytes()

    def test_epochs_zero_checkpoint_equals_initialization(self, tmp_path):
        out = tmp_path / "run"
        assert run(*train_args(out, seed=3, epochs=0)) == 0
        assert (out / "training_log.csv").read_text() == \
            "epoch,mean_loss,holdout_auc\n"
        trained = load_model(out / "model.ckpt").get_parameters()
        fresh = build_pyramid_graph(desk_profile(seed=3).graph).get_parameters()
        assert trained.keys() == fresh.keys()
        assert all((trained[k] == fresh[k]).all() for k in trained)

    def test_unknown_config_key_exit_3_names_key(self, tmp_path, caplog):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("grps = 4\n", encoding="utf-8")
        assert run("train", "--synthetic", "--config", cfg,
                   "--out", tmp_path / "out") == 3
        assert "grps" in caplog.text

    def test_missing_data_flags_exit_3(self, tmp_path):
        assert run("train", "--out", tmp_path / "out") == 3

    def test_single_class_holdout_exit_4(self, tmp_path):
        synth = tmp_path / "data"
        assert run("synth", "--per-class", 4, "--seed", 1, "--out", synth) == 0
        # Keep only normal studies listed; the holdout then has one class.
        rows = (synth / "labels.csv").read_text().splitlines()
        kept = [rows[0]] + [r for r in rows[1:] if r.endswith(",normal")]
        (synth / "labels.csv").write_text("\n".join(kept) + "\n")
        assert run("train", "--images", synth / "images",
                   "--labels", synth / "labels.csv", "--epochs", 1,
                   "--out", tmp_path / "out") == 4


class TestSynth:
    def test_writes_labeled_pgm_dataset(self, tmp_path):
        out = tmp_path / "data"
        assert run("synth", "--per-class", 2, "--seed", 5, "--out", out) == 0
        images = sorted((out / "images").glob("*.pgm"))
        assert len(images) == 4
        assert (out / "images" / "synth-00000.json").exists()  # sidecar
        rows = (out / "labels.csv").read_text().splitlines()
        assert rows[0] == "study_id,label"
        assert rows[1] == "synth-00000,normal"
        assert rows[2] == "synth-00001,abnormal"

    def test_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("synth", "--per-class", 2, "--seed", 5, "--out", a) == 0
        assert run("synth", "--per-class", 2, "--seed", 5, "--out", b) == 0
        for image in sorted((a / "images").glob("*.pgm")):
            twin = b / "images" / image.name
            assert image.read_bytes() == twin.read_bytes()


def write_scores(path):
    path.write_text("study_id,score,label\n"
                    "n1,0.9,normal\n"
                    "n2,0.8,normal\n"
                    "a1,0.5,abnormal\n"
                    "n3,0.4,normal\n", encoding="utf-8")


class TestEval:
    def test_score_table_artifacts_and_operating_point(self, tmp_path):
        scores = tmp_path / "scores.csv"
        write_scores(scores)
        out = tmp_path / "out"
        assert run("eval", "--scores", scores, "--out", out) == 0
        for name in ("roc.csv", "pr.csv", "roc.svg", "operating_point.json",
                     "manifest.json"):
            assert (out / name).exists()
        point = json.loads((out / "operating_point.json").read_text())
        assert point["abnormal_miss"] == 0
        assert point["threshold"] == 0.5
        assert point["normal_yield"] == pytest.approx(2 / 3)

    def test_single_class_scores_exit_4(self, tmp_path):
        scores = tmp_path / "scores.csv"
        scores.write_text("study_id,score,label\nn1,0.9,normal\n",
                          encoding="utf-8")
        assert run("eval", "--scores", scores, "--out", tmp_path / "out") == 4

    def test_malformed_scores_exit_2(self, tmp_path):
        scores = tmp_path / "scores.csv"
        scores.write_text("study_id,score,label\nn1,not-a-number,normal\n",
                          encoding="utf-8")
        assert run("eval", "--scores", scores, "--out", tmp_path / "out") == 2

    def test_consensus_triple_restricts_to_unanimous(self, tmp_path):
        scores = tmp_path / "scores.csv"
        write_scores(scores)
        consensus = tmp_path / "consensus.csv"
        consensus.write_text("study_id,r1,r2,r3\n"
                             "n1,normal,normal,normal\n"
                             "n2,normal,normal,abnormal\n"
                             "a1,abnormal,abnormal,abnormal\n"
                             "n3,normal,normal,normal\n", encoding="utf-8")
        out = tmp_path / "out"
        assert run("eval", "--scores", scores, "--consensus-csv", consensus,
                   "--consensus", "triple", "--out", out) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["studies"] == 3  # n2 is not unanimous
        assert manifest["config"]["consensus"] == "triple"

    def test_consensus_majority_relabels_all(self, tmp_path):
        scores = tmp_path / "scores.csv"
        write_scores(scores)
        consensus = tmp_path / "consensus.csv"
        consensus.write_text("study_id,r1,r2,r3\n"
                             "n1,normal,normal,normal\n"
                             "n2,normal,normal,abnormal\n"
                             "a1,abnormal,abnormal,abnormal\n"
                             "n3,normal,abnormal,abnormal\n", encoding="utf-8")
        out = tmp_path / "out"
        assert run("eval", "--scores", scores, "--consensus-csv", consensus,
                   "--out", out) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["studies"] == 4
        assert manifest["config"]["consensus"] == "majority"

    def test_consensus_flag_without_table_exit_3(self, tmp_path):
        scores = tmp_path / "scores.csv"
        write_scores(scores)
        assert run("eval", "--scores", scores, "--consensus", "triple",
                   "--out", tmp_path / "out") == 3

    def test_no_source_exit_3(self, tmp_path):
        assert run("eval", "--out", tmp_path / "out") == 3

    def test_model_images_pipeline(self, tmp_path):
        data = tmp_path / "data"
        model = tmp_path / "model"
        out = tmp_path / "out"
        assert run("synth", "--per-class", 4, "--seed", 9, "--out", data) == 0
        assert run(*train_args(model, seed=9, epochs=1)) == 0
        assert run("eval", "--model", model / "model.ckpt",
                   "--images", data / "images",
                   "--labels", data / "labels.csv", "--out", out) == 0
        point = json.loads((out / "operating_point.json").read_text())
        assert point["abnormal_miss"] == 0
        assert 0.0 <= point["normal_yield"] <= 1.0

    def test_model_without_labels_exit_3(self, tmp_path):
        data = tmp_path / "data"
        model = tmp_path / "model"
        assert run("synth", "--per-class", 2, "--seed", 9, "--out", data) == 0
        assert run(*train_args(model, seed=9, epochs=0)) == 0
        assert run("eval", "--model", model / "model.ckpt",
                   "--images", data / "images",
                   "--out", tmp_path / "out") == 3

    def test_corrupt_checkpoint_exit_2(self, tmp_path):
        data = tmp_path / "data"
        assert run("synth", "--per-class", 2, "--seed", 9, "--out", data) == 0
        bad = tmp_path / "model.ckpt"
        bad.write_bytes(b"XXXX not a checkpoint")
        assert run("eval", "--model", bad, "--images", data / "images",
                   "--labels", data / "labels.csv",
                   "--out", tmp_path / "out") == 2


class TestEntryPoint:
    def test_console_script_reports_version(self):
        exe = shutil.which("cxr-triage")
        assert exe is not None
        result = subprocess.run([exe, "--version"], capture_output=True,
                                text=True, check=True)
        assert result.stdout.startswith("cxr-triage ")

    def test_help_documents_global_flags(self):
        exe = shutil.which("cxr-triage")
        result = subprocess.run([exe, "train", "--help"], capture_output=True,
                                text=True, check=True)
        for flag in ("--seed", "--profile", "--config", "--epochs", "--out"):
            assert flag in result.stdout
