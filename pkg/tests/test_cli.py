from __future__ import annotations

import json

import pytest

from conftest import FROZEN_COUNTS, columns_from_counts, make_corpus
from screenkit.cli import main
from screenkit.corpus import write_corpus
from screenkit.inference import InferenceConfig, LedgerWriter, PredictionRecord, compute_run_id
from screenkit.corpus import ScreeningLabel


def write_fd_artifacts(root):
    """Corpus + single-pass ledger realizing the full-dataset fixture counts."""
    human, predicted = columns_from_counts(*FROZEN_COUNTS["tuned_full"])
    # Build records directly so labels align with the fixture columns.
    from screenkit.corpus import Corpus, Provenance, StudyRecord

    records = tuple(
        StudyRecord(
            id=f"e{i:05d}",
            title=f"Evaluation item {i}",
            abstract=f"Abstract {i}",
            human_label=ScreeningLabel(label),
        )
        for i, label in enumerate(human)
    )
    corpus = Corpus(records=records, provenance=Provenance("synthetic", "fixed"))
    corpus_path = root / "corpus.csv"
    write_corpus(corpus, corpus_path)

    config = InferenceConfig(temperatures=(0.1,))
    ledger_path = root / "ledger.jsonl"
    writer = LedgerWriter(ledger_path)
    run_id = compute_run_id([r.id for r in records], config, "fixture")
    writer.write_header(run_id, "fixture", config.snapshot())
    for record, decision in zip(records, predicted):
        writer.write_record(
            PredictionRecord(
                study_id=record.id,
                temperature=0.1,
                raw_text=str(decision),
                decision=ScreeningLabel(decision),
                parse_route="digit",
                latency=0.0,
                attempt_count=1,
            )
        )
    writer.write_complete(run_id, len(records))
    writer.close()
    return corpus_path, ledger_path


@pytest.fixture(scope="module")
def fd_artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("fd")
    return write_fd_artifacts(root)


class TestSplitCommand:
    def test_reference_counts_in_manifest(self, tmp_path, corpus371):
        corpus_path = tmp_path / "corpus.csv"
        write_corpus(corpus371, corpus_path)
        manifest_path = tmp_path / "manifest.json"
        code = main(
            [
                "split",
                "--corpus", str(corpus_path),
                "--train-size", "315",
                "--seed", "13",
                "--mode", "enriched",
                "--enrichment-target", str(121 / 315),
                "--out", str(manifest_path),
            ]
        )
        assert code == 0
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        assert (manifest["train"]["n_exclude"], manifest["train"]["n_include"]) == (194, 121)
        assert (manifest["test"]["n_exclude"], manifest["test"]["n_include"]) == (39, 17)


class TestInferCommand:
    def test_replay_without_recorded_file_fails(self, tmp_path, capsys):
        sft = tmp_path / "items.jsonl"
        from screenkit.prompts import ChatMarkers, render_chat

        chat, boundary = render_chat("prompt", "0", ChatMarkers())
        sft.write_text(
            json.dumps({"id": "a", "chat_text": chat, "mask_boundary": boundary, "label": 0})
            + "\n",
            encoding="utf-8",
        )
        code = main(
            [
                "infer",
                "--sft", str(sft),
                "--replay", str(tmp_path / "missing.jsonl"),
                "--out", str(tmp_path / "ledger.jsonl"),
            ]
        )
        assert code != 0
        assert "replay miss" in capsys.readouterr().err

    def test_record_and_replay_are_mutually_exclusive(self, tmp_path, capsys):
        code = main(
            [
                "infer",
                "--sft", str(tmp_path / "x.jsonl"),
                "--record", "a",
                "--replay", "b",
                "--out", str(tmp_path / "ledger.jsonl"),
            ]
        )
        assert code != 0
        assert "mutually exclusive" in capsys.readouterr().err


class TestEvaluateCommand:
    def test_full_dataset_report_row(self, fd_artifacts, tmp_path, capsys):
        corpus_path, ledger_path = fd_artifacts
        out_dir = tmp_path / "eval"
        code = main(
            [
                "evaluate",
                "--ledger", str(ledger_path),
                "--corpus", str(corpus_path),
                "--out-dir", str(out_dir),
                "--no-figures",
            ]
        )
        assert code == 0
        text = (out_dir / "report.txt").read_text(encoding="utf-8")
        overall_row = next(line for line in text.splitlines() if line.startswith("T=0.1"))
        for value in ("86.40", "88.78", "48.95", "50.40", "92.31", "88.47"):
            assert value in overall_row
        agreement_section = text[text.index("Agreement with human labels") :]
        for value in ("0.045", "0.728", "0.843"):
            assert value in agreement_section

    def test_disagreement_export_count(self, fd_artifacts, tmp_path):
        corpus_path, ledger_path = fd_artifacts
        out_dir = tmp_path / "eval"
        main(
            [
                "evaluate",
                "--ledger", str(ledger_path),
                "--corpus", str(corpus_path),
                "--out-dir", str(out_dir),
                "--no-figures",
            ]
        )
        lines = (out_dir / "disagreements.csv").read_text(encoding="utf-8").splitlines()
        assert len(lines) - 1 == 1123 + 3  # false positives + false negatives

    def test_empty_intersection_is_an_error(self, fd_artifacts, tmp_path, capsys):
        _, ledger_path = fd_artifacts
        other = make_corpus(n_exclude=3, n_include=2, prefix="zz")
        corpus_path = tmp_path / "other.csv"
        write_corpus(other, corpus_path)
        code = main(
            [
                "evaluate",
                "--ledger", str(ledger_path),
                "--corpus", str(corpus_path),
                "--out-dir", str(tmp_path / "out"),
                "--no-figures",
            ]
        )
        assert code != 0
        assert "share no study ids" in capsys.readouterr().err

    def test_report_idempotent_and_no_recompute(self, fd_artifacts, tmp_path):
        corpus_path, ledger_path = fd_artifacts
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            main(
                [
                    "evaluate",
                    "--ledger", str(ledger_path),
                    "--corpus", str(corpus_path),
                    "--out-dir", str(out),
                    "--no-figures",
                ]
            )
        for name in ("report.json", "report.txt", "disagreements.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        # Rendering again from the saved JSON alone reproduces the text.
        rerender = tmp_path / "rerender"
        code = main(
            [
                "report",
                "--report", str(out1 / "report.json"),
                "--out-dir", str(rerender),
                "--no-figures",
            ]
        )
        assert code == 0
        assert (rerender / "report.txt").read_bytes() == (out1 / "report.txt").read_bytes()


class TestAgreeCommand:
    def test_identical_passes_consistency(self, tmp_path):
        column = [1, 0, 1, 1, 0, 0, 1, 0]
        lines = ["id,human,T=0.1,T=0.4,T=0.8"]
        for i, value in enumerate(column):
            lines.append(f"i{i},{1 - value},{value},{value},{value}")
        ratings = tmp_path / "ratings.csv"
        ratings.write_text("\n".join(lines) + "\n", encoding="utf-8")
        out_dir = tmp_path / "agree"
        code = main(
            ["agree", "--ratings", str(ratings), "--out-dir", str(out_dir), "--no-figures"]
        )
        assert code == 0
        payload = json.loads((out_dir / "agreement.json").read_text(encoding="utf-8"))
        assert len(payload["consistency"]) == 3
        assert all(pair["estimate"] == 1.0 for pair in payload["consistency"])

    def test_two_column_file_multi_rater_equals_pairwise(self, tmp_path):
        rows = ["id,human,model"]
        values = [(1, 1), (0, 0), (1, 0), (0, 0), (1, 1), (0, 1), (1, 1), (0, 0)]
        for i, (h, m) in enumerate(values):
            rows.append(f"i{i},{h},{m}")
        ratings = tmp_path / "ratings.csv"
        ratings.write_text("\n".join(rows) + "\n", encoding="utf-8")
        out_dir = tmp_path / "agree"
        main(["agree", "--ratings", str(ratings), "--out-dir", str(out_dir), "--no-figures"])
        payload = json.loads((out_dir / "agreement.json").read_text(encoding="utf-8"))
        pairwise_ac1 = payload["pairwise"][0]["gwet_ac1"]["estimate"]
        multi_ac1 = payload["multi_rater"]["gwet_ac1"]["estimate"]
        assert pairwise_ac1 == multi_ac1
        assert payload["consistency"] == []

    def test_agree_from_ledger_and_corpus(self, fd_artifacts, tmp_path):
        corpus_path, ledger_path = fd_artifacts
        out_dir = tmp_path / "agree"
        code = main(
            [
                "agree",
                "--ledger", str(ledger_path),
                "--corpus", str(corpus_path),
                "--out-dir", str(out_dir),
                "--no-figures",
            ]
        )
        assert code == 0
        payload = json.loads((out_dir / "agreement.json").read_text(encoding="utf-8"))
        block = payload["pairwise"][0]
        assert block["cohen_kappa"]["estimate"] == pytest.approx(0.045, abs=0.001)
        assert block["pabak"]["estimate"] == pytest.approx(0.728, abs=0.001)
        assert block["gwet_ac1"]["estimate"] == pytest.approx(0.843, abs=0.001)

    def test_needs_inputs(self, tmp_path, capsys):
        code = main(["agree", "--out-dir", str(tmp_path)])
        assert code != 0
        assert "ratings" in capsys.readouterr().err


class TestConfigFile:
    def test_values_come_from_config(self, tmp_path, corpus371):
        corpus_path = tmp_path / "corpus.csv"
        write_corpus(corpus371, corpus_path)
        manifest_path = tmp_path / "manifest.json"
        config = tmp_path / "run.ini"
        config.write_text(
            "[paths]\n"
            f"corpus = {corpus_path}\n"
            f"manifest = {manifest_path}\n"
            "[split]\n"
            "train_size = 315\n"
            "seed = 13\n"
            "mode = enriched\n"
            f"enrichment_target = {121 / 315}\n",
            encoding="utf-8",
        )
        assert main(["split", "--config", str(config)]) == 0
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        assert manifest["train"]["n_include"] == 121

    def test_flag_overrides_config(self, tmp_path, corpus371):
        corpus_path = tmp_path / "corpus.csv"
        write_corpus(corpus371, corpus_path)
        manifest_path = tmp_path / "manifest.json"
        config = tmp_path / "run.ini"
        config.write_text(
            f"[paths]\ncorpus = {corpus_path}\nmanifest = {manifest_path}\n"
            "[split]\ntrain_size = 100\nseed = 13\n",
            encoding="utf-8",
        )
        assert main(["split", "--config", str(config), "--train-size", "200"]) == 0
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        assert manifest["train"]["total"] == 200

    def test_unknown_key_rejected(self, tmp_path, capsys):
        config = tmp_path / "run.ini"
        config.write_text("[split]\ntrain_sise = 10\n", encoding="utf-8")
        code = main(["split", "--config", str(config)])
        assert code != 0
        assert "unknown key" in capsys.readouterr().err

    def test_unknown_section_rejected(self, tmp_path, capsys):
        config = tmp_path / "run.ini"
        config.write_text("[splits]\ntrain_size = 10\n", encoding="utf-8")
        code = main(["split", "--config", str(config)])
        assert code != 0
        assert "unknown config section" in capsys.readouterr().err


class TestIngestAndManifestCommands:
    def test_ingest_normalizes(self, tmp_path, capsys):
        raw = tmp_path / "raw.csv"
        raw.write_text(
            "id,title,abstract,label\na,T1,A1,Include\nb,T2,,exclude\n", encoding="utf-8"
        )
        out = tmp_path / "normalized.csv"
        assert main(["ingest", "--corpus", str(raw), "--out", str(out)]) == 0
        assert "2 records" in capsys.readouterr().out
        assert out.read_text(encoding="utf-8").splitlines()[1] == "a,T1,A1,1"

    def test_manifest_command_with_override(self, tmp_path, capsys):
        out = tmp_path / "training.json"
        assert main(["manifest", "--out", str(out), "--set", "max_steps=10"]) == 0
        payload = json.loads(out.read_text(encoding="utf-8"))
        assert payload["max_steps"] == 10
        assert payload["overrides"] == {"max_steps": 10}
        assert payload["effective_batch"] == 8

    def test_manifest_unknown_field(self, tmp_path, capsys):
        code = main(["manifest", "--out", str(tmp_path / "m.json"), "--set", "nope=1"])
        assert code != 0
        assert "unknown training manifest field" in capsys.readouterr().err
