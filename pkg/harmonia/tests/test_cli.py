"""End-to-end runs of the command line on a small sampled corpus."""

import json

import pytest
from click.testing import CliRunner

from harmonia.cli import cli


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()

    def invoke(*args):
        result = runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)
        assert result.exit_code == 0, result.output
        return result

    invoke("sample", root / "corpus", "--n-sequences", 6, "--min-length", 4, "--max-length", 6, "--seed", 3)
    invoke("ingest", root / "corpus" / "events.jsonl", root / "ingested.jsonl", "--no-normalize")
    invoke("split", root / "ingested.jsonl", root / "split", "--folds", 3, "--seed", 1)
    invoke("train", root / "split" / "train.jsonl", root / "split" / "dev.jsonl", root / "run",
           "--phase", 1, "--epochs-phase1", 1, "--seed", 5, "--threads", 1)
    invoke("analyze", root / "run" / "phase1.ckpt", root / "split" / "test.jsonl", root / "analysis",
           "--tsv", "--threads", 1)
    return root, runner


def test_sample_writes_events_and_labels(workspace):
    root, _ = workspace
    events = (root / "corpus" / "events.jsonl").read_text().splitlines()
    labels = (root / "corpus" / "gold.jsonl").read_text().splitlines()
    assert len(events) == len(labels)
    assert 6 * 4 <= len(events) <= 6 * 6
    assert json.loads(labels[0])["piece"] == "synthetic-0000"


def test_split_partitions_pieces(workspace):
    root, _ = workspace
    pieces = []
    for name in ("train", "dev", "test"):
        lines = (root / "split" / f"{name}.jsonl").read_text().splitlines()
        pieces.append({json.loads(line)["piece"] for line in lines})
    assert sum(len(p) for p in pieces) == 6
    assert all(pieces)


def test_train_outputs(workspace):
    root, _ = workspace
    assert (root / "run" / "phase1.ckpt").is_file()
    log = [json.loads(line) for line in (root / "run" / "phase1.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1]
    effective = json.loads((root / "run" / "effective_config.json").read_text())
    assert effective["seeds"] == [5] and effective["phase"] == 1


def test_analysis_outputs(workspace):
    root, _ = workspace
    records = [json.loads(line) for line in (root / "analysis" / "analysis.jsonl").read_text().splitlines()]
    test_frames = (root / "split" / "test.jsonl").read_text().splitlines()
    assert len(records) == len(test_frames)
    assert {r["key_name"] for r in records} <= {"C", "Cm", "C#", "C#m", "D", "Dm", "D#", "D#m", "E", "Em", "F",
                                               "Fm", "F#", "F#m", "G", "Gm", "G#", "G#m", "A", "Am", "A#",
                                               "A#m", "B", "Bm"}
    tsv = (root / "analysis" / "analysis.tsv").read_text().splitlines()
    assert tsv[0] == "piece\tsegment\tframe\tkey\tchord\trn"
    assert len(tsv) == len(records) + 1


def test_eval_against_sampled_labels(workspace):
    root, runner = workspace
    result = runner.invoke(cli, ["eval", str(root / "analysis" / "analysis.jsonl"),
                                 str(root / "corpus" / "gold.jsonl"), "--kind", "chord",
                                 "--output-dir", str(root / "eval")])
    assert result.exit_code == 0, result.output
    report = json.loads((root / "eval" / "eval.json").read_text())
    assert report["kind"] == "chord"
    assert 0.0 <= report["full_chord_acc"] <= report["root_chord_acc"] <= 1.0
    assert "TOTAL" in result.output


def test_tonic_command(workspace):
    root, runner = workspace
    result = runner.invoke(cli, ["tonic", str(root / "run" / "phase1.ckpt"), str(root / "tonic"), "--csv"])
    assert result.exit_code == 0, result.output
    reports = json.loads((root / "tonic" / "tonality.json").read_text())
    assert [r["mode"] for r in reports] == [0, 1]
    assert all(len(r["stationary"]) == 13 for r in reports)
    assert (root / "tonic" / "tonality.csv").is_file()


def test_phase_two_needs_a_checkpoint(workspace):
    root, runner = workspace
    result = runner.invoke(cli, ["train", str(root / "split" / "train.jsonl"), str(root / "split" / "dev.jsonl"),
                                 str(root / "run2"), "--phase", "2", "--epochs-phase2", "1"])
    assert result.exit_code == 2
    assert "--init-checkpoint" in result.output


def test_library_errors_exit_cleanly(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"piece": "p", "frame": 0, "pcs": [13]}\n')
    result = CliRunner().invoke(cli, ["ingest", str(bad), str(tmp_path / "out.jsonl")])
    assert result.exit_code == 1
    assert "PitchRangeError" in result.output
    assert f"{bad}:1:" in result.output


def test_sample_rejects_inverted_lengths(tmp_path):
    result = CliRunner().invoke(cli, ["sample", str(tmp_path), "--min-length", "9", "--max-length", "3"])
    assert result.exit_code == 2
