"""Event-file parsing, segmentation, transposition and gold alignment."""

import json

import numpy as np
import pytest

from harmonia.exceptions import AlignmentError, ContractError, EventParseError, PitchRangeError
from harmonia.score_ingest import (
    EventSequence,
    FrameEvent,
    best_normalizing_shift,
    normalize_transposition,
    parse_event_file,
    parse_gold_file,
    split_folds,
    transpose,
    write_event_file,
)
from harmonia.theory import DIATONIC, QUALITY_INDEX


def write_lines(path, rows):
    with open(path, "w") as outfile:
        for row in rows:
            outfile.write((row if isinstance(row, str) else json.dumps(row)) + "\n")
    return path


def sequence(pcs_per_frame, piece="p", key_signature=None):
    frames = tuple(FrameEvent.from_pcs(pcs, onset_index=i) for i, pcs in enumerate(pcs_per_frame))
    return EventSequence(frames, piece, key_signature=key_signature)


def test_fermata_runs_close_a_segment(tmp_path):
    rows = [{"piece": "bwv1", "frame": i, "pcs": [0, 4, 7], "fermata": i in (2, 3)} for i in range(6)]
    rows += [{"piece": "bwv2", "frame": 0, "pcs": [2, 7, 11], "fermata": True}]
    seqs = parse_event_file(write_lines(tmp_path / "events.jsonl", rows))
    assert [(s.piece_id, s.segment_index, len(s)) for s in seqs] == [("bwv1", 0, 4), ("bwv1", 1, 2), ("bwv2", 0, 1)]
    assert [f.onset_index for f in seqs[1].frames] == [4, 5]
    assert seqs[0].sequence_id == "bwv1#0"


def test_missing_frames_become_rests(tmp_path):
    rows = [{"piece": "p", "frame": 0, "pcs": [0]}, {"piece": "p", "frame": 3, "pcs": [7]}]
    (seq,) = parse_event_file(write_lines(tmp_path / "events.jsonl", rows))
    assert len(seq) == 4
    assert seq.frames[1].is_rest and seq.frames[2].is_rest
    np.testing.assert_array_equal(seq.observations.sum(axis=1), [1, 0, 0, 1])


def test_simultaneous_lines_merge_and_lowest_pitch_is_bass(tmp_path):
    rows = [
        {"piece": "p", "frame": 0, "pitches": [64, 55]},
        {"piece": "p", "frame": 0, "pitches": [48]},
        {"piece": "p", "frame": 1, "pitches": [43, 62], "bass_pc": 2},
        {"piece": "p", "frame": 1, "pitches": [35]},
    ]
    (seq,) = parse_event_file(write_lines(tmp_path / "events.jsonl", rows))
    assert np.flatnonzero(seq.observations[0]).tolist() == [0, 4, 7]
    assert seq.bass == [0, 2]
    assert np.flatnonzero(seq.observations[1]).tolist() == [2, 7, 11]


@pytest.mark.parametrize(
    "bad, error",
    [
        ("{not json", EventParseError),
        ({"piece": "p", "frame": 1, "pitches": [130]}, PitchRangeError),
        ({"piece": "p", "frame": 1, "pcs": [12]}, PitchRangeError),
        ({"piece": "p", "frame": 1, "pcs": [0, 4], "bass_pc": 7}, EventParseError),
        ({"piece": "p", "pcs": [0]}, EventParseError),
        ({"frame": 1, "pcs": [0]}, EventParseError),
        ({"piece": "p", "frame": 1, "pcs": [0], "fermata": "yes"}, EventParseError),
    ],
)
def test_parse_errors_name_the_line(tmp_path, bad, error):
    path = write_lines(tmp_path / "events.jsonl", [{"piece": "p", "frame": 0, "pcs": [0]}, bad])
    with pytest.raises(error) as info:
        parse_event_file(path)
    assert info.value.line == 2
    assert f"{path}:2:" in str(info.value)


def test_frame_rejects_silent_bass():
    with pytest.raises(ContractError):
        FrameEvent.from_pcs([0, 4, 7], bass_pc=2)


def test_transpose_moves_pitch_classes_down():
    seq = transpose(sequence([[2, 6, 9]]), 2)
    assert np.flatnonzero(seq.observations[0]).tolist() == [0, 4, 7]
    assert seq.shift_applied == 2
    assert transpose(seq, 11).shift_applied == 1


def test_normalizing_shift_fits_the_white_keys():
    seq = sequence([[1, 3, 5], [6, 8, 10], [0, 5, 8]])
    assert best_normalizing_shift(seq) == 1
    normalized = normalize_transposition(seq)
    sounding = set(np.flatnonzero(normalized.observations.sum(axis=0)).tolist())
    assert sounding <= DIATONIC
    assert normalized.shift_applied == 1


def test_normalizing_ties_go_to_the_smallest_shift():
    assert best_normalizing_shift(sequence([[0, 2, 4, 6, 8, 10]])) == 1


def test_key_signature_decides_the_shift():
    d_major = sequence([[2, 6, 9]], key_signature=2)
    assert best_normalizing_shift(d_major) == 2
    assert normalize_transposition(d_major).key_signature == 0
    e_flat = sequence([[3, 7, 10]], key_signature=-3)
    assert best_normalizing_shift(e_flat) == 3
    assert normalize_transposition(e_flat).key_signature == 0


def test_rewriting_is_stable(tmp_path):
    rows = [
        {"piece": "a", "frame": 0, "pitches": [50, 66, 69], "key_signature": 2},
        {"piece": "a", "frame": 2, "pcs": [7, 11, 2], "fermata": True},
        {"piece": "a", "frame": 3, "pcs": [2, 6, 9], "bass_pc": 6},
        {"piece": "b", "frame": 5, "pcs": [0, 3, 7]},
    ]
    seqs = [normalize_transposition(s) for s in parse_event_file(write_lines(tmp_path / "in.jsonl", rows))]
    first = write_event_file(seqs, tmp_path / "one.jsonl")
    again = parse_event_file(first)
    second = write_event_file(again, tmp_path / "two.jsonl")
    assert first.read_bytes() == second.read_bytes()
    assert again == seqs
    # C minor is fully diatonic after shifts 3, 8 and 10; the smallest wins
    assert [s.shift_applied for s in again] == [2, 2, 3]


def test_rewriting_keeps_per_segment_shifts(tmp_path):
    rows = [
        {"piece": "a", "frame": 0, "pcs": [0, 4, 7]},
        {"piece": "a", "frame": 1, "pcs": [0, 4, 7], "fermata": True},
        {"piece": "a", "frame": 2, "pcs": [1, 5, 8]},
        {"piece": "a", "frame": 3, "pcs": [1, 5, 8]},
    ]
    seqs = [normalize_transposition(s) for s in parse_event_file(write_lines(tmp_path / "in.jsonl", rows))]
    assert [s.shift_applied for s in seqs] == [0, 1]
    first = write_event_file(seqs, tmp_path / "one.jsonl")
    again = parse_event_file(first)
    assert [s.shift_applied for s in again] == [0, 1]
    assert again == seqs
    second = write_event_file([normalize_transposition(s) for s in again], tmp_path / "two.jsonl")
    assert first.read_bytes() == second.read_bytes()


def test_split_folds_keeps_pieces_together():
    seqs = [sequence([[0]], piece=f"p{i}") for i in range(10)] + [sequence([[7]], piece="p3")]
    train, dev, test = split_folds(seqs, n_folds=5, test_fold=1, seed=4)
    assert len(train) + len(dev) + len(test) == len(seqs)
    pieces = [{s.piece_id for s in part} for part in (train, dev, test)]
    assert not (pieces[0] & pieces[1] or pieces[0] & pieces[2] or pieces[1] & pieces[2])
    assert len(pieces[2]) == 2 and len(pieces[1]) == 2
    assert split_folds(seqs, 5, 1, 4) == (train, dev, test)
    with pytest.raises(ContractError):
        split_folds(seqs, n_folds=2)
    with pytest.raises(ContractError):
        split_folds(seqs, n_folds=5, test_fold=5)


def test_gold_aligns_with_segments(tmp_path):
    events = [{"piece": "p", "frame": i, "pcs": [0, 4, 7], "fermata": i == 1} for i in range(3)]
    gold = [
        {"piece": "p", "frame": 0, "labels": [{"chord": "C", "key": "C", "rn": "I"}]},
        {"piece": "p", "frame": 1, "labels": [{"chord": "Am"}, {"chord": "F#m7", "key": "e"}]},
        {"piece": "p", "frame": 2, "labels": [{"root": "Eb", "quality": "M"}]},
    ]
    seqs = parse_event_file(write_lines(tmp_path / "events.jsonl", events))
    annotations = parse_gold_file(write_lines(tmp_path / "gold.jsonl", gold), seqs)
    assert [(a.segment_index, len(a)) for a in annotations] == [(0, 2), (1, 1)]
    first, second = annotations[0].frames
    assert (first.root_pc, first.quality, first.key_label, first.degree_label) == (0, 0, "C", "I")
    assert (second.root_pc, second.quality, second.key_label) == (6, QUALITY_INDEX["m7"], "e")
    assert annotations[1].frames[0].root_pc == 3


def test_gold_length_mismatch(tmp_path):
    events = [{"piece": "p", "frame": i, "pcs": [0]} for i in range(3)]
    gold = [{"piece": "p", "frame": i, "labels": [{"chord": "C"}]} for i in range(2)]
    seqs = parse_event_file(write_lines(tmp_path / "events.jsonl", events))
    with pytest.raises(AlignmentError) as info:
        parse_gold_file(write_lines(tmp_path / "gold.jsonl", gold), seqs)
    assert info.value.piece_id == "p"
    with pytest.raises(AlignmentError):
        parse_gold_file(write_lines(tmp_path / "other.jsonl", [{"piece": "q", "frame": 0, "labels": [{}]}]), seqs)
