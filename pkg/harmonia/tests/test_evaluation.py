"""Frame accuracies against gold labels."""

import logging

import numpy as np
import pytest

from harmonia.analysis import AnalysisRecord
from harmonia.evaluation import (
    INTERPRETATION,
    align_predictions,
    evaluate_chords,
    evaluate_corpus,
    evaluate_roman,
    parse_roman,
)
from harmonia.exceptions import AlignmentError, ContractError, GoldLabelError
from harmonia.score_ingest import GoldAnnotation, GoldLabel
from harmonia.theory import QUALITY_INDEX, QUALITY_LABELS


def record(frame, root, quality, degree="", roman="", tonic=0, minor=False, piece="p"):
    return AnalysisRecord(
        piece_id=piece, segment_index=0, frame=frame, segment=0, key=12 if minor else 0,
        mode=int(minor), shift=0, key_tonic_pc=tonic, key_is_minor=minor, key_name="C",
        root_pc=root, quality=quality if root is not None else "Rest", degree=degree, roman=roman,
    )


def gold(labels, piece="p"):
    return GoldAnnotation(piece, 0, tuple(labels))


def test_chord_accuracies():
    pred = ([record(i, 0, "M") for i in range(7)] + [record(7, 0, "m"), record(8, 0, "m")]
            + [record(9, 5, "M")])
    report = evaluate_chords(pred, gold([GoldLabel(root_pc=0, quality=0)] * 10))
    assert report.n_frames == 10
    assert report.full_chord_acc == pytest.approx(0.7)
    assert report.root_chord_acc == pytest.approx(0.9)
    assert report.key_acc is None


def test_rest_matches_unlabelled_gold():
    pred = [record(0, None, None), record(1, 0, "M")]
    report = evaluate_chords(pred, gold([GoldLabel(), GoldLabel()]))
    assert report.full_chord_acc == pytest.approx(0.5)


def test_roman_accuracies():
    pred = (
        [record(i, 0, "M", "I", "I") for i in range(5)]
        + [record(5, 0, "M", "I", "I6"), record(6, 0, "m", "i", "i"), record(7, 7, "M", "V", "V")]
        + [record(8, 0, "M", "I", "I", tonic=9, minor=True), record(9, 0, "M", "I", "I", tonic=9, minor=True)]
    )
    report = evaluate_roman(pred, gold([GoldLabel(key_label="C", degree_label="I")] * 10))
    assert report.key_acc == pytest.approx(0.8)
    assert report.root_rn_acc == pytest.approx(0.7)
    assert report.full_rn_acc == pytest.approx(0.5)
    assert report.to_dict()["interpretation"] == INTERPRETATION


def test_roman_figures_are_normalized():
    pred = [record(0, 7, "7", "V", "V6/5"), record(1, 11, "d7", "vii", "viio7"), record(2, 2, "m7", "ii", "ii4/3")]
    labels = [GoldLabel("C", "V65"), GoldLabel("C", "viio7"), GoldLabel("C", "ii43")]
    assert evaluate_roman(pred, gold(labels)).full_rn_acc == pytest.approx(1.0)


def test_minor_gold_key():
    pred = [record(0, 9, "m", "i", "i", tonic=9, minor=True)]
    assert evaluate_roman(pred, gold([GoldLabel("a", "i")])).full_rn_acc == 1.0
    assert evaluate_roman(pred, gold([GoldLabel("Am", "i")])).key_acc == 1.0
    assert evaluate_roman(pred, gold([GoldLabel("A", "I")])).key_acc == 0.0


@pytest.mark.parametrize(
    "token, expected",
    [
        ("V65", ("V", True, "6/5")),
        ("viiø7", ("VII", False, "7")),
        ("bVI", ("VI", True, "")),
        ("V7/V", ("V", True, "7")),
        ("iv64", ("IV", False, "6/4")),
        ("V42", ("V", True, "2")),
    ],
)
def test_parse_roman(token, expected):
    parsed = parse_roman(token)
    assert (parsed.degree, parsed.major_case, parsed.figure) == expected


def test_unparseable_tokens():
    with pytest.raises(GoldLabelError):
        parse_roman("Ger6")
    with pytest.raises(GoldLabelError):
        evaluate_roman([record(0, 0, "M", "I", "I")], gold([GoldLabel(None, "I")]))
    with pytest.raises(GoldLabelError):
        evaluate_roman([record(0, 0, "M", "I", "I")], gold([GoldLabel("H#", "I")]))


def test_unparseable_gold_numeral_is_a_miss(caplog):
    pred = [record(0, 0, "M", "I", "I"), record(1, 0, "M", "I", "I")]
    with caplog.at_level(logging.WARNING):
        report = evaluate_roman(pred, gold([GoldLabel("C", "Ger6"), GoldLabel("C", "I")]))
    assert report.key_acc == 1.0
    assert report.full_rn_acc == pytest.approx(0.5)
    assert "Ger6" in caplog.text


def test_length_mismatch():
    with pytest.raises(AlignmentError):
        evaluate_chords([record(0, 0, "M")], gold([GoldLabel(root_pc=0, quality=0)] * 2))
    with pytest.raises(ContractError):
        evaluate_corpus([], "chord")
    with pytest.raises(ContractError):
        evaluate_corpus([([record(0, 0, "M")], gold([GoldLabel()]))], "key")


def random_pairs(rng, n_pieces=6):
    pairs = []
    for p in range(n_pieces):
        piece = f"piece{p}"
        preds, labels = [], []
        for t in range(int(rng.integers(3, 12))):
            root, q = int(rng.integers(0, 3)), int(rng.integers(0, 2))
            minor = bool(rng.integers(0, 2))
            degree = "I" if q == 0 else "i"
            figure = ["", "6"][int(rng.integers(0, 2))]
            preds.append(record(t, root, QUALITY_LABELS[q], degree, degree + figure, minor=minor, piece=piece))
            labels.append(GoldLabel(
                key_label=["C", "c"][int(rng.integers(0, 2))],
                degree_label=["I", "i", "I6", "V"][int(rng.integers(0, 4))],
                root_pc=int(rng.integers(0, 3)),
                quality=int(rng.integers(0, 2)),
            ))
        pairs.append((preds, gold(labels, piece)))
    return pairs


def test_accuracies_nest():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pairs = random_pairs(rng)
        chord = evaluate_corpus(pairs, "chord")
        roman = evaluate_corpus(pairs, "roman")
        assert chord.full_chord_acc <= chord.root_chord_acc
        assert roman.full_rn_acc <= roman.root_rn_acc <= roman.key_acc


def test_totals_ignore_piece_order():
    pairs = random_pairs(np.random.default_rng(1))
    forward = evaluate_corpus(pairs, "roman")
    backward = evaluate_corpus(pairs[::-1], "roman")
    assert forward.to_dict()["root_rn_acc"] == backward.to_dict()["root_rn_acc"]
    assert forward.n_frames == sum(len(p) for p, _ in pairs)
    assert set(forward.per_piece) == {g.piece_id for _, g in pairs}
    assert "TOTAL" in forward.table()


def test_align_predictions_pairs_frames_by_onset():
    records = [record(t, 0, "M", piece="a") for t in (4, 5)] + [record(0, 0, "M", piece="b")]
    labels = {"a": {5: GoldLabel(root_pc=2), 4: GoldLabel(root_pc=0)}, "b": {0: GoldLabel(root_pc=0)}}
    pairs = align_predictions(records, labels)
    assert [g.piece_id for _, g in pairs] == ["a", "b"]
    assert [label.root_pc for label in pairs[0][1].frames] == [0, 2]
    with pytest.raises(AlignmentError):
        align_predictions(records, {"a": labels["a"]})
    with pytest.raises(AlignmentError):
        align_predictions(records, {"a": {4: GoldLabel()}, "b": labels["b"]})


def test_quality_index_covers_labels():
    assert [QUALITY_INDEX[q] for q in QUALITY_LABELS] == list(range(7))
