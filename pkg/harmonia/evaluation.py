"""Frame-level accuracy of predicted analyses against gold annotations.

Roman-numeral labels are compared componentwise: "Root RN" needs the key and
the scale degree, "Full RN" additionally the numeral case and the figure
(inversion, or 7 for a root-position seventh).
"""

import logging
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from harmonia.analysis import AnalysisRecord
from harmonia.exceptions import AlignmentError, ContractError, GoldLabelError
from harmonia.score_ingest import GoldAnnotation, GoldLabel
from harmonia.theory import QUALITY_INDEX, parse_key_label

logger = logging.getLogger(__name__)

INTERPRETATION = "Full RN = key + degree + case + figure; Root RN = key + degree"

_RN_RE = re.compile(
    r"^(?P<accidental>[b#]*)(?P<numeral>VII|VI|V|IV|III|II|I|vii|vi|v|iv|iii|ii|i)"
    r"(?P<marker>[oø+]?)(?P<figure>7|6/5|65|4/3|43|6/4|64|6|4/2|42|2)?(?P<applied>/.*)?$"
)
_FIGURES = {"65": "6/5", "43": "4/3", "64": "6/4", "42": "2", "4/2": "2"}


@dataclass(frozen=True)
class RomanNumeral:
    degree: str  # uppercase numeral
    major_case: bool
    figure: str


def parse_roman(token: str) -> RomanNumeral:
    match = _RN_RE.match(token.strip())
    if not match:
        raise GoldLabelError(token, "unparseable Roman numeral")
    numeral = match.group("numeral")
    figure = match.group("figure") or ""
    return RomanNumeral(numeral.upper(), numeral.isupper(), _FIGURES.get(figure, figure))


def _predicted_roman(record: AnalysisRecord) -> RomanNumeral:
    figure = record.roman[len(record.degree):].lstrip("o")
    return RomanNumeral(record.degree.upper(), record.degree.isupper(), figure)


@dataclass
class Counts:
    n: int = 0
    full_chord: int = 0
    root_chord: int = 0
    key: int = 0
    full_rn: int = 0
    root_rn: int = 0

    def add(self, other: "Counts") -> None:
        for name in ("n", "full_chord", "root_chord", "key", "full_rn", "root_rn"):
            setattr(self, name, getattr(self, name) + getattr(other, name))


@dataclass
class EvalReport:
    kind: str
    n_frames: int
    full_chord_acc: Optional[float] = None
    root_chord_acc: Optional[float] = None
    key_acc: Optional[float] = None
    full_rn_acc: Optional[float] = None
    root_rn_acc: Optional[float] = None
    per_piece: Dict[str, "EvalReport"] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, kind: str, counts: Counts) -> "EvalReport":
        if counts.n == 0:
            raise ContractError("no frames to evaluate")

        def acc(hits: int) -> float:
            return hits / counts.n

        if kind == "chord":
            return cls(kind, counts.n, full_chord_acc=acc(counts.full_chord), root_chord_acc=acc(counts.root_chord))
        return cls(kind, counts.n, key_acc=acc(counts.key), full_rn_acc=acc(counts.full_rn),
                   root_rn_acc=acc(counts.root_rn))

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"kind": self.kind, "n_frames": self.n_frames}
        for name in ("full_chord_acc", "root_chord_acc", "key_acc", "full_rn_acc", "root_rn_acc"):
            if getattr(self, name) is not None:
                payload[name] = getattr(self, name)
        if self.kind == "roman":
            payload["interpretation"] = INTERPRETATION
        if self.per_piece:
            payload["per_piece"] = {k: v.to_dict() for k, v in self.per_piece.items()}
        return payload

    def table(self) -> str:
        names = [n for n in ("full_chord_acc", "root_chord_acc", "key_acc", "full_rn_acc", "root_rn_acc")
                 if getattr(self, n) is not None]
        header = f"{'piece':<24}{'frames':>8}" + "".join(f"{n:>16}" for n in names)
        rows = [header, "-" * len(header)]
        for piece, report in list(self.per_piece.items()) + [("TOTAL", self)]:
            rows.append(f"{piece:<24}{report.n_frames:>8}"
                        + "".join(f"{getattr(report, n) * 100:>15.1f}%" for n in names))
        return "\n".join(rows)


def _check_aligned(pred: Sequence[AnalysisRecord], gold: GoldAnnotation) -> None:
    if len(pred) != len(gold):
        raise AlignmentError(
            f"{len(pred)} predicted frames against {len(gold)} gold frames for {gold.piece_id!r}", gold.piece_id
        )


def chord_counts(pred: Sequence[AnalysisRecord], gold: GoldAnnotation) -> Counts:
    _check_aligned(pred, gold)
    counts = Counts(n=len(pred))
    for record, label in zip(pred, gold.frames):
        quality = None if record.is_rest else QUALITY_INDEX[record.quality]
        if record.root_pc == label.root_pc:
            counts.root_chord += 1
            if quality == label.quality:
                counts.full_chord += 1
    return counts


def _gold_key(label: GoldLabel) -> Tuple[int, bool]:
    if not label.key_label:
        raise GoldLabelError("<missing>", "gold frame has no key label")
    return parse_key_label(label.key_label)


def roman_counts(pred: Sequence[AnalysisRecord], gold: GoldAnnotation) -> Counts:
    _check_aligned(pred, gold)
    counts = Counts(n=len(pred))
    for record, label in zip(pred, gold.frames):
        tonic, minor = _gold_key(label)
        if (record.key_tonic_pc, record.key_is_minor) != (tonic, minor):
            continue
        counts.key += 1
        if record.is_rest or not label.degree_label:
            continue
        try:
            expected = parse_roman(label.degree_label)
        except GoldLabelError:
            logger.warning(f"Unparseable Roman numeral {label.degree_label!r} in {gold.piece_id!r}; counted as a miss")
            continue
        predicted = _predicted_roman(record)
        if predicted.degree != expected.degree:
            continue
        counts.root_rn += 1
        if predicted.major_case == expected.major_case and predicted.figure == expected.figure:
            counts.full_rn += 1
    return counts


def evaluate_chords(pred: Sequence[AnalysisRecord], gold: GoldAnnotation) -> EvalReport:
    return evaluate_corpus([(pred, gold)], "chord")


def evaluate_roman(pred: Sequence[AnalysisRecord], gold: GoldAnnotation) -> EvalReport:
    return evaluate_corpus([(pred, gold)], "roman")


def evaluate_corpus(
    pairs: Sequence[Tuple[Sequence[AnalysisRecord], GoldAnnotation]], kind: str = "chord"
) -> EvalReport:
    """Count-weighted accuracies over all pairs, with one sub-report per piece."""
    if kind not in ("chord", "roman"):
        raise ContractError(f"kind must be 'chord' or 'roman', got {kind!r}")
    counter = chord_counts if kind == "chord" else roman_counts
    total = Counts()
    by_piece: "OrderedDict[str, Counts]" = OrderedDict()
    for pred, gold in pairs:
        counts = counter(pred, gold)
        total.add(counts)
        by_piece.setdefault(gold.piece_id, Counts()).add(counts)
    report = EvalReport.from_counts(kind, total)
    report.per_piece = {piece: EvalReport.from_counts(kind, c) for piece, c in by_piece.items()}
    return report


def align_predictions(
    records: Sequence[AnalysisRecord], gold_labels: Mapping[str, Mapping[int, GoldLabel]]
) -> List[Tuple[List[AnalysisRecord], GoldAnnotation]]:
    """Group prediction records by sequence and pair each group with the gold labels of its frames."""
    groups: "OrderedDict[Tuple[str, int], List[AnalysisRecord]]" = OrderedDict()
    for record in records:
        groups.setdefault((record.piece_id, record.segment_index), []).append(record)
    pairs = []
    for (piece, segment_index), members in groups.items():
        labels = gold_labels.get(piece)
        if labels is None:
            raise AlignmentError(f"no gold labels for piece {piece!r}", piece)
        missing = [r.frame for r in members if r.frame not in labels]
        if missing:
            raise AlignmentError(f"gold for piece {piece!r} lacks frame {missing[0]}", piece)
        pairs.append((members, GoldAnnotation(piece, segment_index, tuple(labels[r.frame] for r in members))))
    return pairs
