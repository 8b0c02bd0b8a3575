"""Chord names, Roman numerals and per-frame analysis records from a decoded path."""

import csv
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from harmonia.distributions import DistributionSet, emission_log_table
from harmonia.exceptions import ContractError
from harmonia.hsmm import StatePath, viterbi
from harmonia.model import HarmonicModel
from harmonia.score_ingest import EventSequence
from harmonia.store import Checkpoint
from harmonia.theory import (
    CHORD_SUFFIX,
    DIMINISHED_QUALITIES,
    MAJOR_QUALITIES,
    N_PITCH_CLASSES,
    NOTE_NAMES,
    QUALITY_INDEX,
    QUALITY_LABELS,
    REST_LABEL,
    REST_ROOT,
    SEVENTH_QUALITIES,
    key_parts,
)
from harmonia.tonality import tonic_table

logger = logging.getLogger(__name__)

DEGREES: Dict[int, str] = {
    0: "I", 1: "II", 2: "II", 3: "III", 4: "III", 5: "IV",
    6: "IV", 7: "V", 8: "VI", 9: "VI", 10: "VII", 11: "VII",
}

# (root - bass) mod 12 -> figure; missing offsets are root position
INVERSIONS: Dict[str, Dict[int, str]] = {
    "M": {5: "6/4", 8: "6"},
    "m": {5: "6/4", 9: "6"},
    "d": {6: "6/4", 9: "6"},
    "7": {2: "2", 5: "4/3", 8: "6/5"},
    "M7": {1: "2", 5: "4/3", 8: "6/5"},
    "m7": {2: "2", 5: "4/3", 9: "6/5"},
    "d7": {3: "2", 6: "4/3", 9: "6/5"},
}

# display anchors when no learned tonic table is supplied
DEFAULT_TONICS: Dict[int, Tuple[int, str]] = {0: (0, "major"), 1: (0, "minor")}

QualityLike = Union[int, str]


def _quality_label(quality: QualityLike) -> str:
    label = QUALITY_LABELS[quality] if isinstance(quality, (int, np.integer)) else quality
    if label not in QUALITY_INDEX:
        raise ContractError(f"unknown chord quality {quality!r}")
    return label


def quality_argmax(x: Sequence[float], key: int, root: int, dist: DistributionSet) -> Optional[int]:
    """argmax_q p(x | q, r) p(q | k, r); smallest index on ties, None for Rest."""
    if root == REST_ROOT:
        return None
    try:
        row = dist.key_ids.index(key)
    except ValueError as err:
        raise ContractError(f"key {key} is not part of this distribution set") from err
    obs = np.asarray(x, dtype=np.float64).reshape(1, N_PITCH_CLASSES)
    scores = emission_log_table(obs, dist.emission_logits)[0, root] + dist.log_quality.data[row, root]
    return int(np.argmax(scores))


def to_degree(root_pc: int, key: int, quality: QualityLike, tonic_offset: int = 0) -> str:
    """Degree of ``root_pc`` in ``key``; uppercase for major-third qualities."""
    _, shift = key_parts(key)
    numeral = DEGREES[(root_pc - shift - tonic_offset) % N_PITCH_CLASSES]
    return numeral if _quality_label(quality) in MAJOR_QUALITIES else numeral.lower()


def inversion_for_offset(quality: QualityLike, offset: int) -> str:
    return INVERSIONS[_quality_label(quality)].get(offset % N_PITCH_CLASSES, "")


def to_inversion(bass_pc: Optional[int], root_pc: int, quality: QualityLike) -> str:
    if bass_pc is None:
        return ""
    return inversion_for_offset(quality, root_pc - bass_pc)


def to_chord_name(root_pc: Optional[int], quality: Optional[QualityLike]) -> str:
    if root_pc is None or root_pc == REST_ROOT or quality is None:
        return REST_LABEL
    return NOTE_NAMES[root_pc] + CHORD_SUFFIX[_quality_label(quality)]


def to_roman(degree: str, quality: QualityLike, inversion: str = "", diminished_marker: bool = True) -> str:
    label = _quality_label(quality)
    marker = "o" if diminished_marker and label in DIMINISHED_QUALITIES else ""
    figure = inversion or ("7" if label in SEVENTH_QUALITIES else "")
    return f"{degree}{marker}{figure}"


def key_name(key: int, tonics: Mapping[int, Tuple[int, str]]) -> Tuple[int, bool, str]:
    """(tonic pc, is_minor, display name) of a global key id under a per-mode tonic table."""
    mode, shift = key_parts(key)
    tonic, mode_class = tonics[mode]
    pc = (tonic + shift) % N_PITCH_CLASSES
    minor = mode_class == "minor"
    return pc, minor, NOTE_NAMES[pc] + ("m" if minor else "")


@dataclass(frozen=True)
class AnalysisRecord:
    piece_id: str
    segment_index: int
    frame: int
    segment: int
    key: int
    mode: int
    shift: int
    key_tonic_pc: int
    key_is_minor: bool
    key_name: str
    root_pc: Optional[int]
    quality: str
    bass_pc: Optional[int] = None
    degree: str = ""
    inversion: str = ""
    chord_name: str = REST_LABEL
    roman: str = ""

    @property
    def is_rest(self) -> bool:
        return self.root_pc is None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def analyze_with_distribution(
    seq: EventSequence,
    dist: DistributionSet,
    tonics: Optional[Mapping[int, Tuple[int, str]]] = None,
    tonic_offset: bool = False,
    diminished_marker: bool = True,
) -> List[AnalysisRecord]:
    tonics = tonics or DEFAULT_TONICS
    path = viterbi(seq, dist)
    obs = seq.observations
    qualities = []
    for t, (key, root) in enumerate(zip(path.frame_keys(), path.frame_roots())):
        qualities.append(quality_argmax(obs[t], key, root, dist))
    path = path.with_qualities(qualities)
    return records_from_path(seq, path, tonics, tonic_offset, diminished_marker)


def records_from_path(
    seq: EventSequence,
    path: StatePath,
    tonics: Mapping[int, Tuple[int, str]],
    tonic_offset: bool = False,
    diminished_marker: bool = True,
) -> List[AnalysisRecord]:
    if len(path) != len(seq):
        raise ContractError(f"path covers {len(path)} frames, sequence has {len(seq)}")
    records = []
    t = 0
    for index, segment in enumerate(path.segments):
        mode, shift = key_parts(segment.key)
        tonic_pc, minor, name = key_name(segment.key, tonics)
        for _ in range(segment.length):
            frame = seq.frames[t]
            common = dict(
                piece_id=seq.piece_id, segment_index=seq.segment_index, frame=frame.onset_index,
                segment=index, key=segment.key, mode=mode, shift=shift, key_tonic_pc=tonic_pc,
                key_is_minor=minor, key_name=name, bass_pc=frame.bass_pc,
            )
            quality = path.qualities[t] if path.qualities else None
            if segment.root == REST_ROOT or quality is None:
                records.append(AnalysisRecord(root_pc=None, quality=REST_LABEL, **common))
            else:
                offset = tonics[mode][0] if tonic_offset else 0
                degree = to_degree(segment.root, segment.key, quality, offset)
                inversion = to_inversion(frame.bass_pc, segment.root, quality)
                records.append(AnalysisRecord(
                    root_pc=segment.root,
                    quality=QUALITY_LABELS[quality],
                    degree=degree,
                    inversion=inversion,
                    chord_name=to_chord_name(segment.root, quality),
                    roman=to_roman(degree, quality, inversion, diminished_marker),
                    **common,
                ))
            t += 1
    return records


def _model(source: Union[HarmonicModel, Checkpoint]) -> HarmonicModel:
    return source if isinstance(source, HarmonicModel) else HarmonicModel.from_checkpoint(source)


def analyze(
    seq: EventSequence,
    source: Union[HarmonicModel, Checkpoint],
    tonics: Optional[Mapping[int, Tuple[int, str]]] = None,
    tonic_offset: bool = False,
    diminished_marker: bool = True,
) -> List[AnalysisRecord]:
    """Decode ``seq`` under a trained model and label every frame."""
    model = _model(source)
    if tonics is None:
        tonics = tonic_table(model)
    return analyze_with_distribution(seq, model.distribution_set(seq), tonics, tonic_offset, diminished_marker)


def analyze_corpus(
    sequences: Sequence[EventSequence],
    source: Union[HarmonicModel, Checkpoint],
    tonic_offset: bool = False,
    diminished_marker: bool = True,
    threads: int = 1,
) -> List[List[AnalysisRecord]]:
    """Analyze every sequence; output order follows ``sequences`` whatever the thread count."""
    model = _model(source)
    tonics = tonic_table(model)
    tables = model.tables()

    def run(seq: EventSequence) -> List[AnalysisRecord]:
        dist = model.distribution_set(seq, tables)
        return analyze_with_distribution(seq, dist, tonics, tonic_offset, diminished_marker)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, sequences))
    else:
        results = [run(seq) for seq in sequences]
    logger.info(f"Analyzed {len(sequences)} sequences ({sum(len(s) for s in sequences)} frames)")
    return results


# segment-level view


@dataclass(frozen=True)
class SegmentSummary:
    start: int
    length: int
    key_name: str
    root_pc: Optional[int]
    quality: str
    chord_name: str
    roman: str


def segment_report(records: Sequence[AnalysisRecord], diminished_marker: bool = True) -> List[SegmentSummary]:
    """Collapse frame records into decoded segments, each with its most frequent quality."""
    groups: Dict[int, List[AnalysisRecord]] = {}
    for record in records:
        groups.setdefault(record.segment, []).append(record)
    summaries = []
    for segment in sorted(groups):
        members = groups[segment]
        first = members[0]
        if first.is_rest:
            summaries.append(SegmentSummary(first.frame, len(members), first.key_name, None, REST_LABEL,
                                            REST_LABEL, REST_LABEL))
            continue
        counts = Counter(QUALITY_INDEX[r.quality] for r in members if not r.is_rest)
        quality = min(counts, key=lambda q: (-counts[q], q))
        numeral = first.degree.upper()
        degree = numeral if QUALITY_LABELS[quality] in MAJOR_QUALITIES else numeral.lower()
        inversion = to_inversion(first.bass_pc, first.root_pc, quality)  # type: ignore[arg-type]
        summaries.append(SegmentSummary(
            first.frame, len(members), first.key_name, first.root_pc, QUALITY_LABELS[quality],
            to_chord_name(first.root_pc, quality), to_roman(degree, quality, inversion, diminished_marker),
        ))
    return summaries


def degree_string(records: Sequence[AnalysisRecord], diminished_marker: bool = True) -> str:
    return " ".join(s.roman for s in segment_report(records, diminished_marker))


# output files


def write_analysis_jsonl(results: Iterable[Sequence[AnalysisRecord]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as outfile:
        for records in results:
            for record in records:
                outfile.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    return path


def read_analysis_jsonl(path: Union[str, Path]) -> List[AnalysisRecord]:
    records = []
    with open(path) as infile:
        for line in infile:
            if line.strip():
                records.append(AnalysisRecord(**json.loads(line)))
    return records


def write_analysis_tsv(results: Iterable[Sequence[AnalysisRecord]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as outfile:
        writer = csv.writer(outfile, delimiter="\t")
        writer.writerow(["piece", "segment", "frame", "key", "chord", "rn"])
        for records in results:
            for r in records:
                writer.writerow([r.piece_id, r.segment_index, r.frame, r.key_name, r.chord_name,
                                 r.roman or REST_LABEL])
    return path
